#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace atoms {

using Shape = std::vector<int>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Called during backward with this node's gradient; accumulates into parents.
using BackwardFn = std::function<void(const std::vector<float>&)>;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;   // contiguous, row-major
    std::vector<float> grad;   // empty until backward touches the node
    bool requires_grad = false;
    uint64_t seq = 0;          // creation order; backward replays by decreasing seq
    std::vector<std::shared_ptr<TensorImpl>> parents;
    BackwardFn backward_fn;
};

// Dense row-major float32 tensor with reverse-mode differentiation.
// Handles are shallow: copies share the underlying node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor identity(int n);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int ndim() const;
    int dim(int i) const;
    int64_t numel() const;
    int rows() const;  // 2-d only
    int cols() const;  // 2-d only

    std::vector<float>& data();
    const std::vector<float>& data() const;
    float at(int r, int c) const;
    float& at(int r, int c);
    float value() const;  // single-element tensors

    bool requires_grad() const;
    void set_requires_grad(bool v);
    bool has_grad() const;
    const std::vector<float>& grad() const;
    std::vector<float>& grad_buffer();  // allocates zeros when absent
    void zero_grad();
    void drop_grad();

    // Deep copy with no tape history and no gradient.
    Tensor detached_copy() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

    // Adds g into this node's gradient buffer; no-op when the node does not
    // require gradients.
    void accumulate_grad(const std::vector<float>& g);

    static Tensor adopt(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

namespace tape {

// Creates an op output node. Wires parents and a sequence number when any
// input participates in differentiation, and verifies that every produced
// value is finite (non-finite output raises NumericError naming the op).
Tensor new_node(const char* op, const std::vector<Tensor>& inputs, Shape shape,
                std::vector<float> data);

void set_backward(Tensor& node, BackwardFn fn);

}  // namespace tape

// ---- elementwise and structural ops ----
Tensor add(const Tensor& a, const Tensor& b);        // equal shapes, or b a [1 x C] row
Tensor subtract(const Tensor& a, const Tensor& b);   // same shape rules as add
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor col_slice(const Tensor& a, int c0, int c1);   // columns [c0, c1)
Tensor row_slice(const Tensor& a, int r0, int r1);   // rows [r0, r1)

// ---- reductions ----
Tensor sum(const Tensor& a);       // scalar
Tensor mean(const Tensor& a);      // scalar
Tensor row_sum(const Tensor& a);   // [N x C] -> [N x 1]
Tensor col_mean(const Tensor& a);  // [N x C] -> [1 x C]

// ---- nonlinear / nn ops ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exponential(const Tensor& x);
Tensor logarithm(const Tensor& x);  // input clamped at 1e-12

// z = mu + exp(0.5 * logvar) * eps, with eps a fixed noise tensor.
Tensor gaussian_reparam(const Tensor& mu, const Tensor& logvar, const Tensor& eps);

// Populates gradients of every requires_grad ancestor of a scalar loss.
// Gradients in the reachable set are overwritten unless accumulate is true.
void backward(const Tensor& loss, bool accumulate = false);

// ---- initialization helpers ----
Tensor randn(const Shape& shape, Rng& rng, float stddev, bool requires_grad = false);
Tensor rand_uniform(const Shape& shape, Rng& rng, float lo, float hi, bool requires_grad = false);

// ---- serialization (binary, magic "ATNS", little-endian) ----
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace atoms
