#include "core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace atoms {

int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimError("tensor dimensions must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        s += std::to_string(shape[i]);
        if (i + 1 < shape.size()) s += "x";
    }
    return s + "]";
}

namespace {

std::atomic<uint64_t> g_seq{1};

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<float> data, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    int64_t n = numel_of(shape);
    if (n != static_cast<int64_t>(data.size()))
        throw DimError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    impl->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return impl;
}

void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw DimError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
}

void check_finite(const char* op, const std::vector<float>& v) {
    for (float x : v) {
        if (!std::isfinite(x))
            throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = numel_of(shape);
    return Tensor(make_impl(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f),
                            requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    int64_t n = numel_of(shape);
    return Tensor(make_impl(std::move(shape), std::vector<float>(static_cast<size_t>(n), value),
                            requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return Tensor(make_impl({1}, {value}, requires_grad));
}

Tensor Tensor::identity(int n) {
    std::vector<float> d(static_cast<size_t>(n) * n, 0.0f);
    for (int i = 0; i < n; ++i) d[static_cast<size_t>(i) * n + i] = 1.0f;
    return Tensor(make_impl({n, n}, std::move(d), false));
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }

int Tensor::rows() const {
    check_2d(*this, "rows");
    return impl_->shape[0];
}

int Tensor::cols() const {
    check_2d(*this, "cols");
    return impl_->shape[1];
}

std::vector<float>& Tensor::data() { return impl_->data; }
const std::vector<float>& Tensor::data() const { return impl_->data; }

float Tensor::at(int r, int c) const {
    check_2d(*this, "at");
    return impl_->data[static_cast<size_t>(r) * impl_->shape[1] + c];
}

float& Tensor::at(int r, int c) {
    check_2d(*this, "at");
    return impl_->data[static_cast<size_t>(r) * impl_->shape[1] + c];
}

float Tensor::value() const {
    if (numel() != 1) throw ContractError("value(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    if (!v) impl_->grad.clear();
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

const std::vector<float>& Tensor::grad() const {
    if (impl_->grad.empty()) throw ContractError("grad(): no gradient present");
    return impl_->grad;
}

std::vector<float>& Tensor::grad_buffer() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

void Tensor::drop_grad() { impl_->grad.clear(); }

Tensor Tensor::detached_copy() const {
    return Tensor(make_impl(impl_->shape, impl_->data, false));
}

void Tensor::accumulate_grad(const std::vector<float>& g) {
    if (!impl_->requires_grad) return;
    auto& buf = grad_buffer();
    for (size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

// ---- node construction ----

namespace tape {

Tensor new_node(const char* op, const std::vector<Tensor>& inputs, Shape shape,
                std::vector<float> data) {
    check_finite(op, data);
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad();
    auto impl = make_impl(std::move(shape), std::move(data), rg);
    if (rg) {
        impl->parents.reserve(inputs.size());
        for (const auto& in : inputs) impl->parents.push_back(in.impl_ptr());
    }
    return Tensor::adopt(std::move(impl));
}

void set_backward(Tensor& node, BackwardFn fn) {
    if (node.requires_grad()) node.impl()->backward_fn = std::move(fn);
}

}  // namespace tape

// ---- ops ----

namespace {

enum class BroadcastMode { Same, Row };

BroadcastMode binary_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return BroadcastMode::Same;
    if (a.ndim() == 2 && b.ndim() == 2 && b.dim(0) == 1 && b.dim(1) == a.dim(1))
        return BroadcastMode::Row;
    throw DimError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    BroadcastMode mode = binary_mode(a, b, "add");
    std::vector<float> out(a.data());
    if (mode == BroadcastMode::Same) {
        const auto& bd = b.data();
        for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    } else {
        int n = a.dim(0), c = a.dim(1);
        const auto& bd = b.data();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += bd[static_cast<size_t>(j)];
    }
    Tensor y = tape::new_node("add", {a, b}, a.shape(), std::move(out));
    Tensor a_ = a, b_ = b;
    tape::set_backward(y, [a_, b_, mode](const std::vector<float>& g) mutable {
        a_.accumulate_grad(g);
        if (mode == BroadcastMode::Same) {
            b_.accumulate_grad(g);
        } else if (b_.requires_grad()) {
            int n = a_.dim(0), c = a_.dim(1);
            std::vector<float> gb(static_cast<size_t>(c), 0.0f);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * c + j];
            b_.accumulate_grad(gb);
        }
    });
    return y;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    BroadcastMode mode = binary_mode(a, b, "subtract");
    std::vector<float> out(a.data());
    if (mode == BroadcastMode::Same) {
        const auto& bd = b.data();
        for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    } else {
        int n = a.dim(0), c = a.dim(1);
        const auto& bd = b.data();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] -= bd[static_cast<size_t>(j)];
    }
    Tensor y = tape::new_node("subtract", {a, b}, a.shape(), std::move(out));
    Tensor a_ = a, b_ = b;
    tape::set_backward(y, [a_, b_, mode](const std::vector<float>& g) mutable {
        a_.accumulate_grad(g);
        if (!b_.requires_grad()) return;
        if (mode == BroadcastMode::Same) {
            std::vector<float> gb(g.size());
            for (size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
            b_.accumulate_grad(gb);
        } else {
            int n = a_.dim(0), c = a_.dim(1);
            std::vector<float> gb(static_cast<size_t>(c), 0.0f);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) gb[static_cast<size_t>(j)] -= g[static_cast<size_t>(i) * c + j];
            b_.accumulate_grad(gb);
        }
    });
    return y;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimError("hadamard: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<float> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    Tensor y = tape::new_node("hadamard", {a, b}, a.shape(), std::move(out));
    Tensor a_ = a, b_ = b;
    tape::set_backward(y, [a_, b_](const std::vector<float>& g) mutable {
        if (a_.requires_grad()) {
            std::vector<float> ga(g.size());
            const auto& bd = b_.data();
            for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bd[i];
            a_.accumulate_grad(ga);
        }
        if (b_.requires_grad()) {
            std::vector<float> gb(g.size());
            const auto& ad = a_.data();
            for (size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * ad[i];
            b_.accumulate_grad(gb);
        }
    });
    return y;
}

Tensor scale(const Tensor& a, float s) {
    std::vector<float> out(a.data());
    for (auto& x : out) x *= s;
    Tensor y = tape::new_node("scale", {a}, a.shape(), std::move(out));
    Tensor a_ = a;
    tape::set_backward(y, [a_, s](const std::vector<float>& g) mutable {
        std::vector<float> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor add_scalar(const Tensor& a, float s) {
    std::vector<float> out(a.data());
    for (auto& x : out) x += s;
    Tensor y = tape::new_node("add_scalar", {a}, a.shape(), std::move(out));
    Tensor a_ = a;
    tape::set_backward(y, [a_](const std::vector<float>& g) mutable { a_.accumulate_grad(g); });
    return y;
}

Tensor transpose(const Tensor& a) {
    check_2d(a, "transpose");
    int n = a.dim(0), c = a.dim(1);
    std::vector<float> out(static_cast<size_t>(n) * c);
    const auto& ad = a.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * n + i] = ad[static_cast<size_t>(i) * c + j];
    Tensor y = tape::new_node("transpose", {a}, {c, n}, std::move(out));
    Tensor a_ = a;
    tape::set_backward(y, [a_, n, c](const std::vector<float>& g) mutable {
        std::vector<float> ga(static_cast<size_t>(n) * c);
        for (int j = 0; j < c; ++j)
            for (int i = 0; i < n; ++i) ga[static_cast<size_t>(i) * c + j] = g[static_cast<size_t>(j) * n + i];
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw DimError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor y = tape::new_node("reshape", {a}, std::move(shape), a.data());
    Tensor a_ = a;
    tape::set_backward(y, [a_](const std::vector<float>& g) mutable { a_.accumulate_grad(g); });
    return y;
}

Tensor col_slice(const Tensor& a, int c0, int c1) {
    check_2d(a, "col_slice");
    int n = a.dim(0), c = a.dim(1);
    if (c0 < 0 || c1 > c || c0 >= c1)
        throw DimError("col_slice: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                       ") invalid for " + shape_str(a.shape()));
    int w = c1 - c0;
    std::vector<float> out(static_cast<size_t>(n) * w);
    const auto& ad = a.data();
    for (int i = 0; i < n; ++i)
        std::memcpy(&out[static_cast<size_t>(i) * w], &ad[static_cast<size_t>(i) * c + c0],
                    static_cast<size_t>(w) * sizeof(float));
    Tensor y = tape::new_node("col_slice", {a}, {n, w}, std::move(out));
    Tensor a_ = a;
    tape::set_backward(y, [a_, n, c, c0, w](const std::vector<float>& g) mutable {
        std::vector<float> ga(static_cast<size_t>(n) * c, 0.0f);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) ga[static_cast<size_t>(i) * c + c0 + j] = g[static_cast<size_t>(i) * w + j];
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor row_slice(const Tensor& a, int r0, int r1) {
    check_2d(a, "row_slice");
    int n = a.dim(0), c = a.dim(1);
    if (r0 < 0 || r1 > n || r0 >= r1)
        throw DimError("row_slice: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                       ") invalid for " + shape_str(a.shape()));
    int h = r1 - r0;
    std::vector<float> out(a.data().begin() + static_cast<size_t>(r0) * c,
                           a.data().begin() + static_cast<size_t>(r1) * c);
    Tensor y = tape::new_node("row_slice", {a}, {h, c}, std::move(out));
    Tensor a_ = a;
    tape::set_backward(y, [a_, n, c, r0, h](const std::vector<float>& g) mutable {
        std::vector<float> ga(static_cast<size_t>(n) * c, 0.0f);
        std::memcpy(&ga[static_cast<size_t>(r0) * c], g.data(), static_cast<size_t>(h) * c * sizeof(float));
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float x : a.data()) acc += x;
    Tensor y = tape::new_node("sum", {a}, {1}, {static_cast<float>(acc)});
    Tensor a_ = a;
    tape::set_backward(y, [a_](const std::vector<float>& g) mutable {
        std::vector<float> ga(a_.data().size(), g[0]);
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (float x : a.data()) acc += x;
    float n = static_cast<float>(a.numel());
    Tensor y = tape::new_node("mean", {a}, {1}, {static_cast<float>(acc / n)});
    Tensor a_ = a;
    tape::set_backward(y, [a_, n](const std::vector<float>& g) mutable {
        std::vector<float> ga(a_.data().size(), g[0] / n);
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor row_sum(const Tensor& a) {
    check_2d(a, "row_sum");
    int n = a.dim(0), c = a.dim(1);
    std::vector<float> out(static_cast<size_t>(n));
    const auto& ad = a.data();
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += ad[static_cast<size_t>(i) * c + j];
        out[static_cast<size_t>(i)] = static_cast<float>(acc);
    }
    Tensor y = tape::new_node("row_sum", {a}, {n, 1}, std::move(out));
    Tensor a_ = a;
    tape::set_backward(y, [a_, n, c](const std::vector<float>& g) mutable {
        std::vector<float> ga(static_cast<size_t>(n) * c);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] = g[static_cast<size_t>(i)];
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor col_mean(const Tensor& a) {
    check_2d(a, "col_mean");
    int n = a.dim(0), c = a.dim(1);
    std::vector<float> out(static_cast<size_t>(c), 0.0f);
    const auto& ad = a.data();
    for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += ad[static_cast<size_t>(i) * c + j];
        out[static_cast<size_t>(j)] = static_cast<float>(acc / n);
    }
    Tensor y = tape::new_node("col_mean", {a}, {1, c}, std::move(out));
    Tensor a_ = a;
    tape::set_backward(y, [a_, n, c](const std::vector<float>& g) mutable {
        std::vector<float> ga(static_cast<size_t>(n) * c);
        float inv = 1.0f / static_cast<float>(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] = g[static_cast<size_t>(j)] * inv;
        a_.accumulate_grad(ga);
    });
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    int p = a.dim(0), q = a.dim(1), r = b.dim(1);
    if (b.dim(0) != q)
        throw DimError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    std::vector<float> out(static_cast<size_t>(p) * r, 0.0f);
    {
        const float* ad = a.data().data();
        const float* bd = b.data().data();
        float* od = out.data();
        for (int i = 0; i < p; ++i) {
            for (int k = 0; k < q; ++k) {
                float aik = ad[static_cast<size_t>(i) * q + k];
                const float* brow = bd + static_cast<size_t>(k) * r;
                float* orow = od + static_cast<size_t>(i) * r;
                for (int j = 0; j < r; ++j) orow[j] += aik * brow[j];
            }
        }
    }
    Tensor y = tape::new_node("matmul", {a, b}, {p, r}, std::move(out));
    Tensor a_ = a, b_ = b;
    tape::set_backward(y, [a_, b_, p, q, r](const std::vector<float>& g) mutable {
        if (a_.requires_grad()) {
            // dA = G * B^T
            std::vector<float> ga(static_cast<size_t>(p) * q, 0.0f);
            const float* bd = b_.data().data();
            for (int i = 0; i < p; ++i) {
                const float* grow = g.data() + static_cast<size_t>(i) * r;
                for (int k = 0; k < q; ++k) {
                    const float* brow = bd + static_cast<size_t>(k) * r;
                    float acc = 0.0f;
                    for (int j = 0; j < r; ++j) acc += grow[j] * brow[j];
                    ga[static_cast<size_t>(i) * q + k] = acc;
                }
            }
            a_.accumulate_grad(ga);
        }
        if (b_.requires_grad()) {
            // dB = A^T * G
            std::vector<float> gb(static_cast<size_t>(q) * r, 0.0f);
            const float* ad = a_.data().data();
            for (int i = 0; i < p; ++i) {
                const float* grow = g.data() + static_cast<size_t>(i) * r;
                for (int k = 0; k < q; ++k) {
                    float aik = ad[static_cast<size_t>(i) * q + k];
                    float* gbrow = gb.data() + static_cast<size_t>(k) * r;
                    for (int j = 0; j < r; ++j) gbrow[j] += aik * grow[j];
                }
            }
            b_.accumulate_grad(gb);
        }
    });
    return y;
}

Tensor softmax_rows(const Tensor& x) {
    check_2d(x, "softmax_rows");
    int n = x.dim(0), c = x.dim(1);
    std::vector<float> out(static_cast<size_t>(n) * c);
    const auto& xd = x.data();
    for (int i = 0; i < n; ++i) {
        const float* row = &xd[static_cast<size_t>(i) * c];
        float m = row[0];
        for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - m));
        for (int j = 0; j < c; ++j)
            out[static_cast<size_t>(i) * c + j] =
                static_cast<float>(std::exp(static_cast<double>(row[j] - m)) / denom);
    }
    Tensor y = tape::new_node("softmax_rows", {x}, {n, c}, std::move(out));
    Tensor x_ = x;
    TensorImpl* self = y.impl();
    tape::set_backward(y, [x_, self, n, c](const std::vector<float>& g) mutable {
        const auto& yd = self->data;
        std::vector<float> gx(static_cast<size_t>(n) * c);
        for (int i = 0; i < n; ++i) {
            double dot = 0.0;
            for (int j = 0; j < c; ++j)
                dot += static_cast<double>(g[static_cast<size_t>(i) * c + j]) * yd[static_cast<size_t>(i) * c + j];
            for (int j = 0; j < c; ++j) {
                size_t idx = static_cast<size_t>(i) * c + j;
                gx[idx] = yd[idx] * (g[idx] - static_cast<float>(dot));
            }
        }
        x_.accumulate_grad(gx);
    });
    return y;
}

Tensor relu(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v = v > 0.0f ? v : 0.0f;
    Tensor y = tape::new_node("relu", {x}, x.shape(), std::move(out));
    Tensor x_ = x;
    tape::set_backward(y, [x_](const std::vector<float>& g) mutable {
        const auto& xd = x_.data();
        std::vector<float> gx(g.size());
        // subgradient at 0 is defined as 0
        for (size_t i = 0; i < g.size(); ++i) gx[i] = xd[i] > 0.0f ? g[i] : 0.0f;
        x_.accumulate_grad(gx);
    });
    return y;
}

Tensor sigmoid(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) {
        if (v >= 0.0f) {
            v = 1.0f / (1.0f + std::exp(-v));
        } else {
            float e = std::exp(v);
            v = e / (1.0f + e);
        }
    }
    Tensor y = tape::new_node("sigmoid", {x}, x.shape(), std::move(out));
    Tensor x_ = x;
    TensorImpl* self = y.impl();
    tape::set_backward(y, [x_, self](const std::vector<float>& g) mutable {
        const auto& yd = self->data;
        std::vector<float> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * yd[i] * (1.0f - yd[i]);
        x_.accumulate_grad(gx);
    });
    return y;
}

Tensor exponential(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v = std::exp(v);
    Tensor y = tape::new_node("exponential", {x}, x.shape(), std::move(out));
    Tensor x_ = x;
    TensorImpl* self = y.impl();
    tape::set_backward(y, [x_, self](const std::vector<float>& g) mutable {
        const auto& yd = self->data;
        std::vector<float> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * yd[i];
        x_.accumulate_grad(gx);
    });
    return y;
}

namespace {
constexpr float kLogClamp = 1e-12f;
}

Tensor logarithm(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v = std::log(std::max(v, kLogClamp));
    Tensor y = tape::new_node("logarithm", {x}, x.shape(), std::move(out));
    Tensor x_ = x;
    tape::set_backward(y, [x_](const std::vector<float>& g) mutable {
        const auto& xd = x_.data();
        std::vector<float> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = xd[i] > kLogClamp ? g[i] / xd[i] : 0.0f;
        x_.accumulate_grad(gx);
    });
    return y;
}

Tensor gaussian_reparam(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
    if (mu.shape() != logvar.shape() || mu.shape() != eps.shape())
        throw DimError("gaussian_reparam: mu, logvar and eps must share a shape");
    const auto& md = mu.data();
    const auto& ld = logvar.data();
    const auto& ed = eps.data();
    std::vector<float> out(md.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = md[i] + std::exp(0.5f * ld[i]) * ed[i];
    Tensor y = tape::new_node("gaussian_reparam", {mu, logvar, eps}, mu.shape(), std::move(out));
    Tensor mu_ = mu, lv_ = logvar, eps_ = eps;
    tape::set_backward(y, [mu_, lv_, eps_](const std::vector<float>& g) mutable {
        mu_.accumulate_grad(g);
        if (lv_.requires_grad()) {
            const auto& ld = lv_.data();
            const auto& ed = eps_.data();
            std::vector<float> gl(g.size());
            for (size_t i = 0; i < g.size(); ++i)
                gl[i] = g[i] * ed[i] * 0.5f * std::exp(0.5f * ld[i]);
            lv_.accumulate_grad(gl);
        }
    });
    return y;
}

// ---- backward ----

void backward(const Tensor& loss, bool accumulate) {
    if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar");
    if (!loss.requires_grad())
        throw ContractError("backward: loss does not participate in differentiation");

    // Collect the reachable differentiable subgraph.
    std::vector<TensorImpl*> nodes;
    std::unordered_set<TensorImpl*> seen;
    std::vector<TensorImpl*> stack{loss.impl()};
    seen.insert(loss.impl());
    while (!stack.empty()) {
        TensorImpl* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }

    if (!accumulate) {
        for (TensorImpl* n : nodes) {
            if (!n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0f);
        }
    }

    // Replay strictly by decreasing creation order; consumers always run
    // before the nodes they feed from.
    std::sort(nodes.begin(), nodes.end(),
              [](const TensorImpl* a, const TensorImpl* b) { return a->seq > b->seq; });

    auto* root = loss.impl();
    if (root->grad.empty()) root->grad.assign(1, 0.0f);
    root->grad[0] += 1.0f;

    for (TensorImpl* n : nodes) {
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
    }
}

// ---- init helpers ----

Tensor randn(const Shape& shape, Rng& rng, float stddev, bool requires_grad) {
    int64_t n = numel_of(shape);
    std::vector<float> d(static_cast<size_t>(n));
    for (auto& v : d) v = rng.normal() * stddev;
    return Tensor::from_data(shape, std::move(d), requires_grad);
}

Tensor rand_uniform(const Shape& shape, Rng& rng, float lo, float hi, bool requires_grad) {
    int64_t n = numel_of(shape);
    std::vector<float> d(static_cast<size_t>(n));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor::from_data(shape, std::move(d), requires_grad);
}

// ---- serialization ----

namespace {

constexpr char kMagic[4] = {'A', 'T', 'N', 'S'};
constexpr uint8_t kFormatVersion = 1;
constexpr uint8_t kDtypeF32LE = 0;

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated tensor file: " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kFormatVersion));
    os.put(static_cast<char>(kDtypeF32LE));
    write_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_u32(os, static_cast<uint32_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(float)));
    if (!os) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad tensor magic in " + path);
    int version = is.get();
    if (version != kFormatVersion)
        throw FormatError("unsupported tensor format version " + std::to_string(version) + " in " + path);
    int dtype = is.get();
    if (dtype != kDtypeF32LE)
        throw FormatError("unsupported dtype code " + std::to_string(dtype) + " in " + path);
    uint32_t ndim = read_u32(is, path);
    if (ndim == 0 || ndim > 8) throw FormatError("implausible rank in " + path);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(is, path));
    int64_t n = numel_of(shape);
    std::vector<float> data(static_cast<size_t>(n));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float))))
        throw FormatError("truncated tensor payload in " + path);
    return Tensor::from_data(std::move(shape), std::move(data), false);
}

}  // namespace atoms
