#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace atoms {

// Flat line-oriented "key = value" configuration. '#' starts a comment.
// Every key must be consumed by a typed getter; leftovers are rejected.
class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;

    std::string get_str(const std::string& key);
    std::string get_str(const std::string& key, const std::string& fallback);
    int get_int(const std::string& key);
    int get_int(const std::string& key, int fallback);
    double get_double(const std::string& key);
    double get_double(const std::string& key, double fallback);
    uint64_t get_u64(const std::string& key, uint64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<double> get_double_list(const std::string& key);         // comma separated
    std::vector<int> get_int_list(const std::string& key);
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback);

    // ConfigError when any key was never consumed.
    void reject_unknown() const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::string origin_;
    std::map<std::string, std::string> entries_;
    std::set<std::string> consumed_;

    const std::string* find(const std::string& key);
};

enum class FreezePolicy { AtomsOnly, CoefficientsOnly, Both, FullModel };

FreezePolicy freeze_policy_from_name(const std::string& name);
std::string freeze_policy_name(FreezePolicy policy);

// Shared optimizer/protocol knobs for every training op.
struct TrainConfig {
    std::string optimizer = "adam";  // adam | adamw
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
    int epochs = 20;
    int batch_size = 64;
    uint64_t seed = 0;

    std::string activation = "soft_threshold";  // soft_threshold | shifted_relu | top_k
    float lambda = 0.1f;
    int k = 1;
    float rho = 0.0f;  // density target; > 0 derives k = round(rho * dict_size)
    float ortho_weight = 1e-3f;
    int dict_size = 100;
    bool apply_before_attention = true;

    int train_count = 128;
    int eval_count = 64;
    float noise_sigma = 0.3f;  // digit denoising corruption
    float kl_weight = 1e-3f;
    float clip_norm = 1.0f;

    void validate() const;

    // Reads the shared keys from cfg (leaving command-specific keys alone).
    static TrainConfig from_config(KeyValueConfig& cfg);
};

}  // namespace atoms
