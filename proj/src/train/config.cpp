#include "train/config.hpp"

#include <fstream>
#include <sstream>

namespace atoms {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_string(buf.str(), path);
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (cfg.entries_.count(key))
            throw ConfigError(origin + ": duplicate key '" + key + "'");
        cfg.entries_[key] = val;
    }
    return cfg;
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

const std::string* KeyValueConfig::find(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    consumed_.insert(key);
    return &it->second;
}

std::string KeyValueConfig::get_str(const std::string& key) {
    const std::string* v = find(key);
    if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "'");
    return *v;
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

int KeyValueConfig::get_int(const std::string& key) {
    const std::string* v = find(key);
    if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "'");
    try {
        size_t used = 0;
        int out = std::stoi(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' is not an integer: " + *v);
    }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) {
    return has(key) ? get_int(key) : (consumed_.insert(key), fallback);
}

double KeyValueConfig::get_double(const std::string& key) {
    const std::string* v = find(key);
    if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "'");
    try {
        size_t used = 0;
        double out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' is not a number: " + *v);
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
    return has(key) ? get_double(key) : (consumed_.insert(key), fallback);
}

uint64_t KeyValueConfig::get_u64(const std::string& key, uint64_t fallback) {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        return std::stoull(*v);
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' is not an unsigned integer: " + *v);
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: " + *v);
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key) {
    std::string raw = get_str(key);
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key '" + key + "' has a non-numeric item: " + item);
        }
    }
    if (out.empty()) throw ConfigError(origin_ + ": key '" + key + "' must list at least one value");
    return out;
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key) {
    std::vector<int> out;
    for (double v : get_double_list(key)) out.push_back(static_cast<int>(v));
    return out;
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key, std::vector<int> fallback) {
    if (!has(key)) {
        consumed_.insert(key);
        return fallback;
    }
    return get_int_list(key);
}

void KeyValueConfig::reject_unknown() const {
    for (const auto& [key, val] : entries_) {
        (void)val;
        if (!consumed_.count(key))
            throw ConfigError(origin_ + ": unknown key '" + key + "'");
    }
}

FreezePolicy freeze_policy_from_name(const std::string& name) {
    if (name == "atoms_only") return FreezePolicy::AtomsOnly;
    if (name == "coefficients_only") return FreezePolicy::CoefficientsOnly;
    if (name == "both") return FreezePolicy::Both;
    if (name == "full_model") return FreezePolicy::FullModel;
    throw ConfigError("unknown freeze policy: " + name);
}

std::string freeze_policy_name(FreezePolicy policy) {
    switch (policy) {
        case FreezePolicy::AtomsOnly: return "atoms_only";
        case FreezePolicy::CoefficientsOnly: return "coefficients_only";
        case FreezePolicy::Both: return "both";
        case FreezePolicy::FullModel: return "full_model";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (optimizer != "adam" && optimizer != "adamw")
        throw ConfigError("optimizer must be adam or adamw");
    if (!(lr > 0.0f)) throw ConfigError("lr must be positive");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (dict_size < 1) throw ConfigError("dict_size must be positive");
    if (lambda < 0.0f) throw ConfigError("lambda must be nonnegative");
    if (rho < 0.0f || rho > 1.0f) throw ConfigError("rho must lie in [0, 1]");
    if (train_count < 0 || eval_count < 1) throw ConfigError("dataset sizes invalid");
    if (activation != "soft_threshold" && activation != "shifted_relu" && activation != "top_k")
        throw ConfigError("unknown activation: " + activation);
}

TrainConfig TrainConfig::from_config(KeyValueConfig& cfg) {
    TrainConfig t;
    t.optimizer = cfg.get_str("optimizer", t.optimizer);
    t.lr = static_cast<float>(cfg.get_double("lr", t.lr));
    t.beta1 = static_cast<float>(cfg.get_double("beta1", t.beta1));
    t.beta2 = static_cast<float>(cfg.get_double("beta2", t.beta2));
    t.eps = static_cast<float>(cfg.get_double("eps", t.eps));
    t.weight_decay = static_cast<float>(cfg.get_double("weight_decay", t.weight_decay));
    t.epochs = cfg.get_int("epochs", t.epochs);
    t.batch_size = cfg.get_int("batch_size", t.batch_size);
    t.seed = cfg.get_u64("seed", t.seed);
    t.activation = cfg.get_str("activation", t.activation);
    t.lambda = static_cast<float>(cfg.get_double("lambda", t.lambda));
    t.k = cfg.get_int("k", t.k);
    t.rho = static_cast<float>(cfg.get_double("rho", t.rho));
    t.ortho_weight = static_cast<float>(cfg.get_double("ortho_weight", t.ortho_weight));
    t.dict_size = cfg.get_int("dict_size", t.dict_size);
    t.apply_before_attention = cfg.get_bool("apply_before_attention", t.apply_before_attention);
    t.train_count = cfg.get_int("train_count", t.train_count);
    t.eval_count = cfg.get_int("eval_count", t.eval_count);
    t.noise_sigma = static_cast<float>(cfg.get_double("noise_sigma", t.noise_sigma));
    t.kl_weight = static_cast<float>(cfg.get_double("kl_weight", t.kl_weight));
    t.clip_norm = static_cast<float>(cfg.get_double("clip_norm", t.clip_norm));
    t.validate();
    return t;
}

}  // namespace atoms
