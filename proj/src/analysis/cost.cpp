#include "analysis/cost.hpp"

#include <json.hpp>

#include "core/errors.hpp"

namespace atoms {

CostReport cost_report(int64_t c_in, int64_t c_out, int64_t atom_count, int64_t rank,
                       int64_t tokens, double rho) {
    if (c_in < 0 || c_out < 0 || atom_count < 0 || rank < 0 || tokens < 0)
        throw ContractError("cost_report: dimensions must be nonnegative");
    if (rho < 0.0 || rho > 1.0) throw ContractError("cost_report: rho must lie in [0, 1]");

    CostReport r;
    r.c_in = c_in;
    r.c_out = c_out;
    r.atom_count = atom_count;
    r.rank = rank;
    r.tokens = tokens;
    r.rho = rho;

    double ci = static_cast<double>(c_in), co = static_cast<double>(c_out);
    double m = static_cast<double>(atom_count), rk = static_cast<double>(rank);
    double n = static_cast<double>(tokens);

    r.sparse_train_params = (ci + co) * m;
    r.sparse_storage_params = ci * m + rho * co * m;
    r.sparse_flops = 2.0 * n * m * ci + 2.0 * rho * n * m * co;
    r.lowrank_params = 4.0 * (ci + co) * rk;
    r.lowrank_flops = 8.0 * ci * co * rk;
    return r;
}

std::string cost_report_json(const CostReport& r) {
    nlohmann::json j;
    j["inputs"] = {{"c_in", r.c_in},   {"c_out", r.c_out}, {"atom_count", r.atom_count},
                   {"rank", r.rank},   {"tokens", r.tokens}, {"rho", r.rho}};
    j["sparse"] = {{"train_params", r.sparse_train_params},
                   {"storage_params", r.sparse_storage_params},
                   {"storage_params_rounded", static_cast<int64_t>(r.sparse_storage_params + 0.5)},
                   {"flops", r.sparse_flops}};
    j["lowrank"] = {{"params", r.lowrank_params},
                    {"params_rounded", static_cast<int64_t>(r.lowrank_params + 0.5)},
                    {"flops", r.lowrank_flops}};
    return j.dump(2);
}

}  // namespace atoms
