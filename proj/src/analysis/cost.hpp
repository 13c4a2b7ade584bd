#pragma once

#include <cstdint>
#include <string>

namespace atoms {

// Closed-form parameter/storage/FLOP accounting for one adapted layer,
// for the sparse dictionary method and the low-rank baseline.
struct CostReport {
    int64_t c_in = 0, c_out = 0, atom_count = 0, rank = 0, tokens = 0;
    double rho = 0.0;

    double sparse_train_params = 0.0;    // (C_i + C_o) M
    double sparse_storage_params = 0.0;  // C_i M + rho C_o M
    double sparse_flops = 0.0;           // 2 N M C_i + 2 rho N M C_o
    double lowrank_params = 0.0;         // 4 (C_i + C_o) r
    double lowrank_flops = 0.0;          // 8 C_i C_o r
};

CostReport cost_report(int64_t c_in, int64_t c_out, int64_t atom_count, int64_t rank,
                       int64_t tokens, double rho);

std::string cost_report_json(const CostReport& report);

}  // namespace atoms
