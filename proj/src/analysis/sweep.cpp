#include "analysis/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace atoms {

SweepResult ablation_sweep(const std::string& axis, const std::vector<double>& values,
                           SignalModel& pretrained, const FourierTaskSpec& high,
                           const FourierTaskSpec& transfer, const TrainConfig& base_cfg) {
    if (axis != "m" && axis != "rho") throw ConfigError("sweep axis must be 'm' or 'rho'");
    if (values.empty()) throw ContractError("sweep: value list must be nonempty");
    if (pretrained.cfg.head_kind != SignalHeadKind::Dense)
        throw ContractError("sweep: expects a dense pre-trained model");

    FourierTaskSpec transfer_eval = transfer;
    transfer_eval.seed = Rng(base_cfg.seed).fork(21).next_u64();
    SignalDataset transfer_ds = make_signal_dataset(transfer_eval, base_cfg.eval_count);

    SweepResult result;
    result.axis = axis;
    for (double value : values) {
        TrainConfig cfg = base_cfg;
        if (axis == "m") {
            cfg.dict_size = static_cast<int>(std::lround(value));
            if (cfg.dict_size < 1) throw ConfigError("sweep: dictionary sizes must be positive");
        } else {
            if (value <= 0.0 || value > 1.0) throw ConfigError("sweep: rho values must lie in (0, 1]");
            cfg.rho = static_cast<float>(value);
            cfg.activation = "top_k";
        }

        SignalFinetuneResult ft = finetune_signal(high, pretrained, FreezePolicy::Both, cfg);

        SweepPoint point;
        point.axis_value = value;
        point.eval_loss = ft.report.final_eval;
        point.density = ft.report.history.empty() ? 0.0 : ft.report.history.back().density;
        point.transfer_loss = eval_signal(pretrained, transfer_ds,
                                          ft.used_delta ? &ft.delta_adapter : nullptr);
        result.points.push_back(point);
    }
    return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write sweep csv: " + path);
    os << "axis_value,eval_loss,transfer_loss,density\n";
    char buf[160];
    for (const auto& p : result.points) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", p.axis_value, p.eval_loss,
                      p.transfer_loss, p.density);
        os << buf;
    }
}

}  // namespace atoms
