#pragma once

#include <string>
#include <vector>

#include "ftwt/data.hpp"
#include "ftwt/training.hpp"

namespace ftwt {

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double l_ent = 0.0;
    double l_pred = 0.0;
    double head_accuracy = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    std::vector<double> keep_rates; // per gated layer, epoch mean of applied masks
    double wall_seconds = 0.0;
};

struct TrainOutcome {
    Network net;
    std::vector<GatingHead> heads;
    std::vector<EpochStats> epochs;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> keep_rates; // per gated layer (empty for dense eval)
};

// Dense eval when heads is null, dynamic (predicted-mask) eval otherwise.
EvalResult evaluate(Network& net, const std::vector<GatingHead>* heads, const Dataset& ds,
                    int batch_size = 256);

// One optimizer update over a batch; dispatches on cfg.mode.
StepStats<float> train_step(Network& net, std::vector<GatingHead>& heads, const Tensor& batch,
                            const std::vector<int>& labels, const TrainConfig& cfg,
                            const MaskRule& rule, double lr, double head_lr,
                            ParamGrads<float>& velocity);

// Deterministic under a fixed seed: seeded shuffle order, fixed batch
// boundaries, fixed accumulation order, single thread. Appends one CSV row
// per epoch to metrics_csv_path when non-empty.
TrainOutcome train_loop(const Architecture& arch, const TrainConfig& cfg, const MaskRule& rule,
                        const Dataset& train_ds, const Dataset& test_ds, const Network* init_net,
                        const std::vector<GatingHead>* init_heads,
                        const std::string& metrics_csv_path = "");

} // namespace ftwt
