#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftwt/data.hpp"
#include "ftwt/gating.hpp"
#include "ftwt/network.hpp"
#include "ftwt/supervision.hpp"

namespace ftwt {

// All counts are multiply-accumulates. Pooling, folded normalization and
// elementwise ops are excluded; the decision-head cost c_{l-1} x c_l per
// gated layer per sample is always included on the dynamic side and reported
// separately.
struct FlopsReport {
    std::vector<int64_t> dense_per_block;   // conv blocks
    int64_t dense_classifier = 0;
    int64_t dense_total = 0;                // conv + classifier
    std::vector<double> dynamic_per_block;  // dataset-mean per conv block
    double dynamic_total = 0.0;             // conv mean + classifier + heads
    double head_overhead = 0.0;             // per sample
    double reduction_percent = 0.0;         // 100*(1 - dynamic_total/dense_total)
    std::vector<double> mean_keep_per_layer; // per gated layer

    std::string to_json() const;
    std::string to_table() const;
};

// Per-conv-block dense MACs: Hout*Wout*k^2*c_in*c_out.
std::vector<int64_t> dense_block_macs(const Architecture& arch);
int64_t dense_classifier_macs(const Architecture& arch);
int64_t head_overhead_macs(const Architecture& arch);

// FLOPs estimate before any head exists: cascaded ground-truth masks from the
// frozen network over the dataset, one pass, eval-mode statistics.
FlopsReport estimate_reduction_pretraining(Network& net, const Dataset& ds, const MaskRule& rule,
                                           bool cascaded = true, int batch_size = 256);

// Same accounting with the trained heads' predicted masks.
FlopsReport measured_flops_post_training(Network& net, const std::vector<GatingHead>& heads,
                                         const Dataset& ds, int batch_size = 256);

// Gather-based dynamic inference over one image on a folded network: only
// kept output channels are materialized, and kernels are sliced to the
// surviving input channels. Numerically equal to the masked dense forward up
// to accumulation order.
struct SlicedResult {
    Tensor logits; // [1, classes]
    std::vector<int64_t> conv_macs_per_block;
    int64_t total_macs = 0; // conv + heads + classifier
};

// Masks come from the heads when `fixed_masks` is null, otherwise from the
// given per-gated-layer 0/1 vectors.
SlicedResult sliced_inference(const Network& folded, const std::vector<GatingHead>* heads,
                              const std::vector<std::vector<uint8_t>>* fixed_masks,
                              const Tensor& image);

struct LatencyReport {
    double dense_median_ms = 0.0;
    double dynamic_median_ms = 0.0;
    double latency_reduction_percent = 0.0;
    int threads = 1;
    int reps = 0;
    int warmup = 0;
    int inner_loops = 1;

    std::string to_json() const;
};

// Single-thread batch-1 wall-clock benchmark: medians of per-image time over
// `reps` repetitions after `warmup` discarded passes. Pins the process to one
// CPU and refuses to run if pinning fails. Inferences shorter than 100us are
// repeated in an inner loop so the timed interval stays measurable.
LatencyReport latency_benchmark(const Network& folded, const std::vector<GatingHead>& heads,
                                const Dataset& images, int n_images, int reps, int warmup);

} // namespace ftwt
