#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ftwt/data.hpp"
#include "ftwt/gating.hpp"
#include "ftwt/network.hpp"

namespace ftwt {

// Route diversity over a dataset: distinct masks (clusters), the channels
// shared by every route (core filters), and the mean pruning ratio per layer.
struct LayerRouteStats {
    int block = 0; // 1-based block index
    int64_t clusters = 0;
    std::vector<uint8_t> core; // intersection of all observed masks
    double core_ratio = 0.0;   // |core| / c_l
    double mean_pruning_ratio = 0.0; // mean fraction of zeros over samples
};

struct RouteStats {
    std::vector<LayerRouteStats> layers;
    int64_t samples = 0;

    std::string to_json() const;
    std::string to_csv() const; // layer, cluster_count, core_ratio, mean_pruning_ratio
};

RouteStats collect_routes(Network& net, const std::vector<GatingHead>& heads, const Dataset& ds,
                          int batch_size = 256);

// Sum over classes of squared error against the one-hot label, mean over
// samples; lives in [0,2]. Rows must sum to 1 within 1e-4.
double brier_score(const Tensor& probabilities, const std::vector<int>& labels);

// Separable Gaussian blur, radius max(1, round(3*sigma)), reflect padding,
// kernel normalized to sum 1. sigma = 0 returns the image bit-identically.
Tensor corrupt_gaussian_blur(const Tensor& images, double sigma);
std::vector<double> gaussian_blur_kernel(double sigma); // exposed for tests

// i.i.d. N(0, sigma^2) per pixel from the seeded generator, clipped to [0,1].
// Applies on the raw [0,1] scale, i.e. before dataset normalization.
Tensor corrupt_additive_gaussian(const Tensor& images, double sigma, uint64_t seed);

struct ShiftModel {
    std::string name;
    Network* net = nullptr;
    const std::vector<GatingHead>* heads = nullptr; // null = dense forward
};

// Brier per model variant per sigma for one corruption family.
struct BrierReport {
    std::string kind; // "gaussian_blur" | "additive_gaussian"
    std::vector<double> sigmas;
    std::map<std::string, std::vector<double>> scores; // model name -> per sigma

    std::string to_json() const;
};

inline const std::vector<double>& default_blur_grid() {
    static const std::vector<double> g = {0.5, 0.7, 0.9, 1.09, 1.27, 1.45};
    return g;
}
inline const std::vector<double>& default_noise_grid() {
    static const std::vector<double> g = {0.0, 0.02, 0.05, 0.11, 0.14, 0.20};
    return g;
}

BrierReport shift_evaluation(const std::vector<ShiftModel>& models, const Dataset& ds,
                             const std::string& kind, const std::vector<double>& sigmas,
                             uint64_t noise_seed = 7, int batch_size = 256);

// Per-sample triplets at one gated block: input image, dense heatmap, masked
// heatmap (per-pixel mean of |channel activations|, min-max normalized per
// map; a constant map exports as zeros). Writes P5 PGM files plus a CSV
// manifest with the cosine similarity of the raw heatmap pair.
struct HeatmapExport {
    std::vector<std::string> files;
    std::vector<double> cosine_similarity;
    std::string manifest_csv;
};

HeatmapExport heatmap_export(Network& net, const std::vector<GatingHead>& heads, const Dataset& ds,
                             int block, int n_samples, const std::string& out_dir);

} // namespace ftwt
