#include "ftwt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "ftwt/rng.hpp"

namespace ftwt {

RouteStats collect_routes(Network& net, const std::vector<GatingHead>& heads, const Dataset& ds,
                          int batch_size) {
    const auto gated = net.arch.gated_blocks();
    RouteStats stats;
    stats.samples = ds.size();
    std::vector<std::unordered_map<std::string, int64_t>> clusters(gated.size());
    std::vector<std::vector<uint8_t>> core(gated.size());
    std::vector<double> zero_frac(gated.size(), 0.0);
    for (int start = 0; start < ds.size(); start += batch_size) {
        std::vector<int> idx;
        for (int i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
        Tensor batch = make_batch(ds, idx);
        MaskBatch masks;
        dynamic_forward(net, heads, batch, &masks);
        for (size_t l = 0; l < masks.layers.size(); ++l) {
            const Tensor& m = masks.layers[l];
            const int C = m.dim(1);
            for (int n = 0; n < m.dim(0); ++n) {
                std::string key(static_cast<size_t>(C), '0');
                int zeros = 0;
                for (int c = 0; c < C; ++c) {
                    const bool on = m.at(n, c) != 0.0f;
                    key[static_cast<size_t>(c)] = on ? '1' : '0';
                    zeros += on ? 0 : 1;
                }
                clusters[l][key]++;
                zero_frac[l] += double(zeros) / C;
                if (core[l].empty()) {
                    core[l].assign(static_cast<size_t>(C), 1);
                }
                for (int c = 0; c < C; ++c)
                    if (key[static_cast<size_t>(c)] == '0') core[l][static_cast<size_t>(c)] = 0;
            }
        }
    }
    for (size_t l = 0; l < gated.size(); ++l) {
        LayerRouteStats ls;
        ls.block = gated[l];
        ls.clusters = static_cast<int64_t>(clusters[l].size());
        ls.core = core[l];
        int kept = 0;
        for (uint8_t v : core[l]) kept += v;
        ls.core_ratio = core[l].empty() ? 0.0 : double(kept) / double(core[l].size());
        ls.mean_pruning_ratio = stats.samples > 0 ? zero_frac[l] / double(stats.samples) : 0.0;
        stats.layers.push_back(std::move(ls));
    }
    return stats;
}

std::string RouteStats::to_json() const {
    nlohmann::json j;
    j["samples"] = samples;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
        nlohmann::json jl;
        jl["block"] = l.block;
        jl["clusters"] = l.clusters;
        jl["core_ratio"] = l.core_ratio;
        jl["mean_pruning_ratio"] = l.mean_pruning_ratio;
        std::string core_str(l.core.size(), '0');
        for (size_t i = 0; i < l.core.size(); ++i) core_str[i] = l.core[i] ? '1' : '0';
        jl["core"] = core_str;
        j["layers"].push_back(jl);
    }
    return j.dump(2);
}

std::string RouteStats::to_csv() const {
    std::ostringstream os;
    os << "layer,cluster_count,core_ratio,mean_pruning_ratio\n";
    for (const auto& l : layers)
        os << l.block << ',' << l.clusters << ',' << l.core_ratio << ',' << l.mean_pruning_ratio
           << '\n';
    return os.str();
}

double brier_score(const Tensor& probabilities, const std::vector<int>& labels) {
    const int N = probabilities.dim(0), C = probabilities.dim(1);
    if (static_cast<int>(labels.size()) != N) throw ConfigError("brier_score label count mismatch");
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        double row = 0.0;
        for (int c = 0; c < C; ++c) row += probabilities.at(n, c);
        if (std::abs(row - 1.0) > 1e-4)
            throw ConfigError("brier_score: probability row " + std::to_string(n) +
                              " sums to " + std::to_string(row));
        const int y = labels[static_cast<size_t>(n)];
        if (y < 0 || y >= C) throw DataError("brier_score label out of range");
        for (int c = 0; c < C; ++c) {
            const double d = double(probabilities.at(n, c)) - (c == y ? 1.0 : 0.0);
            total += d * d;
        }
    }
    return total / double(N);
}

std::vector<double> gaussian_blur_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::llround(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int d = -radius; d <= radius; ++d) {
        k[static_cast<size_t>(d + radius)] = std::exp(-double(d) * d / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(d + radius)];
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace {

inline int reflect_index(int i, int n) {
    // symmetric reflection: -1 -> 0, n -> n-1
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return std::clamp(i, 0, n - 1);
}

} // namespace

Tensor corrupt_gaussian_blur(const Tensor& images, double sigma) {
    if (sigma < 0.0) throw ConfigError("blur sigma must be >= 0");
    if (sigma == 0.0) return images;
    const std::vector<double> kernel = gaussian_blur_kernel(sigma);
    const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
    const int N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
    Tensor tmp(images.shape);
    Tensor out(images.shape);
    // horizontal then vertical pass
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* src = images.data.data() + (int64_t(n) * C + c) * H * W;
            float* mid = tmp.data.data() + (int64_t(n) * C + c) * H * W;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int d = -radius; d <= radius; ++d)
                        acc += kernel[static_cast<size_t>(d + radius)] *
                               src[y * W + reflect_index(x + d, W)];
                    mid[y * W + x] = float(acc);
                }
            float* dst = out.data.data() + (int64_t(n) * C + c) * H * W;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int d = -radius; d <= radius; ++d)
                        acc += kernel[static_cast<size_t>(d + radius)] *
                               mid[reflect_index(y + d, H) * W + x];
                    dst[y * W + x] = float(acc);
                }
        }
    return out;
}

Tensor corrupt_additive_gaussian(const Tensor& images, double sigma, uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
    if (sigma == 0.0) return images;
    Tensor out = images;
    Pcg32 rng(seed);
    for (float& v : out.data) {
        v = float(std::clamp(double(v) + sigma * rng.gaussian(), 0.0, 1.0));
    }
    return out;
}

namespace {

// Brier of one model over a (possibly corrupted) raw-image dataset.
double model_brier(const ShiftModel& model, const Dataset& ds, int batch_size) {
    double total = 0.0;
    int64_t n_total = 0;
    for (int start = 0; start < ds.size(); start += batch_size) {
        std::vector<int> idx;
        for (int i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
        Tensor batch = make_batch(ds, idx);
        Tensor logits;
        if (model.heads) {
            logits = dynamic_forward(*model.net, *model.heads, batch, nullptr);
        } else {
            ForwardTrace<float> t = forward_collect(*model.net, batch, BnMode::eval);
            logits = std::move(t.logits);
        }
        Tensor probs = softmax_rows(logits);
        total += brier_score(probs, labels_for(ds, idx)) * double(idx.size());
        n_total += static_cast<int64_t>(idx.size());
    }
    return total / double(n_total);
}

} // namespace

BrierReport shift_evaluation(const std::vector<ShiftModel>& models, const Dataset& ds,
                             const std::string& kind, const std::vector<double>& sigmas,
                             uint64_t noise_seed, int batch_size) {
    if (kind != "gaussian_blur" && kind != "additive_gaussian")
        throw ConfigError("unknown corruption kind: " + kind);
    BrierReport report;
    report.kind = kind;
    report.sigmas = sigmas;
    for (const auto& m : models) report.scores[m.name] = {};
    for (double sigma : sigmas) {
        Dataset corrupted = ds;
        corrupted.images = kind == "gaussian_blur"
                               ? corrupt_gaussian_blur(ds.images, sigma)
                               : corrupt_additive_gaussian(ds.images, sigma, noise_seed);
        for (const auto& m : models)
            report.scores[m.name].push_back(model_brier(m, corrupted, batch_size));
    }
    return report;
}

std::string BrierReport::to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["sigmas"] = sigmas;
    for (const auto& [name, vals] : scores) j["brier"][name] = vals;
    return j.dump(2);
}

namespace {

void write_pgm(const std::string& path, const std::vector<float>& img, int h, int w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    for (float v : img)
        out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f)));
}

// per-pixel mean of |channel activations|
std::vector<float> channel_mean_abs(const Tensor& maps, int sample) {
    const int C = maps.dim(1), H = maps.dim(2), W = maps.dim(3);
    std::vector<float> heat(static_cast<size_t>(H) * W, 0.0f);
    for (int c = 0; c < C; ++c) {
        const float* p = maps.data.data() + (int64_t(sample) * C + c) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) heat[static_cast<size_t>(i)] += std::abs(p[i]);
    }
    for (float& v : heat) v /= float(C);
    return heat;
}

// min-max normalization; constant maps export as zeros
void minmax_normalize(std::vector<float>& v) {
    float lo = v[0], hi = v[0];
    for (float x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (hi - lo < 1e-12f) {
        std::fill(v.begin(), v.end(), 0.0f);
        return;
    }
    for (float& x : v) x = (x - lo) / (hi - lo);
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    if (na == 0.0 && nb == 0.0) return 1.0;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

} // namespace

HeatmapExport heatmap_export(Network& net, const std::vector<GatingHead>& heads, const Dataset& ds,
                             int block, int n_samples, const std::string& out_dir) {
    const auto gated = net.arch.gated_blocks();
    int ord = -1;
    for (size_t i = 0; i < gated.size(); ++i)
        if (gated[i] == block) ord = static_cast<int>(i);
    if (ord < 0) throw ConfigError("block " + std::to_string(block) + " is not gated");
    n_samples = std::min(n_samples, ds.size());
    std::filesystem::create_directories(out_dir);

    HeatmapExport result;
    std::ostringstream manifest;
    manifest << "sample,input,baseline,pruned,cosine_similarity\n";
    for (int s = 0; s < n_samples; ++s) {
        Tensor batch = make_batch(ds, {s});
        // dense activations at the block
        ForwardTrace<float> dense = forward_collect(net, batch, BnMode::eval);
        const Tensor& maps = dense.blocks[static_cast<size_t>(block - 1)].output;
        std::vector<float> base = channel_mean_abs(maps, 0);
        // the head's mask for this block, fed by the dynamic forward
        MaskBatch masks;
        dynamic_forward(net, heads, batch, &masks);
        const Tensor& m = masks.layers[static_cast<size_t>(ord)];
        Tensor masked_maps = maps;
        apply_channel_mask(masked_maps, m);
        std::vector<float> pruned = channel_mean_abs(masked_maps, 0);

        result.cosine_similarity.push_back(cosine(base, pruned));
        minmax_normalize(base);
        minmax_normalize(pruned);

        const int H = maps.dim(2), W = maps.dim(3);
        const std::string tag = std::to_string(s);
        const std::string f_in = out_dir + "/sample" + tag + "_input.pgm";
        const std::string f_base = out_dir + "/sample" + tag + "_baseline.pgm";
        const std::string f_pruned = out_dir + "/sample" + tag + "_pruned.pgm";
        // raw input image (first channel on the [0,1] scale)
        const int ih = ds.images.dim(2), iw = ds.images.dim(3);
        std::vector<float> img(static_cast<size_t>(ih) * iw);
        for (int64_t i = 0; i < int64_t(ih) * iw; ++i)
            img[static_cast<size_t>(i)] = ds.images.data[static_cast<size_t>(int64_t(s) * ds.images.dim(1) * ih * iw + i)];
        write_pgm(f_in, img, ih, iw);
        write_pgm(f_base, base, H, W);
        write_pgm(f_pruned, pruned, H, W);
        result.files.insert(result.files.end(), {f_in, f_base, f_pruned});
        manifest << s << ',' << f_in << ',' << f_base << ',' << f_pruned << ','
                 << result.cosine_similarity.back() << '\n';
    }
    result.manifest_csv = out_dir + "/heatmaps.csv";
    std::ofstream mf(result.manifest_csv);
    mf << manifest.str();
    return result;
}

} // namespace ftwt
