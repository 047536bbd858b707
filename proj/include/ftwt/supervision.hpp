#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <variant>
#include <vector>

#include "ftwt/network.hpp"

namespace ftwt {

// Keep the top channels covering a fraction r of the per-sample activation
// mass. The strict rule prunes sorted positions whose cumulative mass exceeds
// r; inclusive_crossing keeps the position that crosses r instead. r = 1
// means "prune only completely deactivated channels" (activation <= zero_eps).
struct MassCriterion {
    double r = 1.0;
    bool inclusive_crossing = false;
    double zero_eps = 0.0;

    void validate() const {
        if (!(r > 0.0) || r > 1.0) throw ConfigError("mass ratio r must satisfy 0 < r <= 1");
        if (zero_eps < 0.0) throw ConfigError("zero_eps must be >= 0");
    }
};

// Fixed kept-count per gated layer, ingested from a file (one entry per
// gated block, in network order).
struct Signature {
    std::vector<int> kept;
};

using MaskRule = std::variant<MassCriterion, Signature>;

// Per-sample, per-gated-layer binary vectors; layers[i] is [N, c_l] with
// entries in {0,1}, ordered like Architecture::gated_blocks().
struct MaskBatch {
    std::vector<Tensor> layers;

    int kept(int layer, int sample) const {
        const Tensor& m = layers[static_cast<size_t>(layer)];
        int k = 0;
        for (int c = 0; c < m.dim(1); ++c) k += m.at(sample, c) != 0.0f ? 1 : 0;
        return k;
    }

    double keep_rate(int layer) const {
        const Tensor& m = layers[static_cast<size_t>(layer)];
        double s = 0.0;
        for (float v : m.data) s += v;
        return m.numel() > 0 ? s / double(m.numel()) : 0.0;
    }
};

// Sorting is stable and descending: equal activations keep the lower
// original channel index first.
inline std::vector<int> descending_order(const std::vector<double>& acts) {
    std::vector<int> idx(acts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return acts[static_cast<size_t>(a)] > acts[static_cast<size_t>(b)]; });
    return idx;
}

// Core of the mass criterion over one sample's per-channel activations
// (already reduced by global max pooling of absolute values). The cumulative
// comparison runs against r * total instead of normalizing each term, which
// is the same test without the per-element division.
inline std::vector<uint8_t> heatmap_mass_mask_acts(const std::vector<double>& acts,
                                                   const MassCriterion& crit) {
    crit.validate();
    const size_t n = acts.size();
    std::vector<uint8_t> mask(n, 0);
    double total = 0.0;
    for (double a : acts) total += a;
    if (total == 0.0) return mask; // identically zero output: prune everything
    if (crit.r == 1.0) {
        for (size_t i = 0; i < n; ++i) mask[i] = acts[i] > crit.zero_eps ? 1 : 0;
        return mask;
    }
    const std::vector<int> order = descending_order(acts);
    const double threshold = crit.r * total;
    double cum = 0.0;
    for (int i : order) {
        const double next = cum + acts[static_cast<size_t>(i)];
        const bool keep = crit.inclusive_crossing ? cum < threshold : !(next > threshold);
        if (!keep) break; // cumulative mass only grows; everything after is pruned
        mask[static_cast<size_t>(i)] = 1;
        cum = next;
    }
    return mask;
}

// One sample's output maps [C,H,W] (as a [1,C,H,W] or [C,H,W] view inside a
// batch tensor is handled by the callers) -> binary keep vector.
template <typename T>
std::vector<uint8_t> heatmap_mass_mask(const TensorT<T>& single_sample_maps,
                                       const MassCriterion& crit) {
    if (single_sample_maps.ndim() != 3)
        throw ConfigError("heatmap_mass_mask expects one sample of shape [C,H,W]");
    const int C = single_sample_maps.dim(0);
    const int64_t plane = int64_t(single_sample_maps.dim(1)) * single_sample_maps.dim(2);
    std::vector<double> acts(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        const T* p = single_sample_maps.data.data() + int64_t(c) * plane;
        double best = 0.0;
        for (int64_t i = 0; i < plane; ++i) best = std::max(best, std::abs(double(p[i])));
        acts[static_cast<size_t>(c)] = best;
    }
    return heatmap_mass_mask_acts(acts, crit);
}

// Keep exactly k channels with the largest activations; ties keep the lower
// original index.
inline std::vector<uint8_t> topk_mask_acts(const std::vector<double>& acts, int k) {
    const int c = static_cast<int>(acts.size());
    if (k < 1 || k > c)
        throw ConfigError("top-k kept count " + std::to_string(k) + " out of range [1," +
                          std::to_string(c) + "]");
    std::vector<uint8_t> mask(acts.size(), 0);
    const std::vector<int> order = descending_order(acts);
    for (int i = 0; i < k; ++i) mask[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    return mask;
}

// Per-channel max of |maps| for every sample: [N,C,H,W] -> per-sample vectors.
template <typename T>
std::vector<std::vector<double>> batch_abs_gmp(const TensorT<T>& maps) {
    const int N = maps.dim(0), C = maps.dim(1);
    const int64_t plane = int64_t(maps.dim(2)) * maps.dim(3);
    std::vector<std::vector<double>> acts(static_cast<size_t>(N),
                                          std::vector<double>(static_cast<size_t>(C), 0.0));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = maps.data.data() + (int64_t(n) * C + c) * plane;
            double best = 0.0;
            for (int64_t i = 0; i < plane; ++i) best = std::max(best, std::abs(double(p[i])));
            acts[static_cast<size_t>(n)][static_cast<size_t>(c)] = best;
        }
    return acts;
}

// Derives ground-truth masks for one gated block's pre-mask outputs.
template <typename T>
TensorT<T> gt_masks_for_block(const TensorT<T>& block_output, const MaskRule& rule,
                              int gated_ordinal) {
    const int N = block_output.dim(0), C = block_output.dim(1);
    TensorT<T> out({N, C});
    const auto acts = batch_abs_gmp(block_output);
    for (int n = 0; n < N; ++n) {
        std::vector<uint8_t> m;
        if (std::holds_alternative<MassCriterion>(rule)) {
            m = heatmap_mass_mask_acts(acts[static_cast<size_t>(n)], std::get<MassCriterion>(rule));
        } else {
            const Signature& sig = std::get<Signature>(rule);
            if (gated_ordinal >= static_cast<int>(sig.kept.size()))
                throw ConfigError("signature is shorter than the number of gated layers");
            m = topk_mask_acts(acts[static_cast<size_t>(n)],
                               sig.kept[static_cast<size_t>(gated_ordinal)]);
        }
        for (int c = 0; c < C; ++c) out.at(n, c) = T(m[static_cast<size_t>(c)]);
    }
    return out;
}

// Ground-truth mask generation over a batch. Cascaded: each gated block's
// O^l is computed from the already-masked input, and the derived mask is
// applied before the next block. Un-cascaded derives every mask from one
// fully dense forward. Masks are labels, never differentiated through.
template <typename T>
MaskBatch generate_gt_masks_cascaded(NetworkT<T>& net, const TensorT<T>& batch,
                                     const MaskRule& rule, BnMode mode, bool cascaded = true) {
    const Architecture& arch = net.arch;
    MaskBatch result;
    if (!cascaded) {
        ForwardTrace<T> trace = forward_collect(net, batch, mode);
        int ord = 0;
        for (int l : arch.gated_blocks()) {
            TensorT<T> m = gt_masks_for_block(trace.blocks[static_cast<size_t>(l - 1)].output, rule, ord++);
            result.layers.push_back(m.template cast<float>());
        }
        return result;
    }
    std::vector<TensorT<T>> masks;
    int ord = 0;
    TensorT<T> cur = batch;
    for (int l = 1; l <= arch.num_blocks(); ++l) {
        const BlockSpec& spec = arch.blocks[static_cast<size_t>(l - 1)];
        ConvBlockT<T>& p = net.blocks[static_cast<size_t>(l - 1)];
        TensorT<T> z = conv2d_forward(cur, p.weight, spec.stride, spec.pad);
        if (net.folded) {
            add_channel_bias(z, p.fold_bias);
        } else {
            z = batchnorm_forward(z, p.gamma, p.beta, p.running_mean, p.running_var, T(kBnEps),
                                  T(kBnMomentum), mode == BnMode::train, static_cast<BnCache<T>*>(nullptr));
        }
        TensorT<T> o = relu(z);
        if (arch.gated(l)) {
            TensorT<T> m = gt_masks_for_block(o, rule, ord++);
            apply_channel_mask(o, m);
            masks.push_back(std::move(m));
        }
        cur = spec.pool ? maxpool2d_forward(o, 2, 2, static_cast<std::vector<int64_t>*>(nullptr))
                        : std::move(o);
    }
    for (auto& m : masks) result.layers.push_back(m.template cast<float>());
    return result;
}

} // namespace ftwt
