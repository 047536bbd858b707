#pragma once

#include <cstdint>
#include <vector>

#include "ftwt/network.hpp"
#include "ftwt/ops.hpp"
#include "ftwt/supervision.hpp"

namespace ftwt {

// Decision head for one gated block: global max pooling of the block input,
// optional softmax normalization, then a single linear map to per-filter
// logits. Costs c_{l-1} x c_l multiply-accumulates per sample.
template <typename T>
struct GatingHeadT {
    TensorT<T> weight; // [c_l, c_{l-1}]
    TensorT<T> bias;   // [c_l]
    bool use_softmax = true;

    template <typename U>
    GatingHeadT<U> cast() const {
        return {weight.template cast<U>(), bias.template cast<U>(), use_softmax};
    }
};

using GatingHead = GatingHeadT<float>;

// Heads are a pure function of (arch, seed): weights Kaiming-uniform over the
// embedding width, biases zero so initial logits sit near the keep side of
// the tie rule.
template <typename T = float>
std::vector<GatingHeadT<T>> build_heads(const Architecture& arch, uint64_t seed,
                                        bool use_softmax = true) {
    std::vector<GatingHeadT<T>> heads;
    Pcg32 rng(seed);
    for (int l : arch.gated_blocks()) {
        const BlockSpec& b = arch.blocks[static_cast<size_t>(l - 1)];
        GatingHeadT<T> h;
        h.weight = TensorT<T>({b.out_channels, b.in_channels});
        kaiming_uniform_fill(h.weight, b.in_channels, rng);
        h.bias = TensorT<T>({b.out_channels});
        h.use_softmax = use_softmax;
        heads.push_back(std::move(h));
    }
    return heads;
}

template <typename T>
struct HeadCache {
    TensorT<T> embedding;          // GMP(I^l), [N, c_{l-1}]
    TensorT<T> normalized;         // softmax(embedding) or the embedding itself
    std::vector<int64_t> gmp_argmax;
    std::vector<int> input_shape;
};

// P^l = W * softmax(GMP(I^l)) + b  (softmax skipped when use_softmax is off).
template <typename T>
TensorT<T> head_forward(const TensorT<T>& block_input, const GatingHeadT<T>& head,
                        HeadCache<T>* cache) {
    if (block_input.ndim() != 4 || block_input.dim(1) != head.weight.dim(1))
        throw ConfigError("head input has " + std::to_string(block_input.dim(1)) +
                          " channels, head expects " + std::to_string(head.weight.dim(1)));
    TensorT<T> embedding = global_max_pool(block_input, cache ? &cache->gmp_argmax : nullptr);
    TensorT<T> normalized = head.use_softmax ? softmax_rows(embedding) : embedding;
    TensorT<T> logits = linear_forward(normalized, head.weight, head.bias);
    if (cache) {
        cache->embedding = std::move(embedding);
        cache->normalized = std::move(normalized);
        cache->input_shape = block_input.shape;
    }
    return logits;
}

// Binarize = round(sigmoid(logit)): mask 1 iff sigmoid >= 0.5, i.e. logit >= 0.
// The tie at exactly 0.5 keeps the filter.
template <typename T>
TensorT<T> binarize(const TensorT<T>& logits) {
    TensorT<T> m(logits.shape);
    for (size_t i = 0; i < logits.data.size(); ++i)
        m.data[i] = logits.data[i] >= T(0) ? T(1) : T(0);
    return m;
}

enum class PredLossReduction { mean, sum };

// Numerically stable BCE-with-logits against a {0,1} target, mean over
// filters (and over samples when batched):
//   loss = max(P,0) - P*g + log(1 + exp(-|P|))
// Gradient per element is (sigmoid(P) - g) * scale.
template <typename T>
T bce_with_logits(const TensorT<T>& logits, const TensorT<T>& target, TensorT<T>* grad,
                  PredLossReduction reduction = PredLossReduction::mean) {
    if (!logits.same_shape(target)) throw ConfigError("bce_with_logits shape mismatch");
    const int64_t n_rows = logits.dim(0);
    const int64_t n_cols = logits.numel() / std::max<int64_t>(n_rows, 1);
    // mean over samples always; mean over filters only in mean reduction
    const double scale =
        1.0 / (double(n_rows) * (reduction == PredLossReduction::mean ? double(n_cols) : 1.0));
    double loss = 0.0;
    if (grad) *grad = TensorT<T>(logits.shape);
    for (size_t i = 0; i < logits.data.size(); ++i) {
        const double p = logits.data[i];
        const double g = target.data[i];
        loss += std::max(p, 0.0) - p * g + std::log1p(std::exp(-std::abs(p)));
        if (grad) grad->data[i] = T((double(sigmoid_scalar(p)) - g) * scale);
    }
    return T(loss * scale);
}

// Inference forward with the heads deciding which channels survive: at every
// gated block the head reads the (already masked) block input, its binarized
// logits multiply the block output, and the result feeds the next block.
// Works on folded and unfolded networks; eval-mode statistics.
template <typename T>
TensorT<T> dynamic_forward(NetworkT<T>& net, const std::vector<GatingHeadT<T>>& heads,
                           const TensorT<T>& batch, MaskBatch* masks_out) {
    const Architecture& arch = net.arch;
    if (heads.size() != arch.gated_blocks().size())
        throw ConfigError("dynamic_forward: head count does not match gated block count");
    TensorT<T> cur = batch;
    int ord = 0;
    for (int l = 1; l <= arch.num_blocks(); ++l) {
        const BlockSpec& spec = arch.blocks[static_cast<size_t>(l - 1)];
        ConvBlockT<T>& p = net.blocks[static_cast<size_t>(l - 1)];
        TensorT<T> mask;
        if (arch.gated(l)) {
            TensorT<T> logits = head_forward(cur, heads[static_cast<size_t>(ord)],
                                             static_cast<HeadCache<T>*>(nullptr));
            mask = binarize(logits);
            ++ord;
        }
        TensorT<T> z = conv2d_forward(cur, p.weight, spec.stride, spec.pad);
        if (net.folded) {
            add_channel_bias(z, p.fold_bias);
        } else {
            z = batchnorm_forward(z, p.gamma, p.beta, p.running_mean, p.running_var, T(kBnEps),
                                  T(kBnMomentum), false, static_cast<BnCache<T>*>(nullptr));
        }
        TensorT<T> o = relu(z);
        if (!mask.empty()) {
            apply_channel_mask(o, mask);
            if (masks_out) masks_out->layers.push_back(mask.template cast<float>());
        }
        cur = spec.pool ? maxpool2d_forward(o, 2, 2, static_cast<std::vector<int64_t>*>(nullptr))
                        : std::move(o);
    }
    TensorT<T> v = global_avg_pool(cur);
    for (size_t i = 0; i < net.classifier.size(); ++i) {
        v = linear_forward(v, net.classifier[i].weight, net.classifier[i].bias);
        if (i + 1 < net.classifier.size()) v = relu(v);
    }
    return v;
}

// Gradients of the head parameters given d(loss)/d(logits). When
// `block_input_grad` is non-null (joint training), the gradient also flows
// through the linear map, the softmax and the max-pool back into I^l;
// decoupled training passes null and the backbone never sees it.
template <typename T>
void head_backward(const TensorT<T>& dlogits, const GatingHeadT<T>& head, const HeadCache<T>& cache,
                   TensorT<T>& dweight, TensorT<T>& dbias, TensorT<T>* block_input_grad) {
    if (cache.normalized.empty()) throw ConfigError("head_backward requires a forward cache");
    TensorT<T> dnormalized;
    linear_backward(cache.normalized, head.weight, dlogits, dnormalized, dweight, dbias);
    if (!block_input_grad) return;
    TensorT<T> dembedding = head.use_softmax
                                ? softmax_rows_backward(cache.normalized, dnormalized)
                                : std::move(dnormalized);
    TensorT<T> dinput = global_max_pool_backward(cache.input_shape, cache.gmp_argmax, dembedding);
    if (block_input_grad->empty()) {
        *block_input_grad = std::move(dinput);
    } else {
        for (size_t i = 0; i < dinput.data.size(); ++i)
            block_input_grad->data[i] += dinput.data[i];
    }
}

} // namespace ftwt
