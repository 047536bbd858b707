#pragma once

#include <cstdint>
#include <vector>

#include "ftwt/architecture.hpp"
#include "ftwt/ops.hpp"
#include "ftwt/rng.hpp"
#include "ftwt/tensor.hpp"

namespace ftwt {

template <typename T>
struct ConvBlockT {
    TensorT<T> weight;       // [out,in,k,k]
    TensorT<T> gamma, beta;  // [out]
    TensorT<T> running_mean, running_var;
    TensorT<T> fold_bias;    // [out], non-empty only after folding
};

template <typename T>
struct LinearLayerT {
    TensorT<T> weight; // [out,in]
    TensorT<T> bias;   // [out]
};

template <typename T>
struct NetworkT {
    Architecture arch;
    std::vector<ConvBlockT<T>> blocks;
    std::vector<LinearLayerT<T>> classifier;
    bool folded = false;

    template <typename U>
    NetworkT<U> cast() const {
        NetworkT<U> out;
        out.arch = arch;
        out.folded = folded;
        for (const auto& b : blocks)
            out.blocks.push_back({b.weight.template cast<U>(), b.gamma.template cast<U>(),
                                  b.beta.template cast<U>(), b.running_mean.template cast<U>(),
                                  b.running_var.template cast<U>(), b.fold_bias.template cast<U>()});
        for (const auto& l : classifier)
            out.classifier.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
        return out;
    }
};

using Network = NetworkT<float>;

// Kaiming-uniform bound for fan-in f: sqrt(6/f).
template <typename T>
void kaiming_uniform_fill(TensorT<T>& t, int fan_in, Pcg32& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in));
    for (T& v : t.data) v = T(bound * (2.0 * rng.next_double() - 1.0));
}

// All parameters are a pure function of (arch, seed): one PCG32 stream,
// tensors drawn in block order then classifier order.
template <typename T = float>
NetworkT<T> build_network(const Architecture& arch, uint64_t seed) {
    arch.validate();
    NetworkT<T> net;
    net.arch = arch;
    Pcg32 rng(seed);
    for (const BlockSpec& b : arch.blocks) {
        ConvBlockT<T> blk;
        blk.weight = TensorT<T>({b.out_channels, b.in_channels, b.kernel, b.kernel});
        kaiming_uniform_fill(blk.weight, b.in_channels * b.kernel * b.kernel, rng);
        blk.gamma = TensorT<T>::full({b.out_channels}, T(1));
        blk.beta = TensorT<T>({b.out_channels});
        blk.running_mean = TensorT<T>({b.out_channels});
        blk.running_var = TensorT<T>::full({b.out_channels}, T(1));
        net.blocks.push_back(std::move(blk));
    }
    int width = arch.blocks.back().out_channels; // GAP output width
    std::vector<int> dims = arch.classifier_hidden;
    dims.push_back(arch.num_classes);
    for (int out : dims) {
        LinearLayerT<T> l;
        l.weight = TensorT<T>({out, width});
        kaiming_uniform_fill(l.weight, width, rng);
        l.bias = TensorT<T>({out});
        net.classifier.push_back(std::move(l));
        width = out;
    }
    return net;
}

enum class BnMode { train, eval };

// Channel-wise broadcast multiply of a [N,C] 0/1 matrix into an NCHW map.
template <typename T>
void apply_channel_mask(TensorT<T>& x, const TensorT<T>& mask) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t plane = int64_t(x.dim(2)) * x.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T m = mask.at(n, c);
            if (m == T(1)) continue;
            T* p = x.data.data() + (int64_t(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) p[i] *= m;
        }
}

template <typename T>
struct BlockTrace {
    TensorT<T> input;    // I^l: what the block's conv consumed
    TensorT<T> conv_out; // pre-normalization
    BnCache<T> bn;
    TensorT<T> output;   // O^l: post-ReLU, pre-mask, pre-pool
    std::vector<int64_t> pool_argmax; // empty when the block has no pool
};

template <typename T>
struct ForwardTrace {
    std::vector<BlockTrace<T>> blocks;
    TensorT<T> features;               // GAP output [N,C]
    std::vector<TensorT<T>> fc_inputs; // input to each classifier layer
    std::vector<TensorT<T>> fc_outputs;
    TensorT<T> logits;
};

// Full forward pass recording per-block inputs and outputs. `masks`, when
// given, holds one [N,c_l] 0/1 tensor per gated block (in gated order) and is
// applied channel-wise to O^l before pooling and before block l+1; O^l itself
// is recorded pre-mask. Train mode updates BN running stats.
template <typename T>
ForwardTrace<T> forward_collect(NetworkT<T>& net, const TensorT<T>& batch, BnMode mode,
                                const std::vector<TensorT<T>>* masks = nullptr) {
    const Architecture& arch = net.arch;
    if (batch.ndim() != 4 || batch.dim(1) != arch.in_channels || batch.dim(2) != arch.in_h ||
        batch.dim(3) != arch.in_w)
        throw ConfigError("batch shape " + shape_str(batch.shape) + " does not match architecture input");
    if (net.folded && mode == BnMode::train)
        throw ConfigError("cannot run a folded network in train mode");
    const int N = batch.dim(0);
    ForwardTrace<T> trace;
    trace.blocks.resize(arch.blocks.size());
    TensorT<T> cur = batch;
    int gated_idx = 0;
    for (int l = 1; l <= arch.num_blocks(); ++l) {
        const BlockSpec& spec = arch.blocks[static_cast<size_t>(l - 1)];
        ConvBlockT<T>& p = net.blocks[static_cast<size_t>(l - 1)];
        BlockTrace<T>& bt = trace.blocks[static_cast<size_t>(l - 1)];
        bt.input = std::move(cur);
        bt.conv_out = conv2d_forward(bt.input, p.weight, spec.stride, spec.pad);
        TensorT<T> normed;
        if (net.folded) {
            normed = bt.conv_out;
            add_channel_bias(normed, p.fold_bias);
        } else {
            normed = batchnorm_forward(bt.conv_out, p.gamma, p.beta, p.running_mean, p.running_var,
                                       T(kBnEps), T(kBnMomentum), mode == BnMode::train, &bt.bn);
        }
        bt.output = relu(normed);
        TensorT<T> staged = bt.output;
        if (arch.gated(l) && masks) {
            const TensorT<T>& m = (*masks)[static_cast<size_t>(gated_idx)];
            if (m.ndim() != 2 || m.dim(0) != N || m.dim(1) != spec.out_channels)
                throw ConfigError("mask shape " + shape_str(m.shape) + " does not match block " +
                                  std::to_string(l));
            apply_channel_mask(staged, m);
        }
        if (arch.gated(l)) ++gated_idx;
        cur = spec.pool ? maxpool2d_forward(staged, 2, 2, &bt.pool_argmax) : std::move(staged);
    }
    trace.features = global_avg_pool(cur);
    TensorT<T> v = trace.features;
    for (size_t i = 0; i < net.classifier.size(); ++i) {
        trace.fc_inputs.push_back(v);
        TensorT<T> out = linear_forward(v, net.classifier[i].weight, net.classifier[i].bias);
        // hidden classifier layers take ReLU; the final one emits logits
        if (i + 1 < net.classifier.size()) out = relu(out);
        trace.fc_outputs.push_back(out);
        v = trace.fc_outputs.back();
    }
    trace.logits = v;
    return trace;
}

// Absorbs the eval-mode normalization into conv weights plus a per-channel
// additive term: scale = gamma/sqrt(var+eps), bias = beta - mean*scale.
template <typename T>
NetworkT<T> fold_batchnorm(const NetworkT<T>& net) {
    if (net.folded) throw ConfigError("network is already folded");
    NetworkT<T> out = net;
    out.folded = true;
    for (auto& b : out.blocks) {
        const int C = b.weight.dim(0);
        const int64_t per_filter = b.weight.numel() / C;
        b.fold_bias = TensorT<T>({C});
        for (int c = 0; c < C; ++c) {
            const double inv = 1.0 / std::sqrt(double(b.running_var[c]) + kBnEps);
            const double scale = double(b.gamma[c]) * inv;
            T* w = b.weight.data.data() + int64_t(c) * per_filter;
            for (int64_t i = 0; i < per_filter; ++i) w[i] = T(double(w[i]) * scale);
            b.fold_bias[c] = T(double(b.beta[c]) - double(b.running_mean[c]) * scale);
        }
        b.gamma = TensorT<T>();
        b.beta = TensorT<T>();
        b.running_mean = TensorT<T>();
        b.running_var = TensorT<T>();
    }
    return out;
}

} // namespace ftwt
