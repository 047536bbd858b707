#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ftwt/gating.hpp"
#include "ftwt/network.hpp"
#include "ftwt/supervision.hpp"

namespace ftwt {

enum class TrainMode { baseline, decoupled, joint };
enum class MaskSource { predicted, ground_truth };

// L_total = L_ent + L_pred with no balancing weight.
struct LossReport {
    double l_ent = 0.0;
    double l_pred = 0.0;
    double l_total = 0.0;
    double head_accuracy = 0.0; // fraction of filters where binarize(P) == g
};

struct TrainConfig {
    TrainMode mode = TrainMode::baseline;
    int epochs = 20;
    int batch_size = 128;
    double lr = 0.1;      // backbone
    double head_lr = 0.1; // decision heads
    std::vector<int> milestones = {8, 12, 15};
    double lr_decay = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    uint64_t seed = 1;
    MaskSource mask_source = MaskSource::predicted;
    PredLossReduction pred_reduction = PredLossReduction::mean;
    bool from_scratch = false;
    bool use_softmax = true;

    void validate() const {
        if (epochs < 0 || batch_size < 1) throw ConfigError("bad epochs/batch_size");
        for (size_t i = 1; i < milestones.size(); ++i)
            if (milestones[i] <= milestones[i - 1])
                throw ConfigError("lr milestones must be strictly increasing");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    }
};

// Step decay: lr0 * decay^(number of milestones <= epoch).
inline double lr_schedule(int epoch, double lr0, const std::vector<int>& milestones, double decay) {
    double lr = lr0;
    for (int m : milestones)
        if (epoch >= m) lr *= decay;
    return lr;
}

// Gradient (and optimizer-velocity) container mirroring the trainable
// parameters of a network plus its heads.
template <typename T>
struct ParamGrads {
    std::vector<TensorT<T>> conv_w, bn_gamma, bn_beta;
    std::vector<TensorT<T>> fc_w, fc_b;
    std::vector<TensorT<T>> head_w, head_b;

    static ParamGrads zeros_like(const NetworkT<T>& net, const std::vector<GatingHeadT<T>>& heads) {
        ParamGrads g;
        for (const auto& b : net.blocks) {
            g.conv_w.emplace_back(b.weight.shape);
            g.bn_gamma.emplace_back(b.gamma.shape);
            g.bn_beta.emplace_back(b.beta.shape);
        }
        for (const auto& l : net.classifier) {
            g.fc_w.emplace_back(l.weight.shape);
            g.fc_b.emplace_back(l.bias.shape);
        }
        for (const auto& h : heads) {
            g.head_w.emplace_back(h.weight.shape);
            g.head_b.emplace_back(h.bias.shape);
        }
        return g;
    }
};

struct StepOptions {
    TrainMode mode = TrainMode::decoupled;
    MaskSource mask_source = MaskSource::predicted;
    MaskRule rule = MassCriterion{};
    PredLossReduction pred_reduction = PredLossReduction::mean;
    // Test hook: replaces binarize by a plain sigmoid in the forward, making
    // the straight-through backward the exact gradient of the pass. Used by
    // the finite-difference oracle, never by training.
    bool surrogate_sigmoid_mask = false;
    // Test hook: treat these masks as the ground-truth labels instead of
    // deriving them from the current activations (labels are constants, so a
    // perturbation study must hold them fixed).
    const MaskBatch* fixed_gt = nullptr;
};

template <typename T>
struct StepStats {
    LossReport loss;
    int correct = 0;
    std::vector<double> keep_rates; // mean of the masks applied in the forward
    MaskBatch predicted;
    MaskBatch ground_truth;
};

// One combined forward/backward pass of the total objective over a batch.
//
// The forward applies the configured mask source after every gated block's
// ReLU. Ground-truth masks are derived from the same pass's pre-mask outputs
// and treated as constants. Decoupled mode: the backbone gradient comes from
// the task loss with masks held constant, the head gradient from the
// prediction loss only, and nothing crosses. Joint mode: one backward of the
// total loss where binarize passes gradient through the rounding (slope 1)
// while the sigmoid keeps its true derivative, so d(mask)/d(logit) =
// sigmoid'(logit); head gradients continue through the softmax and max-pool
// adjoints into the backbone input.
template <typename T>
StepStats<T> masked_training_pass(NetworkT<T>& net, std::vector<GatingHeadT<T>>& heads,
                                  const TensorT<T>& batch, const std::vector<int>& labels,
                                  const StepOptions& opt, ParamGrads<T>& grads) {
    const Architecture& arch = net.arch;
    const int N = batch.dim(0);
    const bool gating_active = opt.mode != TrainMode::baseline;
    const std::vector<int> gated = arch.gated_blocks();
    if (gating_active && heads.size() != gated.size())
        throw ConfigError("head count does not match gated block count");

    StepStats<T> stats;
    std::vector<BlockTrace<T>> blocks(static_cast<size_t>(arch.num_blocks()));
    std::vector<HeadCache<T>> head_caches(heads.size());
    std::vector<TensorT<T>> head_logits(heads.size());
    std::vector<TensorT<T>> masks(heads.size());
    std::vector<TensorT<T>> gts(heads.size());

    // ---- forward ----
    TensorT<T> cur = batch;
    int ord = 0;
    for (int l = 1; l <= arch.num_blocks(); ++l) {
        const BlockSpec& spec = arch.blocks[static_cast<size_t>(l - 1)];
        ConvBlockT<T>& p = net.blocks[static_cast<size_t>(l - 1)];
        BlockTrace<T>& bt = blocks[static_cast<size_t>(l - 1)];
        bt.input = std::move(cur);
        const bool g_here = gating_active && arch.gated(l);
        if (g_here)
            head_logits[static_cast<size_t>(ord)] =
                head_forward(bt.input, heads[static_cast<size_t>(ord)], &head_caches[static_cast<size_t>(ord)]);
        bt.conv_out = conv2d_forward(bt.input, p.weight, spec.stride, spec.pad);
        TensorT<T> normed = batchnorm_forward(bt.conv_out, p.gamma, p.beta, p.running_mean,
                                              p.running_var, T(kBnEps), T(kBnMomentum), true, &bt.bn);
        bt.output = relu(normed);
        TensorT<T> staged = bt.output;
        if (g_here) {
            TensorT<T>& gt = gts[static_cast<size_t>(ord)];
            if (opt.fixed_gt) {
                gt = opt.fixed_gt->layers[static_cast<size_t>(ord)].template cast<T>();
            } else {
                gt = gt_masks_for_block(bt.output, opt.rule, ord);
            }
            TensorT<T>& m = masks[static_cast<size_t>(ord)];
            if (opt.mask_source == MaskSource::ground_truth) {
                m = gt;
            } else {
                m = opt.surrogate_sigmoid_mask ? sigmoid(head_logits[static_cast<size_t>(ord)])
                                               : binarize(head_logits[static_cast<size_t>(ord)]);
            }
            apply_channel_mask(staged, m);
            ++ord;
        }
        cur = spec.pool ? maxpool2d_forward(staged, 2, 2, &bt.pool_argmax) : std::move(staged);
    }
    TensorT<T> features = global_avg_pool(cur);
    std::vector<TensorT<T>> fc_in, fc_out;
    TensorT<T> v = features;
    for (size_t i = 0; i < net.classifier.size(); ++i) {
        fc_in.push_back(v);
        TensorT<T> out = linear_forward(v, net.classifier[i].weight, net.classifier[i].bias);
        if (i + 1 < net.classifier.size()) out = relu(out);
        fc_out.push_back(out);
        v = fc_out.back();
    }
    const TensorT<T>& logits = v;

    // ---- losses ----
    TensorT<T> probs;
    stats.loss.l_ent = cross_entropy_with_logits(logits, labels, &probs);
    std::vector<TensorT<T>> dP_bce(heads.size());
    double pred_loss = 0.0;
    int64_t head_hits = 0, head_total = 0;
    const double layer_scale =
        (opt.pred_reduction == PredLossReduction::mean && !heads.empty()) ? 1.0 / double(heads.size())
                                                                          : 1.0;
    if (gating_active) {
        for (size_t i = 0; i < heads.size(); ++i) {
            pred_loss += layer_scale * double(bce_with_logits(head_logits[i], gts[i], &dP_bce[i],
                                                              opt.pred_reduction));
            for (auto& gv : dP_bce[i].data) gv = T(double(gv) * layer_scale);
            TensorT<T> bin = binarize(head_logits[i]);
            for (size_t j = 0; j < bin.data.size(); ++j)
                head_hits += bin.data[j] == gts[i].data[j] ? 1 : 0;
            head_total += bin.numel();
        }
    }
    stats.loss.l_pred = pred_loss;
    stats.loss.l_total = stats.loss.l_ent + stats.loss.l_pred;
    stats.loss.head_accuracy = head_total > 0 ? double(head_hits) / double(head_total) : 1.0;
    for (int n = 0; n < N; ++n) {
        int best = 0;
        for (int c = 1; c < arch.num_classes; ++c)
            if (logits.at(n, c) > logits.at(n, best)) best = c;
        stats.correct += best == labels[static_cast<size_t>(n)] ? 1 : 0;
    }

    // ---- backward ----
    TensorT<T> dlogits = cross_entropy_backward(probs, labels);
    TensorT<T> dcur_vec = std::move(dlogits);
    for (size_t i = net.classifier.size(); i-- > 0;) {
        if (i + 1 < net.classifier.size()) dcur_vec = relu_backward(fc_out[i], dcur_vec);
        TensorT<T> dx;
        linear_backward(fc_in[i], net.classifier[i].weight, dcur_vec, dx, grads.fc_w[i], grads.fc_b[i]);
        dcur_vec = std::move(dx);
    }
    // shape of the final pooled map feeding GAP
    std::vector<int> gap_in_shape;
    {
        int h, w;
        arch.spatial_after(arch.num_blocks(), h, w);
        gap_in_shape = {N, arch.blocks.back().out_channels, h, w};
    }
    TensorT<T> dnext = global_avg_pool_backward(gap_in_shape, dcur_vec);

    ord = static_cast<int>(heads.size());
    for (int l = arch.num_blocks(); l >= 1; --l) {
        const BlockSpec& spec = arch.blocks[static_cast<size_t>(l - 1)];
        ConvBlockT<T>& p = net.blocks[static_cast<size_t>(l - 1)];
        BlockTrace<T>& bt = blocks[static_cast<size_t>(l - 1)];
        TensorT<T> dstaged = spec.pool
                                 ? maxpool2d_backward(bt.output.shape, bt.pool_argmax, dnext)
                                 : std::move(dnext);
        const bool g_here = gating_active && arch.gated(l);
        TensorT<T> dO;
        TensorT<T> dinput_extra; // joint-mode head path into I^l
        if (g_here) {
            --ord;
            const TensorT<T>& m = masks[static_cast<size_t>(ord)];
            dO = dstaged;
            apply_channel_mask(dO, m); // d(O*M)/dO = M
            TensorT<T> dP = dP_bce[static_cast<size_t>(ord)];
            if (opt.mode == TrainMode::joint) {
                // d(loss)/dM, reduced over spatial positions
                const int C = bt.output.dim(1);
                const int64_t plane = int64_t(bt.output.dim(2)) * bt.output.dim(3);
                TensorT<T> dM({N, C});
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const T* po = bt.output.data.data() + (int64_t(n) * C + c) * plane;
                        const T* pu = dstaged.data.data() + (int64_t(n) * C + c) * plane;
                        double s = 0.0;
                        for (int64_t i = 0; i < plane; ++i) s += double(pu[i]) * po[i];
                        dM.at(n, c) = T(s);
                    }
                // straight-through: rounding passes gradient, sigmoid keeps its slope
                const TensorT<T>& P = head_logits[static_cast<size_t>(ord)];
                for (size_t i = 0; i < dP.data.size(); ++i) {
                    const T s = sigmoid_scalar(P.data[i]);
                    dP.data[i] += dM.data[i] * s * (T(1) - s);
                }
            }
            head_backward(dP, heads[static_cast<size_t>(ord)], head_caches[static_cast<size_t>(ord)],
                          grads.head_w[static_cast<size_t>(ord)], grads.head_b[static_cast<size_t>(ord)],
                          opt.mode == TrainMode::joint ? &dinput_extra : nullptr);
        } else {
            dO = std::move(dstaged);
        }
        TensorT<T> dnormed = relu_backward(bt.output, dO);
        TensorT<T> dconv, dgamma, dbeta;
        batchnorm_backward(bt.conv_out, p.gamma, bt.bn, dnormed, dconv, dgamma, dbeta);
        grads.bn_gamma[static_cast<size_t>(l - 1)] = std::move(dgamma);
        grads.bn_beta[static_cast<size_t>(l - 1)] = std::move(dbeta);
        TensorT<T> dinput;
        conv2d_backward(bt.input, p.weight, spec.stride, spec.pad, dconv, dinput,
                        grads.conv_w[static_cast<size_t>(l - 1)]);
        if (!dinput_extra.empty())
            for (size_t i = 0; i < dinput.data.size(); ++i) dinput.data[i] += dinput_extra.data[i];
        dnext = std::move(dinput);
    }

    // ---- bookkeeping for callers ----
    for (size_t i = 0; i < masks.size(); ++i) {
        double keep = 0.0;
        for (const T& mv : masks[i].data) keep += double(mv);
        stats.keep_rates.push_back(masks[i].numel() > 0 ? keep / double(masks[i].numel()) : 1.0);
        stats.predicted.layers.push_back(
            (opt.mask_source == MaskSource::predicted && !opt.surrogate_sigmoid_mask
                 ? masks[i]
                 : binarize(head_logits[i]))
                .template cast<float>());
        stats.ground_truth.layers.push_back(gts[i].template cast<float>());
    }
    return stats;
}

} // namespace ftwt
