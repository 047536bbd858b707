#include "ftwt/efficiency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#ifdef __linux__
#include <sched.h>
#endif

namespace ftwt {

namespace {

// Spatial extent of every block's conv output (pre-pool), plus the running
// input extents.
struct BlockGeometry {
    int conv_h, conv_w; // conv output
};

std::vector<BlockGeometry> block_geometry(const Architecture& arch) {
    std::vector<BlockGeometry> g;
    int h = arch.in_h, w = arch.in_w;
    for (const BlockSpec& b : arch.blocks) {
        const int ch = (h + 2 * b.pad - b.kernel) / b.stride + 1;
        const int cw = (w + 2 * b.pad - b.kernel) / b.stride + 1;
        g.push_back({ch, cw});
        h = b.pool ? (ch - 2) / 2 + 1 : ch;
        w = b.pool ? (cw - 2) / 2 + 1 : cw;
    }
    return g;
}

} // namespace

std::vector<int64_t> dense_block_macs(const Architecture& arch) {
    std::vector<int64_t> macs;
    const auto geo = block_geometry(arch);
    for (size_t i = 0; i < arch.blocks.size(); ++i) {
        const BlockSpec& b = arch.blocks[i];
        macs.push_back(int64_t(geo[i].conv_h) * geo[i].conv_w * b.kernel * b.kernel *
                       b.in_channels * b.out_channels);
    }
    return macs;
}

int64_t dense_classifier_macs(const Architecture& arch) {
    int64_t macs = 0;
    int width = arch.blocks.back().out_channels;
    std::vector<int> dims = arch.classifier_hidden;
    dims.push_back(arch.num_classes);
    for (int out : dims) {
        macs += int64_t(width) * out;
        width = out;
    }
    return macs;
}

int64_t head_overhead_macs(const Architecture& arch) {
    int64_t macs = 0;
    for (int l : arch.gated_blocks()) {
        const BlockSpec& b = arch.blocks[static_cast<size_t>(l - 1)];
        macs += int64_t(b.in_channels) * b.out_channels;
    }
    return macs;
}

namespace {

// Accounting shared by the estimator and the post-training measurement:
// per-sample conv MACs with kept input channels |m^{l-1}| and kept output
// channels |m^l|; ungated ends use the full channel count.
FlopsReport accounted_report(const Architecture& arch,
                             const std::vector<std::vector<std::vector<int>>>& kept_per_batch,
                             int64_t n_samples) {
    FlopsReport r;
    r.dense_per_block = dense_block_macs(arch);
    r.dense_classifier = dense_classifier_macs(arch);
    r.dense_total = r.dense_classifier;
    for (int64_t m : r.dense_per_block) r.dense_total += m;
    r.head_overhead = double(head_overhead_macs(arch));

    const auto geo = block_geometry(arch);
    const auto gated = arch.gated_blocks();
    std::vector<double> block_sums(arch.blocks.size(), 0.0);
    std::vector<double> keep_sums(gated.size(), 0.0);
    for (const auto& batch : kept_per_batch) {
        const size_t bn = batch.empty() ? 0 : batch[0].size();
        for (size_t s = 0; s < bn; ++s) {
            int ord = 0;
            for (int l = 1; l <= arch.num_blocks(); ++l) {
                const BlockSpec& b = arch.blocks[static_cast<size_t>(l - 1)];
                int kept_in = b.in_channels, kept_out = b.out_channels;
                if (arch.gated(l - 1)) {
                    // previous block's mask thins this block's input
                    const int prev_ord = ord - 1;
                    kept_in = batch[static_cast<size_t>(prev_ord)][s];
                }
                if (arch.gated(l)) {
                    kept_out = batch[static_cast<size_t>(ord)][s];
                    keep_sums[static_cast<size_t>(ord)] += double(kept_out) / b.out_channels;
                    ++ord;
                }
                block_sums[static_cast<size_t>(l - 1)] +=
                    double(geo[static_cast<size_t>(l - 1)].conv_h) * geo[static_cast<size_t>(l - 1)].conv_w *
                    b.kernel * b.kernel * double(kept_in) * double(kept_out);
            }
        }
    }
    r.dynamic_total = double(r.dense_classifier) + r.head_overhead;
    for (double s : block_sums) {
        r.dynamic_per_block.push_back(s / double(n_samples));
        r.dynamic_total += s / double(n_samples);
    }
    for (double s : keep_sums) r.mean_keep_per_layer.push_back(s / double(n_samples));
    r.reduction_percent = 100.0 * (1.0 - r.dynamic_total / double(r.dense_total));
    return r;
}

std::vector<std::vector<int>> kept_counts(const MaskBatch& masks) {
    std::vector<std::vector<int>> kept(masks.layers.size());
    for (size_t l = 0; l < masks.layers.size(); ++l) {
        const Tensor& m = masks.layers[l];
        for (int n = 0; n < m.dim(0); ++n) kept[l].push_back(masks.kept(static_cast<int>(l), n));
    }
    return kept;
}

} // namespace

FlopsReport estimate_reduction_pretraining(Network& net, const Dataset& ds, const MaskRule& rule,
                                           bool cascaded, int batch_size) {
    if (ds.size() == 0) throw DataError("estimate: empty dataset");
    std::vector<std::vector<std::vector<int>>> per_batch;
    for (int start = 0; start < ds.size(); start += batch_size) {
        std::vector<int> idx;
        for (int i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
        Tensor batch = make_batch(ds, idx);
        MaskBatch masks = generate_gt_masks_cascaded(net, batch, rule, BnMode::eval, cascaded);
        per_batch.push_back(kept_counts(masks));
    }
    return accounted_report(net.arch, per_batch, ds.size());
}

FlopsReport measured_flops_post_training(Network& net, const std::vector<GatingHead>& heads,
                                         const Dataset& ds, int batch_size) {
    if (ds.size() == 0) throw DataError("measured flops: empty dataset");
    std::vector<std::vector<std::vector<int>>> per_batch;
    for (int start = 0; start < ds.size(); start += batch_size) {
        std::vector<int> idx;
        for (int i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
        Tensor batch = make_batch(ds, idx);
        MaskBatch masks;
        dynamic_forward(net, heads, batch, &masks);
        per_batch.push_back(kept_counts(masks));
    }
    return accounted_report(net.arch, per_batch, ds.size());
}

// ---------------------------------------------------------------------------
// sliced inference
// ---------------------------------------------------------------------------

SlicedResult sliced_inference(const Network& folded, const std::vector<GatingHead>* heads,
                              const std::vector<std::vector<uint8_t>>* fixed_masks,
                              const Tensor& image) {
    if (!folded.folded) throw ConfigError("sliced_inference requires a folded network");
    const Architecture& arch = folded.arch;
    if (image.ndim() != 4 || image.dim(0) != 1)
        throw ConfigError("sliced_inference runs one image at a time");
    const auto gated = arch.gated_blocks();
    if (heads && heads->size() != gated.size())
        throw ConfigError("sliced_inference: head count mismatch");
    if (fixed_masks && fixed_masks->size() != gated.size())
        throw ConfigError("sliced_inference: fixed mask count mismatch");

    SlicedResult result;
    result.total_macs = 0;

    // compact feature map: rows follow `active`, absent channels are zero
    std::vector<int> active(static_cast<size_t>(arch.in_channels));
    for (size_t i = 0; i < active.size(); ++i) active[i] = static_cast<int>(i);
    Tensor feat({1, arch.in_channels, arch.in_h, arch.in_w});
    feat.data = image.data;
    int ord = 0;
    for (int l = 1; l <= arch.num_blocks(); ++l) {
        const BlockSpec& spec = arch.blocks[static_cast<size_t>(l - 1)];
        const ConvBlockT<float>& p = folded.blocks[static_cast<size_t>(l - 1)];
        std::vector<int> kept_out;
        if (arch.gated(l)) {
            std::vector<uint8_t> mask;
            if (fixed_masks) {
                mask = (*fixed_masks)[static_cast<size_t>(ord)];
                if (static_cast<int>(mask.size()) != spec.out_channels)
                    throw ConfigError("fixed mask length mismatch at block " + std::to_string(l));
            } else {
                // head reads the full-width embedding; skipped channels are zero
                Tensor embedding({1, spec.in_channels});
                for (size_t a = 0; a < active.size(); ++a) {
                    const float* plane = feat.data.data() +
                                         int64_t(a) * feat.dim(2) * feat.dim(3);
                    float best = plane[0];
                    for (int64_t i = 1; i < int64_t(feat.dim(2)) * feat.dim(3); ++i)
                        best = std::max(best, plane[i]);
                    embedding.at(0, active[a]) = best;
                }
                const GatingHead& head = (*heads)[static_cast<size_t>(ord)];
                Tensor normalized = head.use_softmax ? softmax_rows(embedding) : embedding;
                Tensor logits = linear_forward(normalized, head.weight, head.bias);
                Tensor bin = binarize(logits);
                mask.resize(static_cast<size_t>(spec.out_channels));
                for (int c = 0; c < spec.out_channels; ++c)
                    mask[static_cast<size_t>(c)] = bin.at(0, c) != 0.0f ? 1 : 0;
                result.total_macs += int64_t(spec.in_channels) * spec.out_channels;
            }
            for (int c = 0; c < spec.out_channels; ++c)
                if (mask[static_cast<size_t>(c)]) kept_out.push_back(c);
            ++ord;
        } else {
            kept_out.resize(static_cast<size_t>(spec.out_channels));
            for (size_t i = 0; i < kept_out.size(); ++i) kept_out[i] = static_cast<int>(i);
        }

        // slice the kernel to surviving input x output channels
        const int k = spec.kernel;
        const int ci = static_cast<int>(active.size());
        const int co = static_cast<int>(kept_out.size());
        Tensor wslice({co, ci, k, k});
        for (int o = 0; o < co; ++o)
            for (int i = 0; i < ci; ++i)
                for (int y = 0; y < k; ++y)
                    for (int x = 0; x < k; ++x)
                        wslice.at(o, i, y, x) = p.weight.at(kept_out[static_cast<size_t>(o)],
                                                            active[static_cast<size_t>(i)], y, x);
        Tensor z = conv2d_forward(feat, wslice, spec.stride, spec.pad);
        for (int o = 0; o < co; ++o) {
            float* plane = z.data.data() + int64_t(o) * z.dim(2) * z.dim(3);
            const float b = p.fold_bias[kept_out[static_cast<size_t>(o)]];
            for (int64_t i = 0; i < int64_t(z.dim(2)) * z.dim(3); ++i)
                plane[i] = std::max(plane[i] + b, 0.0f);
        }
        const int64_t conv_macs = int64_t(z.dim(2)) * z.dim(3) * k * k * ci * co;
        result.conv_macs_per_block.push_back(conv_macs);
        result.total_macs += conv_macs;

        feat = spec.pool
                   ? maxpool2d_forward(z, 2, 2, static_cast<std::vector<int64_t>*>(nullptr))
                   : std::move(z);
        active = std::move(kept_out);
    }

    // scatter surviving channels into the full-width feature vector
    Tensor features({1, arch.blocks.back().out_channels});
    const int64_t plane = int64_t(feat.dim(2)) * feat.dim(3);
    for (size_t a = 0; a < active.size(); ++a) {
        const float* p = feat.data.data() + int64_t(a) * plane;
        double s = 0.0;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
        features.at(0, active[a]) = float(s / double(plane));
    }
    Tensor v = features;
    for (size_t i = 0; i < folded.classifier.size(); ++i) {
        v = linear_forward(v, folded.classifier[i].weight, folded.classifier[i].bias);
        if (i + 1 < folded.classifier.size()) v = relu(v);
    }
    result.total_macs += dense_classifier_macs(arch);
    result.logits = std::move(v);
    return result;
}

// ---------------------------------------------------------------------------
// latency benchmark
// ---------------------------------------------------------------------------

namespace {

bool pin_to_single_cpu() {
#ifdef __linux__
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(0, &set);
    if (sched_setaffinity(0, sizeof(set), &set) != 0) {
        // fall back to whatever CPU we are on now
        CPU_ZERO(&set);
        CPU_SET(sched_getcpu() >= 0 ? sched_getcpu() : 0, &set);
        return sched_setaffinity(0, sizeof(set), &set) == 0;
    }
    return true;
#else
    return false;
#endif
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

LatencyReport latency_benchmark(const Network& folded, const std::vector<GatingHead>& heads,
                                const Dataset& images, int n_images, int reps, int warmup) {
    if (!folded.folded) throw ConfigError("latency_benchmark requires a folded network");
    if (reps < 30) throw ConfigError("latency_benchmark needs >= 30 repetitions");
    if (warmup < 5) throw ConfigError("latency_benchmark needs >= 5 warmup passes");
    if (!pin_to_single_cpu()) throw ConfigError("failed to pin the benchmark to a single CPU");
    n_images = std::min(n_images, images.size());
    if (n_images < 1) throw DataError("latency_benchmark: no images");

    std::vector<Tensor> batch1;
    for (int i = 0; i < n_images; ++i) batch1.push_back(make_batch(images, {i}));

    Network dense = folded; // dense path ignores the heads
    Network dynamic_net = folded;

    auto dense_once = [&](const Tensor& img) {
        ForwardTrace<float> t = forward_collect(dense, img, BnMode::eval);
        return t.logits.at(0, 0);
    };
    auto dynamic_once = [&](const Tensor& img) {
        SlicedResult r = sliced_inference(dynamic_net, &heads, nullptr, img);
        return r.logits.at(0, 0);
    };

    using clock = std::chrono::steady_clock;
    volatile float sink = 0.0f;

    // calibrate an inner-loop factor so one timed chunk is at least 100us
    auto calibrate = [&](auto&& fn) {
        const auto t0 = clock::now();
        for (int i = 0; i < n_images; ++i) sink = fn(batch1[static_cast<size_t>(i)]);
        const double per = std::chrono::duration<double>(clock::now() - t0).count() / n_images;
        return per < 100e-6 ? static_cast<int>(std::ceil(100e-6 / std::max(per, 1e-9))) : 1;
    };
    const int inner = std::max(calibrate(dense_once), calibrate(dynamic_once));

    auto run = [&](auto&& fn) {
        std::vector<double> per_image_sec;
        for (int r = 0; r < warmup + reps; ++r) {
            const auto t0 = clock::now();
            for (int rep = 0; rep < inner; ++rep)
                for (int i = 0; i < n_images; ++i) sink = fn(batch1[static_cast<size_t>(i)]);
            const double el = std::chrono::duration<double>(clock::now() - t0).count();
            if (r >= warmup) per_image_sec.push_back(el / double(inner) / double(n_images));
        }
        return median(per_image_sec);
    };

    LatencyReport rep;
    rep.reps = reps;
    rep.warmup = warmup;
    rep.inner_loops = inner;
    rep.dense_median_ms = run(dense_once) * 1e3;
    rep.dynamic_median_ms = run(dynamic_once) * 1e3;
    rep.latency_reduction_percent = 100.0 * (1.0 - rep.dynamic_median_ms / rep.dense_median_ms);
    (void)sink;
    return rep;
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

std::string FlopsReport::to_json() const {
    nlohmann::json j;
    j["unit"] = "multiply_accumulates";
    j["dense_per_block"] = dense_per_block;
    j["dense_classifier"] = dense_classifier;
    j["dense_total"] = dense_total;
    j["dynamic_per_block"] = dynamic_per_block;
    j["dynamic_total"] = dynamic_total;
    j["head_overhead_per_sample"] = head_overhead;
    j["mean_keep_per_layer"] = mean_keep_per_layer;
    j["reduction_percent"] = reduction_percent;
    return j.dump(2);
}

std::string FlopsReport::to_table() const {
    std::ostringstream os;
    os << "layer         dense MACs   dynamic MACs (mean)\n";
    for (size_t i = 0; i < dense_per_block.size(); ++i) {
        const double dyn = i < dynamic_per_block.size() ? dynamic_per_block[i] : 0.0;
        char line[96];
        std::snprintf(line, sizeof line, "block.%-6zu %12lld %16.1f\n", i + 1,
                      static_cast<long long>(dense_per_block[i]), dyn);
        os << line;
    }
    os << "classifier    " << dense_classifier << " (dense on both paths)\n";
    os << "head overhead per sample: " << head_overhead << "\n";
    os << "reduction: " << reduction_percent << "%\n";
    return os.str();
}

std::string LatencyReport::to_json() const {
    nlohmann::json j;
    j["dense_median_ms"] = dense_median_ms;
    j["dynamic_median_ms"] = dynamic_median_ms;
    j["latency_reduction_percent"] = latency_reduction_percent;
    j["threads"] = threads;
    j["reps"] = reps;
    j["warmup"] = warmup;
    j["inner_loops"] = inner_loops;
    return j.dump(2);
}

} // namespace ftwt
