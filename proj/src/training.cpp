#include "ftwt/train_loop.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ftwt/rng.hpp"

namespace ftwt {

EvalResult evaluate(Network& net, const std::vector<GatingHead>* heads, const Dataset& ds,
                    int batch_size) {
    EvalResult res;
    const int n = ds.size();
    if (n == 0) throw DataError("evaluate: empty dataset");
    int correct = 0;
    std::vector<double> keep_sum;
    int64_t keep_batches = 0;
    for (int start = 0; start < n; start += batch_size) {
        std::vector<int> idx;
        for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
        Tensor batch = make_batch(ds, idx);
        Tensor logits;
        if (heads) {
            MaskBatch masks;
            logits = dynamic_forward(net, *heads, batch, &masks);
            if (keep_sum.empty()) keep_sum.assign(masks.layers.size(), 0.0);
            for (size_t l = 0; l < masks.layers.size(); ++l) {
                double s = 0.0;
                for (float v : masks.layers[l].data) s += v;
                keep_sum[l] += s / double(masks.layers[l].numel());
            }
            ++keep_batches;
        } else {
            ForwardTrace<float> trace = forward_collect(net, batch, BnMode::eval);
            logits = std::move(trace.logits);
        }
        const auto labels = labels_for(ds, idx);
        for (int i = 0; i < logits.dim(0); ++i) {
            int best = 0;
            for (int c = 1; c < logits.dim(1); ++c)
                if (logits.at(i, c) > logits.at(i, best)) best = c;
            correct += best == labels[static_cast<size_t>(i)] ? 1 : 0;
        }
    }
    res.accuracy = double(correct) / double(n);
    for (double s : keep_sum) res.keep_rates.push_back(s / double(keep_batches));
    return res;
}

namespace {

void apply_sgd(Network& net, std::vector<GatingHead>& heads, const ParamGrads<float>& grads,
               ParamGrads<float>& vel, float lr, float head_lr, float momentum, float wd) {
    for (size_t i = 0; i < net.blocks.size(); ++i) {
        sgd_step(net.blocks[i].weight, grads.conv_w[i], vel.conv_w[i], lr, momentum, wd);
        sgd_step(net.blocks[i].gamma, grads.bn_gamma[i], vel.bn_gamma[i], lr, momentum, wd);
        sgd_step(net.blocks[i].beta, grads.bn_beta[i], vel.bn_beta[i], lr, momentum, wd);
    }
    for (size_t i = 0; i < net.classifier.size(); ++i) {
        sgd_step(net.classifier[i].weight, grads.fc_w[i], vel.fc_w[i], lr, momentum, wd);
        sgd_step(net.classifier[i].bias, grads.fc_b[i], vel.fc_b[i], lr, momentum, wd);
    }
    for (size_t i = 0; i < heads.size(); ++i) {
        sgd_step(heads[i].weight, grads.head_w[i], vel.head_w[i], head_lr, momentum, wd);
        sgd_step(heads[i].bias, grads.head_b[i], vel.head_b[i], head_lr, momentum, wd);
    }
}

} // namespace

StepStats<float> train_step(Network& net, std::vector<GatingHead>& heads, const Tensor& batch,
                            const std::vector<int>& labels, const TrainConfig& cfg,
                            const MaskRule& rule, double lr, double head_lr,
                            ParamGrads<float>& velocity) {
    StepOptions opt;
    opt.mode = cfg.mode;
    opt.mask_source = cfg.mask_source;
    opt.rule = rule;
    opt.pred_reduction = cfg.pred_reduction;
    ParamGrads<float> grads = ParamGrads<float>::zeros_like(net, heads);
    StepStats<float> stats = masked_training_pass(net, heads, batch, labels, opt, grads);
    if (!std::isfinite(stats.loss.l_total))
        throw ConfigError("non-finite loss; training diverged");
    apply_sgd(net, heads, grads, velocity, float(lr), float(head_lr), float(cfg.momentum),
              float(cfg.weight_decay));
    return stats;
}

TrainOutcome train_loop(const Architecture& arch, const TrainConfig& cfg, const MaskRule& rule,
                        const Dataset& train_ds, const Dataset& test_ds, const Network* init_net,
                        const std::vector<GatingHead>* init_heads,
                        const std::string& metrics_csv_path) {
    cfg.validate();
    TrainOutcome out;
    out.net = init_net ? *init_net : build_network<float>(arch, cfg.seed);
    if (cfg.mode != TrainMode::baseline) {
        SplitMix64 derive(cfg.seed);
        derive.next();
        out.heads = init_heads ? *init_heads
                               : build_heads<float>(arch, derive.next(), cfg.use_softmax);
    }
    ParamGrads<float> velocity = ParamGrads<float>::zeros_like(out.net, out.heads);
    Pcg32 shuffle_rng(cfg.seed ^ 0xda7a5eed00c0ffeeull);

    std::ofstream csv;
    if (!metrics_csv_path.empty()) {
        csv.open(metrics_csv_path);
        if (!csv) throw DataError("cannot open metrics CSV: " + metrics_csv_path);
        csv << "epoch,lr,l_ent,l_pred,train_acc,test_acc,keep_rates,wall_seconds\n";
    }

    std::vector<int> order(static_cast<size_t>(train_ds.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_schedule(epoch, cfg.lr, cfg.milestones, cfg.lr_decay);
        const double head_lr = lr_schedule(epoch, cfg.head_lr, cfg.milestones, cfg.lr_decay);
        shuffle_rng.shuffle(order);
        double sum_ent = 0.0, sum_pred = 0.0, sum_head_acc = 0.0;
        int64_t seen = 0, correct = 0;
        std::vector<double> keep_sum;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() +
                                     static_cast<std::ptrdiff_t>(
                                         std::min(order.size(), start + static_cast<size_t>(cfg.batch_size))));
            Tensor batch = make_batch(train_ds, idx);
            const auto labels = labels_for(train_ds, idx);
            StepStats<float> stats =
                train_step(out.net, out.heads, batch, labels, cfg, rule, lr, head_lr, velocity);
            const double w = double(idx.size());
            sum_ent += stats.loss.l_ent * w;
            sum_pred += stats.loss.l_pred * w;
            sum_head_acc += stats.loss.head_accuracy * w;
            correct += stats.correct;
            seen += static_cast<int64_t>(idx.size());
            if (keep_sum.empty()) keep_sum.assign(stats.keep_rates.size(), 0.0);
            for (size_t l = 0; l < stats.keep_rates.size(); ++l) keep_sum[l] += stats.keep_rates[l] * w;
        }
        EpochStats es;
        es.epoch = epoch;
        es.lr = lr;
        es.l_ent = sum_ent / double(seen);
        es.l_pred = sum_pred / double(seen);
        es.head_accuracy = sum_head_acc / double(seen);
        es.train_acc = double(correct) / double(seen);
        for (double s : keep_sum) es.keep_rates.push_back(s / double(seen));
        EvalResult ev = evaluate(out.net, cfg.mode == TrainMode::baseline ? nullptr : &out.heads,
                                 test_ds);
        es.test_acc = ev.accuracy;
        es.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.epochs.push_back(es);
        if (csv.is_open()) {
            csv << es.epoch << ',' << es.lr << ',' << es.l_ent << ',' << es.l_pred << ','
                << es.train_acc << ',' << es.test_acc << ',';
            for (size_t l = 0; l < es.keep_rates.size(); ++l)
                csv << (l ? ";" : "") << es.keep_rates[l];
            csv << ',' << es.wall_seconds << '\n';
            csv.flush();
        }
    }
    return out;
}

} // namespace ftwt
