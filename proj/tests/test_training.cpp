#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ftwt/rng.hpp"
#include "ftwt/synthetic.hpp"
#include "ftwt/train_loop.hpp"

using namespace ftwt;

namespace {

Architecture tiny_arch() {
    Architecture a;
    a.name = "mnist_net";
    a.in_channels = 1;
    a.in_h = a.in_w = 8;
    a.blocks = {{1, 4, 3, 1, 1, true}, {4, 6, 3, 1, 1, false}};
    a.num_classes = 3;
    a.gate_from_block = 2;
    return a;
}

Tensor random_batch(const Architecture& arch, int n, uint64_t seed) {
    Pcg32 rng(seed);
    Tensor x({n, arch.in_channels, arch.in_h, arch.in_w});
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    return x;
}

std::vector<int> random_labels(int n, int classes, uint64_t seed) {
    Pcg32 rng(seed);
    std::vector<int> l;
    for (int i = 0; i < n; ++i) l.push_back(static_cast<int>(rng.next_below(uint32_t(classes))));
    return l;
}

bool same_params(const Network& a, const Network& b) {
    for (size_t i = 0; i < a.blocks.size(); ++i) {
        if (a.blocks[i].weight.data != b.blocks[i].weight.data) return false;
        if (a.blocks[i].gamma.data != b.blocks[i].gamma.data) return false;
        if (a.blocks[i].beta.data != b.blocks[i].beta.data) return false;
    }
    for (size_t i = 0; i < a.classifier.size(); ++i) {
        if (a.classifier[i].weight.data != b.classifier[i].weight.data) return false;
        if (a.classifier[i].bias.data != b.classifier[i].bias.data) return false;
    }
    return true;
}

} // namespace

TEST_CASE("lr schedule step decay") {
    const std::vector<int> ms = {80, 120, 150};
    CHECK(lr_schedule(0, 0.1, ms, 0.1) == doctest::Approx(0.1));
    CHECK(lr_schedule(79, 0.1, ms, 0.1) == doctest::Approx(0.1));
    CHECK(lr_schedule(80, 0.1, ms, 0.1) == doctest::Approx(0.01));
    CHECK(lr_schedule(120, 0.1, ms, 0.1) == doctest::Approx(0.001));
    CHECK(lr_schedule(150, 0.1, ms, 0.1) == doctest::Approx(0.0001));
    CHECK(lr_schedule(500, 0.1, {}, 0.1) == doctest::Approx(0.1));
    CHECK(lr_schedule(3, 1e-2, ms, 0.1) == doctest::Approx(1e-2));
}

TEST_CASE("milestones must increase strictly") {
    TrainConfig bad;
    bad.milestones = {8, 8, 12};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("total loss is exactly the sum of its parts") {
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 1);
    auto heads = build_heads<float>(arch, 2);
    Tensor x = random_batch(arch, 4, 3);
    auto labels = random_labels(4, 3, 4);
    StepOptions opt;
    opt.mode = TrainMode::decoupled;
    MassCriterion crit;
    crit.r = 0.85;
    opt.rule = crit;
    ParamGrads<float> g = ParamGrads<float>::zeros_like(net, heads);
    StepStats<float> s = masked_training_pass(net, heads, x, labels, opt, g);
    CHECK(s.loss.l_total == s.loss.l_ent + s.loss.l_pred);
}

TEST_CASE("untrained zero-parameter heads score ln 2 prediction loss") {
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 5);
    auto heads = build_heads<float>(arch, 6);
    heads[0].weight.fill(0.0f);
    heads[0].bias.fill(0.0f);
    Tensor x = random_batch(arch, 4, 7);
    auto labels = random_labels(4, 3, 8);
    StepOptions opt;
    opt.mode = TrainMode::decoupled;
    MassCriterion crit;
    crit.r = 0.7;
    opt.rule = crit;
    ParamGrads<float> g = ParamGrads<float>::zeros_like(net, heads);
    StepStats<float> s = masked_training_pass(net, heads, x, labels, opt, g);
    CHECK(s.loss.l_pred == doctest::Approx(std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("saturated correct heads leave only the task loss") {
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 9);
    auto heads = build_heads<float>(arch, 10);
    // r=1 with a healthy net keeps everything; +50 bias heads agree, saturated
    heads[0].weight.fill(0.0f);
    heads[0].bias.fill(50.0f);
    Tensor x = random_batch(arch, 4, 11);
    auto labels = random_labels(4, 3, 12);
    StepOptions opt;
    opt.mode = TrainMode::decoupled;
    opt.rule = MassCriterion{}; // r = 1
    ParamGrads<float> g = ParamGrads<float>::zeros_like(net, heads);
    StepStats<float> s = masked_training_pass(net, heads, x, labels, opt, g);
    CHECK(s.loss.l_pred < 1e-12);
    CHECK(s.loss.l_total == doctest::Approx(s.loss.l_ent));
    CHECK(s.loss.head_accuracy == doctest::Approx(1.0));
}

TEST_CASE("decoupled isolation: zero backbone lr freezes the backbone") {
    const Architecture arch = tiny_arch();
    TrainConfig cfg;
    cfg.mode = TrainMode::decoupled;
    Network net = build_network<float>(arch, 13);
    auto heads = build_heads<float>(arch, 14);
    Network net_before = net;
    auto heads_before = heads;
    Tensor x = random_batch(arch, 6, 15);
    auto labels = random_labels(6, 3, 16);
    MassCriterion crit;
    crit.r = 0.8;
    ParamGrads<float> vel = ParamGrads<float>::zeros_like(net, heads);
    train_step(net, heads, x, labels, cfg, crit, /*lr=*/0.0, /*head_lr=*/0.1, vel);
    CHECK(same_params(net, net_before));
    CHECK(heads[0].weight.data != heads_before[0].weight.data);

    // and the reverse: zero head lr freezes the heads while the backbone moves
    Network net2 = net_before;
    auto heads2 = heads_before;
    ParamGrads<float> vel2 = ParamGrads<float>::zeros_like(net2, heads2);
    train_step(net2, heads2, x, labels, cfg, crit, 0.05, 0.0, vel2);
    CHECK_FALSE(same_params(net2, net_before));
    CHECK(heads2[0].weight.data == heads_before[0].weight.data);
    CHECK(heads2[0].bias.data == heads_before[0].bias.data);
}

TEST_CASE("decoupled head gradients ignore the task loss") {
    // same batch, two different label assignments: head grads identical
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 17);
    auto heads = build_heads<float>(arch, 18);
    Tensor x = random_batch(arch, 5, 19);
    StepOptions opt;
    opt.mode = TrainMode::decoupled;
    MassCriterion crit;
    crit.r = 0.75;
    opt.rule = crit;
    ParamGrads<float> ga = ParamGrads<float>::zeros_like(net, heads);
    ParamGrads<float> gb = ParamGrads<float>::zeros_like(net, heads);
    masked_training_pass(net, heads, x, random_labels(5, 3, 20), opt, ga);
    masked_training_pass(net, heads, x, random_labels(5, 3, 21), opt, gb);
    CHECK(ga.head_w[0].data == gb.head_w[0].data);
    CHECK(ga.head_b[0].data == gb.head_b[0].data);
    CHECK(ga.conv_w[0].data != gb.conv_w[0].data);
}

TEST_CASE("ground-truth labels of the first gated layer ignore head parameters") {
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 22);
    auto heads = build_heads<float>(arch, 23);
    Tensor x = random_batch(arch, 4, 24);
    auto labels = random_labels(4, 3, 25);
    StepOptions opt;
    opt.mode = TrainMode::decoupled;
    MassCriterion crit;
    crit.r = 0.8;
    opt.rule = crit;
    ParamGrads<float> g = ParamGrads<float>::zeros_like(net, heads);
    Network net_copy = net;
    StepStats<float> a = masked_training_pass(net_copy, heads, x, labels, opt, g);
    auto heads_perturbed = heads;
    for (auto& v : heads_perturbed[0].weight.data) v += 0.37f;
    Network net_copy2 = net;
    StepStats<float> b = masked_training_pass(net_copy2, heads_perturbed, x, labels, opt, g);
    CHECK(a.ground_truth.layers[0].data == b.ground_truth.layers[0].data);
}

TEST_CASE("joint and decoupled backbone updates agree when heads are saturated-correct") {
    const Architecture arch = tiny_arch();
    Tensor x = random_batch(arch, 4, 26);
    auto labels = random_labels(4, 3, 27);
    auto run = [&](TrainMode mode) {
        Network net = build_network<float>(arch, 28);
        auto heads = build_heads<float>(arch, 29);
        heads[0].weight.fill(0.0f);
        heads[0].bias.fill(50.0f); // agrees with the r=1 all-keep labels, saturated
        TrainConfig cfg;
        cfg.mode = mode;
        ParamGrads<float> vel = ParamGrads<float>::zeros_like(net, heads);
        train_step(net, heads, x, labels, cfg, MassCriterion{}, 0.1, 0.1, vel);
        return net;
    };
    Network j = run(TrainMode::joint);
    Network d = run(TrainMode::decoupled);
    for (size_t i = 0; i < j.blocks.size(); ++i)
        for (size_t k = 0; k < j.blocks[i].weight.data.size(); ++k)
            CHECK(std::abs(j.blocks[i].weight.data[k] - d.blocks[i].weight.data[k]) < 1e-6);
}

TEST_CASE("zero learning rates change nothing in a joint step") {
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 30);
    auto heads = build_heads<float>(arch, 31);
    Network before = net;
    auto heads_before = heads;
    TrainConfig cfg;
    cfg.mode = TrainMode::joint;
    MassCriterion crit;
    crit.r = 0.8;
    ParamGrads<float> vel = ParamGrads<float>::zeros_like(net, heads);
    train_step(net, heads, random_batch(arch, 4, 32), random_labels(4, 3, 33), cfg, crit, 0.0, 0.0,
               vel);
    CHECK(same_params(net, before));
    CHECK(heads[0].weight.data == heads_before[0].weight.data);
}

TEST_CASE("teacher forcing keep rate is monotone in r on a frozen backbone") {
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 34);
    Tensor x = random_batch(arch, 8, 35);
    auto labels = random_labels(8, 3, 36);
    auto heads = build_heads<float>(arch, 37);
    double prev_keep = -1.0;
    for (double r : {0.5, 0.7, 0.9, 1.0}) {
        StepOptions opt;
        opt.mode = TrainMode::decoupled;
        opt.mask_source = MaskSource::ground_truth;
        MassCriterion crit;
        crit.r = r;
        opt.rule = crit;
        ParamGrads<float> g = ParamGrads<float>::zeros_like(net, heads);
        Network net_copy = net;
        StepStats<float> s = masked_training_pass(net_copy, heads, x, labels, opt, g);
        CHECK(s.keep_rates[0] >= prev_keep);
        prev_keep = s.keep_rates[0];
    }
}

TEST_CASE("one-epoch training is bit-deterministic") {
    const Architecture arch = tiny_arch();
    Dataset data = make_digit_dataset(60, 900);
    // shrink to the tiny architecture's input by cropping the center 8x8
    Dataset small;
    small.mean = {0.1307f};
    small.stddev = {0.3081f};
    small.images = Tensor({60, 1, 8, 8});
    small.labels.assign(data.labels.begin(), data.labels.begin() + 60);
    for (int i = 0; i < 60; ++i)
        for (int y = 0; y < 8; ++y)
            for (int xx = 0; xx < 8; ++xx)
                small.images.at(i, 0, y, xx) = data.images.at(i, 0, y + 10, xx + 10);
    for (auto& l : small.labels) l %= 3;

    TrainConfig cfg;
    cfg.mode = TrainMode::decoupled;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    cfg.head_lr = 0.05;
    cfg.milestones = {};
    cfg.seed = 77;
    MassCriterion crit;
    crit.r = 0.85;
    TrainOutcome a = train_loop(arch, cfg, crit, small, small, nullptr, nullptr);
    TrainOutcome b = train_loop(arch, cfg, crit, small, small, nullptr, nullptr);
    CHECK(same_params(a.net, b.net));
    for (size_t i = 0; i < a.heads.size(); ++i) {
        CHECK(a.heads[i].weight.data == b.heads[i].weight.data);
        CHECK(a.heads[i].bias.data == b.heads[i].bias.data);
    }
    CHECK(a.epochs[0].test_acc == b.epochs[0].test_acc);
}

TEST_CASE("heads learn separable embeddings on a frozen backbone") {
    // Two tight input clusters map through the frozen backbone to two tight
    // GMP embeddings, so each cluster has an essentially constant label mask
    // and a linear head can classify every filter.
    const Architecture arch = tiny_arch();
    Network net = build_network<float>(arch, 38);
    auto heads = build_heads<float>(arch, 39);
    Pcg32 rng(40);
    Tensor proto0({1, 1, 8, 8}), proto1({1, 1, 8, 8});
    for (auto& v : proto0.data) v = rng.uniform(-1, 1);
    for (auto& v : proto1.data) v = rng.uniform(-1, 1);
    auto make_cluster_batch = [&](uint64_t seed) {
        Pcg32 noise(seed);
        Tensor batch({16, 1, 8, 8});
        std::vector<int> labels;
        for (int i = 0; i < 16; ++i) {
            const Tensor& proto = i % 2 ? proto1 : proto0;
            labels.push_back(i % 2);
            for (int p = 0; p < 64; ++p)
                batch.data[size_t(i * 64 + p)] =
                    proto.data[size_t(p)] + 0.02f * noise.uniform(-1, 1);
        }
        return std::make_pair(batch, labels);
    };

    TrainConfig cfg;
    cfg.mode = TrainMode::decoupled;
    MassCriterion crit;
    crit.r = 0.9;
    ParamGrads<float> vel = ParamGrads<float>::zeros_like(net, heads);
    double final_acc = 0.0;
    for (int step = 0; step < 200; ++step) {
        auto [batch, labels] = make_cluster_batch(1000 + uint64_t(step));
        StepStats<float> s =
            train_step(net, heads, batch, labels, cfg, crit, /*lr=*/0.0, /*head_lr=*/0.2, vel);
        final_acc = s.loss.head_accuracy;
    }
    CHECK(final_acc > 0.95);
}
