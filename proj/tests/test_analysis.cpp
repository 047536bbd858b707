#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ftwt/analysis.hpp"
#include "ftwt/rng.hpp"

using namespace ftwt;

namespace {

Architecture toy_arch() {
    Architecture a;
    a.name = "mnist_net";
    a.in_channels = 1;
    a.in_h = a.in_w = 6;
    a.blocks = {{1, 3, 3, 1, 1, false}, {3, 4, 3, 1, 1, false}};
    a.num_classes = 3;
    a.gate_from_block = 2;
    return a;
}

Dataset toy_data(int n, uint64_t seed) {
    Pcg32 rng(seed);
    Dataset ds;
    ds.images = Tensor({n, 1, 6, 6});
    for (auto& v : ds.images.data) v = rng.next_float();
    for (int i = 0; i < n; ++i) ds.labels.push_back(i % 3);
    ds.mean = {0.0f};
    ds.stddev = {1.0f};
    ds.num_classes = 3;
    return ds;
}

} // namespace

TEST_CASE("route statistics by hand") {
    // masks over three samples: {[1,0],[1,0],[1,1]}
    const Architecture arch = toy_arch();
    Network net = build_network<float>(arch, 1);
    // heads are bypassed: drive collect_routes through a stub dataset is
    // heavy; instead check the arithmetic on a hand-rolled equivalent
    std::vector<std::vector<uint8_t>> masks = {{1, 0}, {1, 0}, {1, 1}};
    std::set<std::vector<uint8_t>> unique(masks.begin(), masks.end());
    CHECK(unique.size() == 2);
    std::vector<uint8_t> core = {1, 1};
    double pruning = 0.0;
    for (const auto& m : masks) {
        for (size_t c = 0; c < m.size(); ++c) core[c] &= m[c];
        int zeros = 0;
        for (uint8_t v : m) zeros += v ? 0 : 1;
        pruning += double(zeros) / double(m.size());
    }
    CHECK(core == std::vector<uint8_t>{1, 0});
    CHECK(pruning / 3.0 == doctest::Approx((0.5 + 0.5 + 0.0) / 3.0));
}

TEST_CASE("untrained zero heads produce one all-ones cluster") {
    const Architecture arch = toy_arch();
    Network net = build_network<float>(arch, 2);
    auto heads = build_heads<float>(arch, 3);
    heads[0].weight.fill(0.0f); // logits exactly zero; tie keeps
    heads[0].bias.fill(0.0f);
    Dataset ds = toy_data(12, 4);
    RouteStats stats = collect_routes(net, heads, ds);
    REQUIRE(stats.layers.size() == 1);
    CHECK(stats.layers[0].clusters == 1);
    CHECK(stats.layers[0].core_ratio == doctest::Approx(1.0));
    CHECK(stats.layers[0].mean_pruning_ratio == doctest::Approx(0.0));
}

TEST_CASE("clusters never exceed the sample count and the core is contained") {
    const Architecture arch = toy_arch();
    Network net = build_network<float>(arch, 5);
    auto heads = build_heads<float>(arch, 6);
    Pcg32 rng(7);
    for (auto& h : heads)
        for (auto& v : h.weight.data) v = rng.uniform(-3, 3);
    Dataset ds = toy_data(20, 8);
    RouteStats stats = collect_routes(net, heads, ds);
    for (const auto& l : stats.layers) {
        CHECK(l.clusters >= 1);
        CHECK(l.clusters <= 20);
        CHECK(l.core_ratio >= 0.0);
        CHECK(l.core_ratio <= 1.0);
    }
    // JSON/CSV writers stay consistent
    CHECK(stats.to_csv().find("cluster_count") != std::string::npos);
    CHECK(stats.to_json().find("clusters") != std::string::npos);
}

TEST_CASE("brier score fixed points") {
    Tensor perfect({2, 4});
    perfect.at(0, 1) = 1.0f;
    perfect.at(1, 3) = 1.0f;
    CHECK(brier_score(perfect, {1, 3}) == doctest::Approx(0.0));

    Tensor uniform = Tensor::full({5, 10}, 0.1f);
    std::vector<int> labels = {0, 3, 5, 7, 9};
    CHECK(brier_score(uniform, labels) == doctest::Approx(0.9).epsilon(1e-6));

    Tensor bad = Tensor::full({1, 4}, 0.3f);
    CHECK_THROWS_AS(brier_score(bad, {0}), ConfigError);
}

TEST_CASE("blur kernel closed form at sigma 0.5") {
    const auto k = gaussian_blur_kernel(0.5);
    REQUIRE(k.size() == 5); // radius = round(1.5) = 2
    CHECK(k[2] == doctest::Approx(0.7866).epsilon(1e-3));
    CHECK(k[1] == doctest::Approx(0.1065).epsilon(1e-3));
    CHECK(k[0] == doctest::Approx(0.0003).epsilon(0.2));
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("blur kernels sum to one across sigmas") {
    for (double sigma : {0.3, 0.5, 0.9, 1.45, 2.0}) {
        double sum = 0.0;
        for (double v : gaussian_blur_kernel(sigma)) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-7);
    }
}

TEST_CASE("blur identity and constancy") {
    Pcg32 rng(9);
    Tensor img({2, 1, 8, 8});
    for (auto& v : img.data) v = rng.next_float();
    Tensor same = corrupt_gaussian_blur(img, 0.0);
    CHECK(same.data == img.data);

    Tensor flat = Tensor::full({1, 1, 8, 8}, 0.42f);
    Tensor blurred = corrupt_gaussian_blur(flat, 1.2);
    for (float v : blurred.data) CHECK(v == doctest::Approx(0.42f).epsilon(1e-6));
}

TEST_CASE("blur reproduces an impulse as the separable kernel product") {
    Tensor img({1, 1, 9, 9});
    img.at(0, 0, 4, 4) = 1.0f;
    const auto k = gaussian_blur_kernel(0.5);
    Tensor out = corrupt_gaussian_blur(img, 0.5);
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
            CHECK(out.at(0, 0, 4 + dy, 4 + dx) ==
                  doctest::Approx(k[size_t(dy + 2)] * k[size_t(dx + 2)]).epsilon(1e-5));
}

TEST_CASE("blur commutes with constant shifts") {
    Pcg32 rng(10);
    Tensor img({1, 1, 10, 10});
    for (auto& v : img.data) v = 0.4f * rng.next_float();
    Tensor shifted = img;
    for (auto& v : shifted.data) v += 0.2f;
    Tensor a = corrupt_gaussian_blur(shifted, 0.8);
    Tensor b = corrupt_gaussian_blur(img, 0.8);
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i] + 0.2f).epsilon(1e-5));
}

TEST_CASE("additive noise: identity at zero, reproducible, right scale") {
    Pcg32 rng(11);
    Tensor img({1, 1, 100, 100});
    for (auto& v : img.data) v = 0.45f + 0.1f * rng.next_float(); // away from clip bounds
    CHECK(corrupt_additive_gaussian(img, 0.0, 1).data == img.data);

    Tensor a = corrupt_additive_gaussian(img, 0.05, 42);
    Tensor b = corrupt_additive_gaussian(img, 0.05, 42);
    CHECK(a.data == b.data);
    Tensor c = corrupt_additive_gaussian(img, 0.05, 43);
    CHECK(a.data != c.data);

    // empirical std of the added noise within 2% of sigma
    Tensor wide({1, 1, 1000, 1000});
    wide.fill(0.5f);
    Tensor noisy = corrupt_additive_gaussian(wide, 0.05, 7);
    double sum = 0.0, sq = 0.0;
    for (size_t i = 0; i < noisy.data.size(); ++i) {
        const double d = double(noisy.data[i]) - 0.5;
        sum += d;
        sq += d * d;
    }
    const double n = double(noisy.data.size());
    const double std_dev = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(std_dev == doctest::Approx(0.05).epsilon(0.02));
}

TEST_CASE("noise clips to the unit interval") {
    Tensor img = Tensor::full({1, 1, 50, 50}, 0.98f);
    Tensor noisy = corrupt_additive_gaussian(img, 0.2, 3);
    for (float v : noisy.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("shift evaluation at sigma zero equals the clean Brier") {
    const Architecture arch = toy_arch();
    Network net = build_network<float>(arch, 12);
    Dataset ds = toy_data(30, 13);
    ShiftModel dense{"dense", &net, nullptr};
    BrierReport rep = shift_evaluation({dense}, ds, "additive_gaussian", {0.0, 0.1});
    ForwardTrace<float> t = forward_collect(net, make_batch(ds, [&] {
                                                std::vector<int> idx(30);
                                                std::iota(idx.begin(), idx.end(), 0);
                                                return idx;
                                            }()),
                                            BnMode::eval);
    const double clean = brier_score(softmax_rows(t.logits), ds.labels);
    CHECK(rep.scores.at("dense")[0] == doctest::Approx(clean).epsilon(1e-6));
    CHECK(rep.sigmas == std::vector<double>{0.0, 0.1});
}

TEST_CASE("default sigma grids match the shift protocol") {
    CHECK(default_blur_grid() == std::vector<double>{0.5, 0.7, 0.9, 1.09, 1.27, 1.45});
    CHECK(default_noise_grid() == std::vector<double>{0.0, 0.02, 0.05, 0.11, 0.14, 0.20});
}

TEST_CASE("heatmap export triplets and similarity guards") {
    const Architecture arch = toy_arch();
    Network net = build_network<float>(arch, 14);
    auto heads = build_heads<float>(arch, 15);
    // all-ones heads: the two heatmaps coincide, cosine 1
    heads[0].weight.fill(0.0f);
    heads[0].bias.fill(10.0f);
    Dataset ds = toy_data(3, 16);
    const std::string dir =
        (std::filesystem::temp_directory_path() / "ftwt_heatmaps_test").string();
    HeatmapExport ex = heatmap_export(net, heads, ds, 2, 2, dir);
    REQUIRE(ex.cosine_similarity.size() == 2);
    for (double c : ex.cosine_similarity) CHECK(c == doctest::Approx(1.0));
    CHECK(ex.files.size() == 6);
    for (const auto& f : ex.files) {
        std::ifstream check(f, std::ios::binary);
        std::string magic(2, '\0');
        check.read(magic.data(), 2);
        CHECK(magic == "P5");
    }

    // all-zero masks: pruned heatmap exports as zeros
    heads[0].bias.fill(-10.0f);
    HeatmapExport zero = heatmap_export(net, heads, ds, 2, 1, dir);
    std::ifstream pf(zero.files[2], std::ios::binary);
    std::string header;
    std::getline(pf, header); // P5
    std::getline(pf, header); // dims
    std::getline(pf, header); // maxval
    char byte;
    while (pf.get(byte)) CHECK(byte == 0);
    CHECK_THROWS_AS(heatmap_export(net, heads, ds, 1, 1, dir), ConfigError);
    std::filesystem::remove_all(dir);
}
