#include "ftwt/synthetic.hpp"

#include <array>
#include <cmath>
#include <filesystem>

#include "ftwt/rng.hpp"

namespace ftwt {

namespace {

struct Pt {
    double x, y;
};
using Stroke = std::vector<Pt>;

// Stroke skeletons per digit in unit coordinates (x right, y down).
std::vector<Stroke> digit_strokes(int d) {
    auto ring = [](double cx, double cy, double rx, double ry, int n = 14) {
        Stroke s;
        for (int i = 0; i <= n; ++i) {
            const double a = 2.0 * M_PI * i / n;
            s.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
        }
        return s;
    };
    switch (d) {
        case 0: return {ring(0.5, 0.5, 0.26, 0.36)};
        case 1: return {{{0.36, 0.30}, {0.54, 0.12}, {0.54, 0.88}}};
        case 2:
            return {{{0.27, 0.32},
                     {0.33, 0.17},
                     {0.50, 0.12},
                     {0.67, 0.18},
                     {0.72, 0.34},
                     {0.30, 0.86}},
                    {{0.30, 0.86}, {0.76, 0.86}}};
        case 3:
            return {{{0.28, 0.17}, {0.50, 0.12}, {0.69, 0.22}, {0.66, 0.38}, {0.47, 0.47}},
                    {{0.47, 0.47}, {0.70, 0.56}, {0.71, 0.76}, {0.50, 0.88}, {0.28, 0.81}}};
        case 4:
            return {{{0.64, 0.12}, {0.28, 0.62}, {0.80, 0.62}}, {{0.64, 0.12}, {0.64, 0.88}}};
        case 5:
            return {{{0.70, 0.13}, {0.32, 0.13}, {0.30, 0.46}},
                    {{0.30, 0.46},
                     {0.54, 0.42},
                     {0.70, 0.54},
                     {0.68, 0.76},
                     {0.48, 0.88},
                     {0.28, 0.80}}};
        case 6:
            return {{{0.62, 0.13}, {0.44, 0.22}, {0.33, 0.44}, {0.30, 0.62}},
                    ring(0.49, 0.66, 0.19, 0.21)};
        case 7: return {{{0.25, 0.14}, {0.75, 0.14}, {0.44, 0.88}}};
        case 8: return {ring(0.5, 0.30, 0.17, 0.17), ring(0.5, 0.66, 0.21, 0.21)};
        case 9:
            return {ring(0.48, 0.34, 0.19, 0.20), {{0.67, 0.38}, {0.64, 0.70}, {0.52, 0.88}}};
        default: throw ConfigError("digit out of range");
    }
}

double segment_distance(double px, double py, const Pt& a, const Pt& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

} // namespace

Dataset make_digit_dataset(int n, uint64_t seed) {
    constexpr int kSide = 28;
    Dataset ds;
    ds.images = Tensor({n, 1, kSide, kSide});
    ds.labels.resize(static_cast<size_t>(n));
    ds.mean = {0.1307f};
    ds.stddev = {0.3081f};
    Pcg32 rng(seed);
    for (int i = 0; i < n; ++i) {
        const int digit = i % 10;
        ds.labels[static_cast<size_t>(i)] = digit;

        const double rot = (rng.next_double() * 2.0 - 1.0) * 0.16;
        const double shear = (rng.next_double() * 2.0 - 1.0) * 0.14;
        const double scale = 0.80 + rng.next_double() * 0.30;
        const double tx = (rng.next_double() * 2.0 - 1.0) * 2.0;
        const double ty = (rng.next_double() * 2.0 - 1.0) * 2.0;
        const double width = 0.95 + rng.next_double() * 0.65; // stroke sigma, pixels
        const double contrast = 0.78 + rng.next_double() * 0.22;
        const double noise = 0.02 + rng.next_double() * 0.03;

        const double c = std::cos(rot), s = std::sin(rot);
        auto map = [&](const Pt& p) {
            const double ux = (p.x - 0.5) + shear * (p.y - 0.5);
            const double uy = p.y - 0.5;
            return Pt{(c * ux - s * uy) * scale * kSide + kSide / 2.0 + tx,
                      (s * ux + c * uy) * scale * kSide + kSide / 2.0 + ty};
        };
        std::vector<std::pair<Pt, Pt>> segs;
        for (const Stroke& stroke : digit_strokes(digit))
            for (size_t j = 0; j + 1 < stroke.size(); ++j)
                segs.emplace_back(map(stroke[j]), map(stroke[j + 1]));

        float* img = ds.images.data.data() + size_t(i) * kSide * kSide;
        const double inv2w2 = 1.0 / (2.0 * width * width);
        for (int y = 0; y < kSide; ++y)
            for (int x = 0; x < kSide; ++x) {
                double best = 0.0;
                for (const auto& [a, b] : segs) {
                    const double d = segment_distance(x + 0.5, y + 0.5, a, b);
                    best = std::max(best, std::exp(-d * d * inv2w2));
                }
                double v = contrast * best + noise * rng.gaussian();
                img[y * kSide + x] = float(std::clamp(v, 0.0, 1.0));
            }
    }
    return ds;
}

void write_digit_idx_files(const std::string& dir, int train_n, int test_n, uint64_t seed) {
    std::filesystem::create_directories(dir);
    Dataset train = make_digit_dataset(train_n, seed);
    Dataset test = make_digit_dataset(test_n, seed + 1);
    write_mnist_idx(train, dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    write_mnist_idx(test, dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
}

} // namespace ftwt
