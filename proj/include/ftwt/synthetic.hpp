#pragma once

#include <cstdint>

#include "ftwt/data.hpp"

namespace ftwt {

// Procedurally rendered 28x28 digit images: per-class stroke skeletons under
// random affine jitter, stroke width, contrast and pixel noise, all drawn
// from one seeded generator. Classes cycle 0..9 so the set is balanced.
// Useful as a drop-in stand-in when no real handwritten-digit files are on
// disk; emitted through write_mnist_idx it exercises the exact IDX pipeline.
Dataset make_digit_dataset(int n, uint64_t seed);

// Renders train/test splits (disjoint seeds) and writes the four IDX files
// into `dir` using the standard names train-images-idx3-ubyte etc.
void write_digit_idx_files(const std::string& dir, int train_n, int test_n, uint64_t seed);

} // namespace ftwt
