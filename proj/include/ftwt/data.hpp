#pragma once

#include <string>
#include <vector>

#include "ftwt/tensor.hpp"

namespace ftwt {

// Images are kept on the raw [0,1] scale; per-channel normalization is
// applied when a batch is materialized, so corruptions operate on pixel
// values the way their sigmas are defined.
struct Dataset {
    Tensor images; // [N,C,H,W], values in [0,1]
    std::vector<int> labels;
    std::vector<float> mean;   // per channel
    std::vector<float> stddev; // per channel
    int num_classes = 10;

    int size() const { return images.empty() ? 0 : images.dim(0); }
};

struct DatasetSource {
    std::string kind; // "mnist_idx" | "cifar10_binary"
    std::string train_images, train_labels; // mnist_idx
    std::string test_images, test_labels;
    std::vector<std::string> train_batches, test_batches; // cifar10_binary
    int subset = 0;      // 0 = all; otherwise class-stratified prefix
    int test_subset = 0; // same rule for the test split
    std::vector<float> mean, stddev;
};

// Big-endian IDX: magic 0x00000803 (u8 images, 3 dims) / 0x00000801 (labels).
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// 3073-byte records: label byte, then 1024 R + 1024 G + 1024 B row-major.
Dataset load_cifar10_binary(const std::vector<std::string>& paths);

void write_mnist_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path);

// Deterministic class-stratified prefix: per-class quotas n/K (+1 for the
// first n%K classes), filled by scanning the dataset in stored order.
Dataset stratified_subset(const Dataset& ds, int n);

// Normalized batch [(x - mean)/stddev] for the given sample indices.
Tensor make_batch(const Dataset& ds, const std::vector<int>& indices);
std::vector<int> labels_for(const Dataset& ds, const std::vector<int>& indices);

// Loads per `source.kind`, applies normalization constants and the subset.
Dataset load_dataset(const DatasetSource& source, bool test_split);

} // namespace ftwt
