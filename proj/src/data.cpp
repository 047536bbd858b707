#include "ftwt/data.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace ftwt {

namespace {

uint32_t read_be_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError("unexpected end of file while reading " + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

} // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw DataError("cannot open image file: " + images_path);
    const uint32_t img_magic = read_be_u32(imgs, "image magic");
    if (img_magic != kIdxImagesMagic)
        throw DataError("bad IDX image magic in " + images_path + ": got " + std::to_string(img_magic));
    const uint32_t n = read_be_u32(imgs, "image count");
    const uint32_t rows = read_be_u32(imgs, "image rows");
    const uint32_t cols = read_be_u32(imgs, "image cols");

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw DataError("cannot open label file: " + labels_path);
    const uint32_t lab_magic = read_be_u32(labs, "label magic");
    if (lab_magic != kIdxLabelsMagic)
        throw DataError("bad IDX label magic in " + labels_path + ": got " + std::to_string(lab_magic));
    const uint32_t n_labels = read_be_u32(labs, "label count");
    if (n_labels != n)
        throw DataError("image/label count mismatch: " + std::to_string(n) + " vs " +
                        std::to_string(n_labels));

    Dataset ds;
    ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
    std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
    for (uint32_t i = 0; i < n; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw DataError("truncated image file at sample " + std::to_string(i));
        float* dst = ds.images.data.data() + size_t(i) * buf.size();
        for (size_t p = 0; p < buf.size(); ++p) dst[p] = float(buf[p]) / 255.0f;
    }
    ds.labels.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        unsigned char l;
        if (!labs.read(reinterpret_cast<char*>(&l), 1))
            throw DataError("truncated label file at sample " + std::to_string(i));
        if (l > 9) throw DataError("label out of range: " + std::to_string(int(l)));
        ds.labels[i] = l;
    }
    ds.mean = {0.1307f};
    ds.stddev = {0.3081f};
    return ds;
}

void write_mnist_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
    const int n = ds.size();
    const int rows = ds.images.dim(2), cols = ds.images.dim(3);
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw DataError("cannot write image file: " + images_path);
    write_be_u32(imgs, kIdxImagesMagic);
    write_be_u32(imgs, static_cast<uint32_t>(n));
    write_be_u32(imgs, static_cast<uint32_t>(rows));
    write_be_u32(imgs, static_cast<uint32_t>(cols));
    std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < n; ++i) {
        const float* src = ds.images.data.data() + size_t(i) * buf.size();
        for (size_t p = 0; p < buf.size(); ++p) {
            float v = std::min(std::max(src[p], 0.0f), 1.0f);
            buf[p] = static_cast<unsigned char>(v * 255.0f + 0.5f);
        }
        imgs.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw DataError("cannot write label file: " + labels_path);
    write_be_u32(labs, kIdxLabelsMagic);
    write_be_u32(labs, static_cast<uint32_t>(n));
    for (int i = 0; i < n; ++i) {
        const unsigned char l = static_cast<unsigned char>(ds.labels[static_cast<size_t>(i)]);
        labs.write(reinterpret_cast<const char*>(&l), 1);
    }
}

Dataset load_cifar10_binary(const std::vector<std::string>& paths) {
    constexpr int kRecord = 3073;
    constexpr int kPlane = 1024;
    std::vector<unsigned char> all;
    for (const std::string& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open CIFAR batch: " + path);
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
        if (bytes.size() % kRecord != 0)
            throw DataError("CIFAR batch " + path + " is not a multiple of 3073 bytes; stray data at byte offset " +
                            std::to_string((bytes.size() / kRecord) * kRecord));
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    const int n = static_cast<int>(all.size()) / kRecord;
    Dataset ds;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const unsigned char* rec = all.data() + size_t(i) * kRecord;
        if (rec[0] > 9)
            throw DataError("CIFAR label out of range at record " + std::to_string(i) + ": " +
                            std::to_string(int(rec[0])));
        ds.labels[static_cast<size_t>(i)] = rec[0];
        float* dst = ds.images.data.data() + size_t(i) * 3 * kPlane;
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < kPlane; ++p)
                dst[c * kPlane + p] = float(rec[1 + c * kPlane + p]) / 255.0f;
    }
    ds.mean = {0.4914f, 0.4822f, 0.4465f};
    ds.stddev = {0.2470f, 0.2435f, 0.2616f};
    return ds;
}

Dataset stratified_subset(const Dataset& ds, int n) {
    if (n <= 0 || n >= ds.size()) return ds;
    const int k = ds.num_classes;
    std::vector<int> quota(static_cast<size_t>(k), n / k);
    for (int c = 0; c < n % k; ++c) quota[static_cast<size_t>(c)]++;
    std::vector<int> picked;
    picked.reserve(static_cast<size_t>(n));
    for (int i = 0; i < ds.size() && static_cast<int>(picked.size()) < n; ++i) {
        const int c = ds.labels[static_cast<size_t>(i)];
        if (quota[static_cast<size_t>(c)] > 0) {
            quota[static_cast<size_t>(c)]--;
            picked.push_back(i);
        }
    }
    Dataset out;
    out.mean = ds.mean;
    out.stddev = ds.stddev;
    out.num_classes = ds.num_classes;
    const int64_t sample = ds.images.numel() / ds.size();
    out.images = Tensor({static_cast<int>(picked.size()), ds.images.dim(1), ds.images.dim(2),
                         ds.images.dim(3)});
    for (size_t j = 0; j < picked.size(); ++j) {
        std::memcpy(out.images.data.data() + int64_t(j) * sample,
                    ds.images.data.data() + int64_t(picked[j]) * sample,
                    static_cast<size_t>(sample) * sizeof(float));
        out.labels.push_back(ds.labels[static_cast<size_t>(picked[j])]);
    }
    return out;
}

Tensor make_batch(const Dataset& ds, const std::vector<int>& indices) {
    const int C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
    const int64_t plane = int64_t(H) * W;
    Tensor batch({static_cast<int>(indices.size()), C, H, W});
    for (size_t j = 0; j < indices.size(); ++j) {
        const float* src = ds.images.data.data() + int64_t(indices[j]) * C * plane;
        float* dst = batch.data.data() + int64_t(j) * C * plane;
        for (int c = 0; c < C; ++c) {
            const float m = ds.mean[static_cast<size_t>(c)];
            const float inv = 1.0f / ds.stddev[static_cast<size_t>(c)];
            for (int64_t p = 0; p < plane; ++p) dst[c * plane + p] = (src[c * plane + p] - m) * inv;
        }
    }
    return batch;
}

std::vector<int> labels_for(const Dataset& ds, const std::vector<int>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(ds.labels[static_cast<size_t>(i)]);
    return out;
}

Dataset load_dataset(const DatasetSource& source, bool test_split) {
    Dataset ds;
    if (source.kind == "mnist_idx") {
        ds = test_split ? load_mnist_idx(source.test_images, source.test_labels)
                        : load_mnist_idx(source.train_images, source.train_labels);
    } else if (source.kind == "cifar10_binary") {
        ds = load_cifar10_binary(test_split ? source.test_batches : source.train_batches);
    } else {
        throw ConfigError("unknown dataset kind: " + source.kind);
    }
    if (!source.mean.empty()) {
        if (source.mean.size() != static_cast<size_t>(ds.images.dim(1)) ||
            source.stddev.size() != source.mean.size())
            throw ConfigError("normalization constants do not match channel count");
        ds.mean = source.mean;
        ds.stddev = source.stddev;
    }
    const int subset = test_split ? source.test_subset : source.subset;
    return stratified_subset(ds, subset);
}

} // namespace ftwt
