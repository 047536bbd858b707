#include "ftwt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace ftwt {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'W', 'T'};
constexpr uint32_t kVersion = 1;

void put_u16(std::ostream& out, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2)) throw DataError("checkpoint truncated (u16)");
    return static_cast<uint16_t>(b[0] | (uint16_t(b[1]) << 8));
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint truncated (u32)");
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

} // namespace

void write_tensor_file(const NamedTensors& tensors, const std::string& metadata_json,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name);
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.put(static_cast<char>(0)); // dtype: IEEE-754 single
        out.put(static_cast<char>(t.ndim()));
        for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    put_u32(out, static_cast<uint32_t>(metadata_json.size()));
    out.write(metadata_json.data(), static_cast<std::streamsize>(metadata_json.size()));
    if (!out) throw DataError("write failed: " + path);
}

NamedTensors read_tensor_file(const std::string& path, std::string& metadata_json) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad checkpoint magic in " + path);
    const uint32_t version = get_u32(in);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = get_u32(in);
    NamedTensors tensors;
    tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = get_u16(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw DataError("checkpoint truncated (tensor name)");
        const int dtype = in.get();
        if (dtype == EOF) throw DataError("checkpoint truncated (dtype)");
        if (dtype != 0) throw DataError("unsupported dtype " + std::to_string(dtype) + " for " + name);
        const int ndim = in.get();
        if (ndim == EOF) throw DataError("checkpoint truncated (ndim)");
        std::vector<int> shape;
        int64_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            const uint32_t dim = get_u32(in);
            shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        Tensor t;
        t.shape = shape;
        t.data.resize(static_cast<size_t>(numel));
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(float))))
            throw DataError("checkpoint truncated mid-tensor: " + name);
        tensors.emplace_back(std::move(name), std::move(t));
    }
    const uint32_t meta_len = get_u32(in);
    metadata_json.resize(meta_len);
    if (meta_len > 0 && !in.read(metadata_json.data(), meta_len))
        throw DataError("checkpoint truncated (metadata)");
    in.peek();
    if (!in.eof()) throw DataError("trailing bytes after checkpoint metadata");
    return tensors;
}

namespace {

NamedTensors collect_tensors(const Network& net, const std::vector<GatingHead>& heads) {
    NamedTensors out;
    const auto& arch = net.arch;
    for (int l = 1; l <= arch.num_blocks(); ++l) {
        const auto& b = net.blocks[static_cast<size_t>(l - 1)];
        const std::string prefix = "block." + std::to_string(l) + ".";
        out.emplace_back(prefix + "conv.weight", b.weight);
        if (net.folded) {
            out.emplace_back(prefix + "conv.bias", b.fold_bias);
        } else {
            out.emplace_back(prefix + "bn.gamma", b.gamma);
            out.emplace_back(prefix + "bn.beta", b.beta);
            out.emplace_back(prefix + "bn.running_mean", b.running_mean);
            out.emplace_back(prefix + "bn.running_var", b.running_var);
        }
    }
    for (size_t i = 0; i < net.classifier.size(); ++i) {
        const std::string prefix = "classifier." + std::to_string(i) + ".";
        out.emplace_back(prefix + "weight", net.classifier[i].weight);
        out.emplace_back(prefix + "bias", net.classifier[i].bias);
    }
    const auto gated = arch.gated_blocks();
    for (size_t i = 0; i < heads.size(); ++i) {
        const std::string prefix = "head." + std::to_string(gated[i]) + ".";
        out.emplace_back(prefix + "weight", heads[i].weight);
        out.emplace_back(prefix + "bias", heads[i].bias);
    }
    return out;
}

} // namespace

void save_checkpoint(const Network& net, const std::vector<GatingHead>& heads,
                     const CheckpointMeta& meta_in, const std::string& path) {
    CheckpointMeta meta = meta_in;
    meta.arch = net.arch.name;
    meta.gate_from_block = net.arch.gate_from_block;
    meta.has_heads = !heads.empty();
    meta.folded = net.folded;
    if (!heads.empty()) meta.use_softmax = heads.front().use_softmax;
    nlohmann::json j{{"epoch", meta.epoch},
                     {"seed", meta.seed},
                     {"config_digest", meta.config_digest},
                     {"arch", meta.arch},
                     {"gate_from_block", meta.gate_from_block},
                     {"use_softmax", meta.use_softmax},
                     {"has_heads", meta.has_heads},
                     {"folded", meta.folded}};
    write_tensor_file(collect_tensors(net, heads), j.dump(), path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::string meta_json;
    NamedTensors tensors = read_tensor_file(path, meta_json);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(meta_json);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint metadata: ") + e.what());
    }
    LoadedCheckpoint lc;
    lc.meta.epoch = j.value("epoch", 0);
    lc.meta.seed = j.value("seed", uint64_t(0));
    lc.meta.config_digest = j.value("config_digest", "");
    lc.meta.arch = j.value("arch", "");
    lc.meta.gate_from_block = j.value("gate_from_block", 2);
    lc.meta.use_softmax = j.value("use_softmax", true);
    lc.meta.has_heads = j.value("has_heads", false);
    lc.meta.folded = j.value("folded", false);

    Architecture arch = Architecture::by_name(lc.meta.arch);
    arch.gate_from_block = lc.meta.gate_from_block;
    lc.net = build_network<float>(arch, 0);
    lc.net.folded = lc.meta.folded;
    if (lc.meta.has_heads) lc.heads = build_heads<float>(arch, 0, lc.meta.use_softmax);

    std::map<std::string, Tensor*> slots;
    for (int l = 1; l <= arch.num_blocks(); ++l) {
        auto& b = lc.net.blocks[static_cast<size_t>(l - 1)];
        const std::string prefix = "block." + std::to_string(l) + ".";
        slots[prefix + "conv.weight"] = &b.weight;
        if (lc.meta.folded) {
            b.fold_bias = Tensor({arch.blocks[static_cast<size_t>(l - 1)].out_channels});
            b.gamma = b.beta = b.running_mean = b.running_var = Tensor();
            slots[prefix + "conv.bias"] = &b.fold_bias;
        } else {
            slots[prefix + "bn.gamma"] = &b.gamma;
            slots[prefix + "bn.beta"] = &b.beta;
            slots[prefix + "bn.running_mean"] = &b.running_mean;
            slots[prefix + "bn.running_var"] = &b.running_var;
        }
    }
    for (size_t i = 0; i < lc.net.classifier.size(); ++i) {
        const std::string prefix = "classifier." + std::to_string(i) + ".";
        slots[prefix + "weight"] = &lc.net.classifier[i].weight;
        slots[prefix + "bias"] = &lc.net.classifier[i].bias;
    }
    const auto gated = arch.gated_blocks();
    for (size_t i = 0; i < lc.heads.size(); ++i) {
        const std::string prefix = "head." + std::to_string(gated[i]) + ".";
        slots[prefix + "weight"] = &lc.heads[i].weight;
        slots[prefix + "bias"] = &lc.heads[i].bias;
    }

    size_t filled = 0;
    for (auto& [name, t] : tensors) {
        auto it = slots.find(name);
        if (it == slots.end()) throw DataError("unexpected tensor in checkpoint: " + name);
        if (it->second->shape != t.shape)
            throw DataError("tensor shape mismatch for " + name + ": expected " +
                            shape_str(it->second->shape) + ", got " + shape_str(t.shape));
        *it->second = std::move(t);
        ++filled;
    }
    if (filled != slots.size())
        throw DataError("checkpoint is missing " + std::to_string(slots.size() - filled) + " tensors");
    return lc;
}

} // namespace ftwt
