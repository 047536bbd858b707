#include "ftwt/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ftwt {

using nlohmann::json;

namespace {

std::string join_path(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(join_path(path, it.key()) + ": unknown key");
}

template <typename T>
T require_type(const json& j, const std::string& path);

template <>
double require_type<double>(const json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path + ": expected number");
    return j.get<double>();
}
template <>
int require_type<int>(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError(path + ": expected integer");
    return j.get<int>();
}
template <>
uint64_t require_type<uint64_t>(const json& j, const std::string& path) {
    if (!j.is_number_unsigned() && !j.is_number_integer())
        throw ConfigError(path + ": expected non-negative integer");
    if (j.is_number_integer() && j.get<int64_t>() < 0)
        throw ConfigError(path + ": expected non-negative integer");
    return j.get<uint64_t>();
}
template <>
bool require_type<bool>(const json& j, const std::string& path) {
    if (!j.is_boolean()) throw ConfigError(path + ": expected boolean");
    return j.get<bool>();
}
template <>
std::string require_type<std::string>(const json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path + ": expected string");
    return j.get<std::string>();
}

template <typename T>
void maybe(const json& j, const std::string& base, const char* key, T& out) {
    if (j.contains(key)) out = require_type<T>(j.at(key), join_path(base, key));
}

std::vector<float> float_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected array of numbers");
    std::vector<float> v;
    for (size_t i = 0; i < j.size(); ++i)
        v.push_back(static_cast<float>(require_type<double>(j[i], path + "[" + std::to_string(i) + "]")));
    return v;
}

std::vector<int> int_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected array of integers");
    std::vector<int> v;
    for (size_t i = 0; i < j.size(); ++i)
        v.push_back(require_type<int>(j[i], path + "[" + std::to_string(i) + "]"));
    return v;
}

std::vector<std::string> string_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected array of strings");
    std::vector<std::string> v;
    for (size_t i = 0; i < j.size(); ++i)
        v.push_back(require_type<std::string>(j[i], path + "[" + std::to_string(i) + "]"));
    return v;
}

DatasetSource parse_dataset(const json& j, const std::string& base) {
    check_keys(j, base,
               {"kind", "train_images", "train_labels", "test_images", "test_labels",
                "train_batches", "test_batches", "subset", "test_subset", "mean", "std"});
    DatasetSource d;
    if (!j.contains("kind")) throw ConfigError(join_path(base, "kind") + ": missing required field");
    d.kind = require_type<std::string>(j.at("kind"), join_path(base, "kind"));
    if (d.kind != "mnist_idx" && d.kind != "cifar10_binary")
        throw ConfigError(join_path(base, "kind") + ": must be mnist_idx or cifar10_binary");
    maybe(j, base, "train_images", d.train_images);
    maybe(j, base, "train_labels", d.train_labels);
    maybe(j, base, "test_images", d.test_images);
    maybe(j, base, "test_labels", d.test_labels);
    if (j.contains("train_batches")) d.train_batches = string_list(j.at("train_batches"), join_path(base, "train_batches"));
    if (j.contains("test_batches")) d.test_batches = string_list(j.at("test_batches"), join_path(base, "test_batches"));
    maybe(j, base, "subset", d.subset);
    maybe(j, base, "test_subset", d.test_subset);
    if (d.subset < 0 || d.test_subset < 0)
        throw ConfigError(join_path(base, "subset") + ": must be >= 0");
    if (j.contains("mean")) d.mean = float_list(j.at("mean"), join_path(base, "mean"));
    if (j.contains("std")) d.stddev = float_list(j.at("std"), join_path(base, "std"));
    if (d.mean.size() != d.stddev.size())
        throw ConfigError(join_path(base, "mean") + ": mean/std lengths differ");
    return d;
}

TrainConfig parse_train(const json& j, const std::string& base) {
    check_keys(j, base,
               {"mode", "epochs", "batch_size", "lr", "head_lr", "milestones", "lr_decay",
                "momentum", "weight_decay", "mask_source", "pred_loss_reduction", "from_scratch",
                "use_softmax"});
    TrainConfig t;
    std::string mode = "baseline";
    maybe(j, base, "mode", mode);
    if (mode == "baseline") t.mode = TrainMode::baseline;
    else if (mode == "decoupled") t.mode = TrainMode::decoupled;
    else if (mode == "joint") t.mode = TrainMode::joint;
    else throw ConfigError(join_path(base, "mode") + ": must be baseline, decoupled or joint");
    maybe(j, base, "epochs", t.epochs);
    maybe(j, base, "batch_size", t.batch_size);
    maybe(j, base, "lr", t.lr);
    if (t.mode != TrainMode::baseline && !j.contains("lr")) t.lr = 1e-2; // gated phases fine-tune
    maybe(j, base, "head_lr", t.head_lr);
    if (j.contains("milestones")) t.milestones = int_list(j.at("milestones"), join_path(base, "milestones"));
    maybe(j, base, "lr_decay", t.lr_decay);
    maybe(j, base, "momentum", t.momentum);
    maybe(j, base, "weight_decay", t.weight_decay);
    std::string src = "predicted";
    maybe(j, base, "mask_source", src);
    if (src == "predicted") t.mask_source = MaskSource::predicted;
    else if (src == "ground_truth") t.mask_source = MaskSource::ground_truth;
    else throw ConfigError(join_path(base, "mask_source") + ": must be predicted or ground_truth");
    std::string red = "mean";
    maybe(j, base, "pred_loss_reduction", red);
    if (red == "mean") t.pred_reduction = PredLossReduction::mean;
    else if (red == "sum") t.pred_reduction = PredLossReduction::sum;
    else throw ConfigError(join_path(base, "pred_loss_reduction") + ": must be mean or sum");
    maybe(j, base, "from_scratch", t.from_scratch);
    maybe(j, base, "use_softmax", t.use_softmax);
    t.validate();
    return t;
}

ExperimentConfig parse_root(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(j, "",
               {"architecture", "seed", "out_dir", "gate_from_block", "dataset", "train",
                "criterion", "signature_path", "init_checkpoint"});
    ExperimentConfig c;
    maybe(j, "", "architecture", c.architecture);
    Architecture::by_name(c.architecture); // validates the name
    maybe(j, "", "seed", c.seed);
    maybe(j, "", "out_dir", c.out_dir);
    maybe(j, "", "gate_from_block", c.gate_from_block);
    if (c.gate_from_block < 2)
        throw ConfigError("gate_from_block: must be >= 2; the first block is never gated");
    if (!j.contains("dataset")) throw ConfigError("dataset: missing required field");
    c.dataset = parse_dataset(j.at("dataset"), "dataset");
    if (j.contains("train")) c.train = parse_train(j.at("train"), "train");
    c.train.seed = c.seed;
    maybe(j, "", "init_checkpoint", c.init_checkpoint);

    const bool has_criterion = j.contains("criterion");
    const bool has_signature = j.contains("signature_path");
    if (has_criterion && has_signature)
        throw ConfigError("criterion and signature_path are mutually exclusive");
    if (has_criterion) {
        const json& cr = j.at("criterion");
        check_keys(cr, "criterion", {"r", "inclusive_crossing", "zero_eps"});
        MassCriterion mc;
        maybe(cr, "criterion", "r", mc.r);
        maybe(cr, "criterion", "inclusive_crossing", mc.inclusive_crossing);
        maybe(cr, "criterion", "zero_eps", mc.zero_eps);
        try {
            mc.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("criterion: ") + e.what());
        }
        c.rule = mc;
    } else if (has_signature) {
        c.signature_path = require_type<std::string>(j.at("signature_path"), "signature_path");
        c.rule = load_signature(c.signature_path);
    }
    return c;
}

} // namespace

Signature load_signature(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open signature file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("signature file " + path + ": " + e.what());
    }
    if (!j.is_array()) throw DataError("signature file must be a JSON array of kept counts");
    Signature s;
    for (size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number_integer())
            throw DataError("signature[" + std::to_string(i) + "]: expected integer");
        const int k = j[i].get<int>();
        if (k < 1) throw DataError("signature[" + std::to_string(i) + "]: kept count must be >= 1");
        s.kept.push_back(k);
    }
    return s;
}

ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_root(j);
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["architecture"] = architecture;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["gate_from_block"] = gate_from_block;
    json d;
    d["kind"] = dataset.kind;
    if (dataset.kind == "mnist_idx") {
        d["train_images"] = dataset.train_images;
        d["train_labels"] = dataset.train_labels;
        d["test_images"] = dataset.test_images;
        d["test_labels"] = dataset.test_labels;
    } else {
        d["train_batches"] = dataset.train_batches;
        d["test_batches"] = dataset.test_batches;
    }
    d["subset"] = dataset.subset;
    d["test_subset"] = dataset.test_subset;
    if (!dataset.mean.empty()) {
        d["mean"] = dataset.mean;
        d["std"] = dataset.stddev;
    }
    j["dataset"] = d;
    json t;
    t["mode"] = train.mode == TrainMode::baseline ? "baseline"
                : train.mode == TrainMode::decoupled ? "decoupled" : "joint";
    t["epochs"] = train.epochs;
    t["batch_size"] = train.batch_size;
    t["lr"] = train.lr;
    t["head_lr"] = train.head_lr;
    t["milestones"] = train.milestones;
    t["lr_decay"] = train.lr_decay;
    t["momentum"] = train.momentum;
    t["weight_decay"] = train.weight_decay;
    t["mask_source"] = train.mask_source == MaskSource::predicted ? "predicted" : "ground_truth";
    t["pred_loss_reduction"] = train.pred_reduction == PredLossReduction::mean ? "mean" : "sum";
    t["from_scratch"] = train.from_scratch;
    t["use_softmax"] = train.use_softmax;
    j["train"] = t;
    if (!init_checkpoint.empty()) j["init_checkpoint"] = init_checkpoint;
    if (!signature_path.empty()) {
        j["signature_path"] = signature_path;
    } else {
        const MassCriterion& mc = std::get<MassCriterion>(rule);
        j["criterion"] = {{"r", mc.r},
                          {"inclusive_crossing", mc.inclusive_crossing},
                          {"zero_eps", mc.zero_eps}};
    }
    return j.dump(2);
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string ExperimentConfig::digest() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json())));
    return buf;
}

} // namespace ftwt
