#pragma once

#include <string>

#include "ftwt/data.hpp"
#include "ftwt/supervision.hpp"
#include "ftwt/training.hpp"

namespace ftwt {

// One experiment, fully described. Parsed strictly: unknown keys and type
// mismatches are rejected with path-qualified messages, defaults are filled
// in, and the effective config echoes back into the output directory.
struct ExperimentConfig {
    std::string architecture = "mnist_net";
    uint64_t seed = 1;
    std::string out_dir = "runs/out";
    int gate_from_block = 2;
    DatasetSource dataset;
    TrainConfig train;
    std::string init_checkpoint; // optional dense baseline to start from
    MaskRule rule = MassCriterion{};
    std::string signature_path;  // set when rule is a Signature

    std::string to_json() const; // canonical echo, defaults filled
    std::string digest() const;  // FNV-1a 64 over the canonical echo
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Signature file: JSON array of per-gated-layer kept counts, e.g. [12,24,48].
Signature load_signature(const std::string& path);

uint64_t fnv1a64(const std::string& s);

} // namespace ftwt
