#pragma once

#include <string>
#include <vector>

#include "ftwt/errors.hpp"

namespace ftwt {

// One conv-BN-ReLU block, optionally followed by a 2x2 max pool.
struct BlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    bool pool = false;
};

// Plain conv stacks with a global-average-pool classifier head. Decision
// heads attach to blocks >= gate_from_block (1-based); the first block is
// never gated because its head would read raw image channels.
struct Architecture {
    std::string name;
    int in_channels = 1;
    int in_h = 28;
    int in_w = 28;
    std::vector<BlockSpec> blocks;
    std::vector<int> classifier_hidden; // between GAP width and class count
    int num_classes = 10;
    int gate_from_block = 2; // 1-based index of the first gated block

    int num_blocks() const { return static_cast<int>(blocks.size()); }

    bool gated(int block_1based) const {
        return block_1based >= gate_from_block && block_1based <= num_blocks();
    }

    std::vector<int> gated_blocks() const {
        std::vector<int> g;
        for (int l = 1; l <= num_blocks(); ++l)
            if (gated(l)) g.push_back(l);
        return g;
    }

    void validate() const {
        if (blocks.empty()) throw ConfigError("architecture has no conv blocks");
        int chain = in_channels;
        for (size_t i = 0; i < blocks.size(); ++i) {
            const BlockSpec& b = blocks[i];
            if (b.in_channels != chain)
                throw ConfigError("inconsistent channel chain at block " + std::to_string(i + 1) +
                                  ": expected " + std::to_string(chain) + ", got " +
                                  std::to_string(b.in_channels));
            if (b.out_channels < 1 || b.kernel < 1 || b.stride < 1 || b.pad < 0)
                throw ConfigError("invalid block geometry at block " + std::to_string(i + 1));
            chain = b.out_channels;
        }
        if (num_classes < 2) throw ConfigError("need at least two classes");
        if (gate_from_block < 2)
            throw ConfigError("gate_from_block must be >= 2; the first block is never gated");
    }

    // Spatial extent after block `upto` (1-based), following conv and pool.
    void spatial_after(int upto, int& h, int& w) const {
        h = in_h;
        w = in_w;
        for (int l = 1; l <= upto; ++l) {
            const BlockSpec& b = blocks[static_cast<size_t>(l - 1)];
            h = (h + 2 * b.pad - b.kernel) / b.stride + 1;
            w = (w + 2 * b.pad - b.kernel) / b.stride + 1;
            if (b.pool) {
                h = (h - 2) / 2 + 1;
                w = (w - 2) / 2 + 1;
            }
        }
    }

    static Architecture mnist_net() {
        Architecture a;
        a.name = "mnist_net";
        a.in_channels = 1;
        a.in_h = a.in_w = 28;
        a.blocks = {
            {1, 16, 3, 1, 1, true},
            {16, 32, 3, 1, 1, true},
            {32, 64, 3, 1, 1, true},
            {64, 64, 3, 1, 1, false},
        };
        a.num_classes = 10;
        return a;
    }

    static Architecture cifar_vgg_s() {
        Architecture a;
        a.name = "cifar_vgg_s";
        a.in_channels = 3;
        a.in_h = a.in_w = 32;
        a.blocks = {
            {3, 32, 3, 1, 1, true},
            {32, 64, 3, 1, 1, true},
            {64, 128, 3, 1, 1, true},
            {128, 128, 3, 1, 1, true},
            {128, 256, 3, 1, 1, false},
        };
        a.num_classes = 10;
        return a;
    }

    static Architecture by_name(const std::string& n) {
        if (n == "mnist_net") return mnist_net();
        if (n == "cifar_vgg_s") return cifar_vgg_s();
        throw ConfigError("unknown architecture: " + n);
    }
};

} // namespace ftwt
