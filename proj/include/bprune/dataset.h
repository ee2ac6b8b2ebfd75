// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace bprune {

// Byte-level tokens (each in [0, 256)).
std::vector<int> load_corpus(const std::filesystem::path& path);

struct CorpusSplit {
    std::vector<int> train;
    std::vector<int> heldout;
};

// Leading `train_fraction` of the bytes for training, the rest held out.
CorpusSplit split_corpus(std::span<const int> tokens, double train_fraction = 0.9);

// Windows of `window + 1` contiguous tokens: the first `window` are inputs,
// the last `window` are next-token targets.
class TokenDataset {
public:
    TokenDataset(std::size_t window, std::vector<std::vector<int>> sequences);

    // `count` windows at uniformly random offsets (seeded).
    static TokenDataset sample(std::span<const int> tokens, std::size_t window, std::size_t count, std::uint64_t seed);
    // Non-overlapping windows from the start; `max_count` = 0 takes all that fit.
    static TokenDataset sequential(std::span<const int> tokens, std::size_t window, std::size_t max_count = 0);

    std::size_t window() const { return window_; }
    std::size_t size() const { return sequences_.size(); }
    bool empty() const { return sequences_.empty(); }
    std::span<const int> operator[](std::size_t i) const { return sequences_.at(i); }

private:
    std::size_t window_;
    std::vector<std::vector<int>> sequences_;
};

struct DataConfig {
    double train_fraction = 0.9;
    std::size_t window = 128;
    std::size_t calib_windows = 512;
    std::size_t heldout_windows = 0;  // 0: every non-overlapping held-out window
    std::uint64_t data_seed = 0;
};

// Calibration windows sampled from the training split; held-out windows are
// sequential and non-overlapping. Gate learning and scale calibration share
// the calibration set.
struct DataSplits {
    TokenDataset calibration;
    TokenDataset heldout;
};

DataSplits make_splits(std::span<const int> tokens, const DataConfig& config);

}  // namespace bprune
