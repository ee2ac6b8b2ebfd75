// SPDX-License-Identifier: Apache-2.0
#include "bprune/dataset.h"

#include <fstream>
#include <iterator>
#include <string>

#include "bprune/errors.h"
#include "bprune/rng.h"

namespace bprune {

std::vector<int> load_corpus(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("cannot open corpus '" + path.string() + "'");
    const std::string bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    if (bytes.empty()) throw UsageError("corpus '" + path.string() + "' is empty");
    std::vector<int> tokens(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) tokens[i] = static_cast<unsigned char>(bytes[i]);
    return tokens;
}

CorpusSplit split_corpus(std::span<const int> tokens, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train fraction must be in (0, 1)");
    const auto cut = static_cast<std::size_t>(static_cast<double>(tokens.size()) * train_fraction);
    return {{tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(cut)},
            {tokens.begin() + static_cast<std::ptrdiff_t>(cut), tokens.end()}};
}

TokenDataset::TokenDataset(std::size_t window, std::vector<std::vector<int>> sequences)
    : window_(window), sequences_(std::move(sequences)) {
    if (window_ == 0) throw UsageError("dataset: window must be positive");
    for (const auto& s : sequences_) {
        if (s.size() != window_ + 1) throw ShapeError("dataset: sequence length must be window + 1");
        for (const int t : s) {
            if (t < 0 || t >= 256) throw std::out_of_range("dataset: token outside the byte vocabulary");
        }
    }
}

TokenDataset TokenDataset::sample(std::span<const int> tokens, std::size_t window, std::size_t count,
                                  std::uint64_t seed) {
    if (tokens.size() < window + 1) throw UsageError("dataset: corpus shorter than one window");
    Rng rng(seed);
    const std::size_t n_offsets = tokens.size() - window;
    std::vector<std::vector<int>> seqs;
    seqs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t off = rng.below(n_offsets);
        seqs.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(off),
                          tokens.begin() + static_cast<std::ptrdiff_t>(off + window + 1));
    }
    return TokenDataset(window, std::move(seqs));
}

TokenDataset TokenDataset::sequential(std::span<const int> tokens, std::size_t window, std::size_t max_count) {
    if (tokens.size() < window + 1) throw UsageError("dataset: corpus shorter than one window");
    std::vector<std::vector<int>> seqs;
    for (std::size_t off = 0; off + window + 1 <= tokens.size(); off += window + 1) {
        if (max_count != 0 && seqs.size() == max_count) break;
        seqs.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(off),
                          tokens.begin() + static_cast<std::ptrdiff_t>(off + window + 1));
    }
    return TokenDataset(window, std::move(seqs));
}

DataSplits make_splits(std::span<const int> tokens, const DataConfig& config) {
    const CorpusSplit split = split_corpus(tokens, config.train_fraction);
    return {TokenDataset::sample(split.train, config.window, config.calib_windows, derive_seed(config.data_seed, 0xda7a)),
            TokenDataset::sequential(split.heldout, config.window, config.heldout_windows)};
}

}  // namespace bprune
