// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace bprune::cli {

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Everything needed to rerun a command: argv, resolved flags, seed and the
// digests of every input and output file.
class RunManifest {
public:
    RunManifest(std::string command, std::vector<std::string> argv);

    void set_flags(nlohmann::json flags) { flags_ = std::move(flags); }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    void add_input(const std::filesystem::path& path) { inputs_.push_back(path); }
    void add_output(const std::filesystem::path& path) { outputs_.push_back(path); }
    void set_result(nlohmann::json result) { result_ = std::move(result); }

    nlohmann::json to_json() const;
    void write(const std::filesystem::path& path) const;

private:
    std::string command_;
    std::vector<std::string> argv_;
    nlohmann::json flags_ = nlohmann::json::object();
    nlohmann::json result_ = nlohmann::json::object();
    std::uint64_t seed_ = 0;
    std::vector<std::filesystem::path> inputs_;
    std::vector<std::filesystem::path> outputs_;
};

}  // namespace bprune::cli
