// SPDX-License-Identifier: Apache-2.0
#include "run_manifest.h"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace bprune::cli {

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path.string() + "' for hashing");
    const std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    std::array<char, 1 << 16> buf{};
    while (is) {
        is.read(buf.data(), buf.size());
        if (is.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(is.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) throw std::runtime_error("sha256 final failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)) {}

nlohmann::json RunManifest::to_json() const {
    const auto files = [](const std::vector<std::filesystem::path>& paths) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& p : paths) {
            out.push_back({{"path", p.string()},
                           {"bytes", std::filesystem::file_size(p)},
                           {"sha256", sha256_file(p)}});
        }
        return out;
    };
    return nlohmann::json{{"tool", "bprune"},
                          {"command", command_},
                          {"argv", argv_},
                          {"seed", seed_},
                          {"flags", flags_},
                          {"inputs", files(inputs_)},
                          {"outputs", files(outputs_)},
                          {"result", result_}};
}

void RunManifest::write(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    os << to_json().dump(2) << '\n';
}

}  // namespace bprune::cli
