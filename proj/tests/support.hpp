#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "trafficlm/model.hpp"

namespace trafficlm::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    const std::filesystem::path &path() const { return path_; }
    std::string file(std::string_view name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::string &path);
void write_file(const std::string &path, std::string_view content);

/// Reference SHA-256 from libsodium, lowercase hex.
std::string reference_sha256(std::string_view bytes);

std::string data_path(std::string_view name);

/// Small model used across tests: hidden 8, 2 heads, 2 layers, vocab 64, 3 classes.
ModelConfig toy_config();

}  // namespace trafficlm::test
