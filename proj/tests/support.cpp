#include "support.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <sodium.h>

namespace trafficlm::test {

TempDir::TempDir() {
    std::random_device rd;
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto candidate = std::filesystem::temp_directory_path() / ("trafficlm-test-" + std::to_string(rd()));
        if (std::filesystem::create_directory(candidate)) {
            path_ = candidate;
            return;
        }
    }
    throw std::runtime_error("cannot create temporary directory");
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::string &path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("cannot write " + path);
}

std::string reference_sha256(std::string_view bytes) {
    if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
    unsigned char digest[crypto_hash_sha256_BYTES];
    crypto_hash_sha256(digest, reinterpret_cast<const unsigned char *>(bytes.data()), bytes.size());
    char hex[2 * crypto_hash_sha256_BYTES + 1];
    sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
    return hex;
}

std::string data_path(std::string_view name) { return std::string(TRAFFICLM_TEST_DATA) + "/" + std::string(name); }

ModelConfig toy_config() {
    ModelConfig c;
    c.vocab_size = 64;
    c.hidden = 8;
    c.heads = 2;
    c.layers = 2;
    c.intermediate = 16;
    c.max_position = 32;
    c.n_classes = 3;
    return c;
}

}  // namespace trafficlm::test
