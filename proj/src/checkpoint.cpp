#include "trafficlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "trafficlm/error.hpp"

namespace trafficlm {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'F', 'L', 'M', 'C', 'K', '\0'};
constexpr std::size_t kPreamble = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);

template <class U>
void put_le(std::string &out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const char *p) {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= U(static_cast<unsigned char>(p[i])) << (8 * i);
    return value;
}

nlohmann::json config_json(const ModelConfig &c) {
    return {{"vocab_size", c.vocab_size}, {"hidden", c.hidden},
            {"layers", c.layers},         {"heads", c.heads},
            {"intermediate", c.intermediate}, {"max_position", c.max_position},
            {"type_vocab", c.type_vocab}, {"dropout", c.dropout},
            {"n_classes", c.n_classes}};
}

std::string header_json(const Classifier &model) {
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    model.params().visit([&](const std::string &name, const Mat<float> &m) {
        tensors.push_back({{"name", name},
                           {"shape", {m.rows(), m.cols()}},
                           {"dtype", "float32"},
                           {"offset", offset}});
        offset += 4 * static_cast<std::size_t>(m.size());
    });
    return nlohmann::json{{"config", config_json(model.config())}, {"tensors", tensors}}.dump();
}

}  // namespace

std::string config_to_json(const ModelConfig &config) { return config_json(config).dump(2); }

ModelConfig config_from_json(const std::string &text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception &e) {
        throw BadConfig(std::string("model config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw BadConfig("model config must be a JSON object");
    ModelConfig c;
    for (const auto &[key, value] : j.items()) {
        try {
            if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
            else if (key == "hidden") c.hidden = value.get<std::size_t>();
            else if (key == "layers") c.layers = value.get<std::size_t>();
            else if (key == "heads") c.heads = value.get<std::size_t>();
            else if (key == "intermediate") c.intermediate = value.get<std::size_t>();
            else if (key == "max_position") c.max_position = value.get<std::size_t>();
            else if (key == "type_vocab") c.type_vocab = value.get<std::size_t>();
            else if (key == "dropout") c.dropout = value.get<double>();
            else if (key == "n_classes") c.n_classes = value.get<std::size_t>();
            else throw BadConfig("unknown model config key '" + key + "'");
        } catch (const nlohmann::json::exception &) {
            throw BadConfig("model config key '" + key + "' has the wrong type");
        }
    }
    c.validate();
    return c;
}

std::size_t checkpoint_header_bytes(const Classifier &model) { return kPreamble + header_json(model).size(); }

void save_checkpoint(const Classifier &model, const std::string &path) {
    const auto header = header_json(model);
    std::string blob(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(blob, kCheckpointVersion);
    put_le<std::uint64_t>(blob, header.size());
    blob += header;
    blob.reserve(blob.size() + 4 * model.parameter_count());
    model.params().visit([&](const std::string &, const Mat<float> &m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) put_le<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(m.data()[i]));
    });
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed for " + path);
}

Classifier load_checkpoint(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < kPreamble || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CorruptCheckpoint(path + ": not a checkpoint (bad magic)");
    }
    const auto version = get_le<std::uint32_t>(blob.data() + 8);
    if (version != kCheckpointVersion) {
        throw VersionMismatch(path + ": format version " + std::to_string(version) + ", this build reads " +
                              std::to_string(kCheckpointVersion));
    }
    const auto header_len = get_le<std::uint64_t>(blob.data() + 12);
    if (header_len > blob.size() - kPreamble) throw CorruptCheckpoint(path + ": truncated header");

    nlohmann::json header;
    ModelConfig config;
    try {
        header = nlohmann::json::parse(blob.substr(kPreamble, header_len));
        config = config_from_json(header.at("config").dump());
    } catch (const nlohmann::json::exception &e) {
        throw CorruptCheckpoint(path + ": unreadable header: " + e.what());
    } catch (const BadConfig &e) {
        throw CorruptCheckpoint(path + ": " + e.what());
    }

    const std::size_t data_start = kPreamble + header_len;
    auto model = Classifier::build(config, 0);
    std::size_t index = 0, expected_offset = 0;
    const auto &tensors = header.at("tensors");
    if (!tensors.is_array()) throw CorruptCheckpoint(path + ": tensor table missing");
    model.params().visit([&](const std::string &name, Mat<float> &m) {
        if (index >= tensors.size()) throw CorruptCheckpoint(path + ": missing tensor " + name);
        const auto &t = tensors[index++];
        try {
            if (t.at("name").get<std::string>() != name) {
                throw CorruptCheckpoint(path + ": expected tensor " + name + ", found " + t.at("name").get<std::string>());
            }
            const auto shape = t.at("shape").get<std::vector<long>>();
            if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
                throw CorruptCheckpoint(path + ": " + name + " shape disagrees with config");
            }
            if (t.at("dtype").get<std::string>() != "float32") throw CorruptCheckpoint(path + ": " + name + " dtype");
            if (t.at("offset").get<std::size_t>() != expected_offset) {
                throw CorruptCheckpoint(path + ": " + name + " offset");
            }
        } catch (const nlohmann::json::exception &e) {
            throw CorruptCheckpoint(path + ": bad entry for " + name + ": " + e.what());
        }
        const auto bytes = 4 * static_cast<std::size_t>(m.size());
        if (data_start + expected_offset + bytes > blob.size()) throw CorruptCheckpoint(path + ": truncated at " + name);
        const char *p = blob.data() + data_start + expected_offset;
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
        expected_offset += bytes;
    });
    if (index != tensors.size()) throw CorruptCheckpoint(path + ": unexpected extra tensors");
    if (data_start + expected_offset != blob.size()) throw CorruptCheckpoint(path + ": trailing bytes");
    return model;
}

}  // namespace trafficlm
