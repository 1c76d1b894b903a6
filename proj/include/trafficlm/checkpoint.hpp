#pragma once

#include <cstdint>
#include <string>

#include "trafficlm/model.hpp"

namespace trafficlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: 8-byte magic "TRFLMCK\0", u32 version, u64 header length, a JSON
/// header (config plus name/shape/dtype/offset per tensor), then every tensor
/// as little-endian float32 in header order.
void save_checkpoint(const Classifier &model, const std::string &path);

/// VersionMismatch for another format version, CorruptCheckpoint for
/// anything structurally wrong (bad magic, truncation, shape disagreement).
Classifier load_checkpoint(const std::string &path);

/// Bytes preceding the tensor data for this model's checkpoint.
std::size_t checkpoint_header_bytes(const Classifier &model);

std::string config_to_json(const ModelConfig &config);
/// Unknown keys are rejected with BadConfig naming the key.
ModelConfig config_from_json(const std::string &text);

}  // namespace trafficlm
