#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>

#include "bpsim/network.hpp"

namespace bpsim {

/// Checkpoint layout: the 8-byte magic "PSRLNET1", a little-endian uint32
/// byte length, a UTF-8 JSON header {layer_sizes, dtype, tensors:[{name,
/// shape}]}, then every tensor as little-endian float32 in header order.
inline constexpr char kCheckpointMagic[] = "PSRLNET1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes to a temporary sibling and renames it into place.
void save_params(const Network& params, const std::filesystem::path& path);

/// Reads a checkpoint. With `expected`, a mismatching architecture is
/// reported naming the first layer that differs.
Network load_params(const std::filesystem::path& path,
                    const std::optional<NetworkShape>& expected = std::nullopt);

}  // namespace bpsim
