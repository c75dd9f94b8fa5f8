#include "bpsim/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace bpsim {

using nlohmann::json;

namespace {

constexpr std::size_t kMagicSize = 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string layer_name(std::size_t l, std::size_t count) {
  if (l == 0) return "input";
  if (l + 1 == count) return "output";
  return fmt::format("hidden{}", l - 1);
}

}  // namespace

void save_params(const Network& params, const std::filesystem::path& path) {
  json header;
  header["layer_sizes"] = params.shape().layer_sizes();
  header["dtype"] = "float32";
  header["tensors"] = json::array();
  const auto tensors = params.tensors();
  for (const auto& t : tensors)
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  const std::string header_text = header.dump();

  std::string blob(kCheckpointMagic, kMagicSize);
  put_u32(blob, static_cast<std::uint32_t>(header_text.size()));
  blob += header_text;
  for (const auto& t : tensors)
    for (float v : t.data) put_u32(blob, std::bit_cast<std::uint32_t>(v));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError(fmt::format("write failed for '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Network load_params(const std::filesystem::path& path,
                    const std::optional<NetworkShape>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string blob = buffer.str();
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  if (blob.size() < kMagicSize + 4 || blob.compare(0, kMagicSize, kCheckpointMagic) != 0)
    throw CheckpointError(fmt::format("'{}' is not a checkpoint (bad magic)", path.string()));
  const std::uint32_t header_len = get_u32(bytes + kMagicSize);
  const std::size_t data_start = kMagicSize + 4 + header_len;
  if (blob.size() < data_start)
    throw CheckpointError(fmt::format("'{}' is truncated inside the header", path.string()));

  json header;
  std::vector<int> sizes;
  try {
    header = json::parse(blob.begin() + kMagicSize + 4, blob.begin() + data_start);
    sizes = header.at("layer_sizes").get<std::vector<int>>();
    if (header.at("dtype").get<std::string>() != "float32")
      throw CheckpointError("unsupported dtype");
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("'{}': malformed header: {}", path.string(), e.what()));
  }
  if (sizes.size() < 2)
    throw CheckpointError(fmt::format("'{}': need at least two layer sizes", path.string()));

  if (expected) {
    const auto want = expected->layer_sizes();
    if (want.size() != sizes.size())
      throw CheckpointError(fmt::format("shape mismatch: checkpoint has {} layers, expected {}",
                                        sizes.size(), want.size()));
    for (std::size_t l = 0; l < want.size(); ++l)
      if (want[l] != sizes[l])
        throw CheckpointError(fmt::format("shape mismatch in layer {}: checkpoint {} vs expected {}",
                                          layer_name(l, want.size()), sizes[l], want[l]));
  }

  NetworkShape shape{sizes.front(),
                     std::vector<int>(sizes.begin() + 1, sizes.end() - 1), sizes.back()};
  Network params;
  try {
    params = Network(shape);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(fmt::format("'{}': {}", path.string(), e.what()));
  }

  auto tensors = params.tensors();
  const auto& listed = header.at("tensors");
  if (!listed.is_array() || listed.size() != tensors.size())
    throw CheckpointError(fmt::format("'{}': tensor list does not match layer sizes", path.string()));
  std::size_t offset = data_start;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (listed[t].value("name", "") != tensors[t].name ||
        listed[t].value("shape", std::vector<int>{}) != tensors[t].shape)
      throw CheckpointError(fmt::format("'{}': tensor {} ('{}') has unexpected name or shape",
                                        path.string(), t, tensors[t].name));
    const std::size_t need = 4 * tensors[t].data.size();
    if (blob.size() < offset + need)
      throw CheckpointError(fmt::format("'{}' is truncated in tensor '{}'", path.string(),
                                        tensors[t].name));
    for (auto& v : tensors[t].data) {
      v = std::bit_cast<float>(get_u32(bytes + offset));
      offset += 4;
    }
  }
  if (offset != blob.size())
    throw CheckpointError(fmt::format("'{}' has {} trailing bytes", path.string(),
                                      blob.size() - offset));
  return params;
}

}  // namespace bpsim
