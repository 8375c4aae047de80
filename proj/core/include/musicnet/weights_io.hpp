#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "musicnet/model.hpp"

// Portable weight file, little-endian throughout:
//
//   "MNW1"                 4 bytes magic
//   format_version         uint32
//   tensor_count           uint32      <- CRC32 coverage starts here
//   per tensor:
//     name_len             uint16, then UTF-8 name bytes
//     dtype                uint8 (0 = float32)
//     rank                 uint8, then rank x uint32 dims
//     payload              float32 row-major
//   crc32                  uint32 (IEEE) over everything after the 8-byte header
namespace musicnet {

inline constexpr char kWeightMagic[4] = {'M', 'N', 'W', '1'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// A structurally valid file; the CRC verdict is reported, not enforced.
struct WeightFile {
  std::uint32_t format_version = kWeightFormatVersion;
  std::vector<NamedTensor> tensors;
  std::uint32_t stored_crc = 0;
  std::uint32_t computed_crc = 0;

  bool crc_ok() const { return stored_crc == computed_crc; }
  const NamedTensor* find(const std::string& name) const;
};

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_weight_file(const std::vector<NamedTensor>& tensors);

/// Throws FormatError on bad magic, unknown dtype, or truncation.
WeightFile parse_weight_file(std::span<const std::uint8_t> bytes);

/// Featurization tensors (feat.*) followed by the network parameters.
std::vector<NamedTensor> model_tensors(const MusicNetModel& model);

std::vector<std::uint8_t> save_weights(const MusicNetModel& model);
void save_weights(const MusicNetModel& model, const std::filesystem::path& path);

/// Full validation: FormatError, then IntegrityError on CRC mismatch, then
/// TopologyError if shapes deviate from `expected` (any consistent topology
/// is accepted when `expected` is empty).
MusicNetModel load_weights(std::span<const std::uint8_t> bytes,
                           const std::optional<Topology>& expected = Topology::table1());
MusicNetModel load_weights(const std::filesystem::path& path,
                           const std::optional<Topology>& expected = Topology::table1());

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace musicnet
