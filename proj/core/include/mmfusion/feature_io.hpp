#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include "mmfusion/model.hpp"

namespace mmfusion {

// MMFF feature container, little-endian throughout:
//   header  "MMFF" | u32 version | u32 n_samples | u32 seq_len | u32 text_dim
//           | u32 n_regions | u32 region_dim | u32 global_dim
//   record  u64 id | u8 label | f32 tokens[seq_len*text_dim]
//           | f32 global[global_dim] | f32 regions[n_regions*region_dim]
// Records are fixed-size and unpadded.
struct FeatureFileHeader {
  static constexpr char kMagic[4] = {'M', 'M', 'F', 'F'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kBytes = 32;

  std::uint32_t version = kVersion;
  std::uint32_t n_samples = 0;
  std::uint32_t seq_len = 32;
  std::uint32_t text_dim = 3072;
  std::uint32_t n_regions = 49;
  std::uint32_t region_dim = 512;
  std::uint32_t global_dim = 4096;

  static FeatureFileHeader for_dims(const ModelDims& dims, std::uint32_t n_samples);
  std::size_t record_bytes() const;
  std::size_t file_bytes() const { return kBytes + std::size_t{n_samples} * record_bytes(); }
};

std::size_t feature_record_bytes(const ModelDims& dims);

// Writes header and records in order; returns the number of bytes written.
std::size_t write_features(const std::filesystem::path& path, std::span<const SampleFeatures> records,
                           const ModelDims& dims = ModelDims::standard());

/// Streaming reader. The header and the total file length are validated when
/// the file is opened, so a truncated file fails before any record is yielded.
class FeatureReader {
 public:
  explicit FeatureReader(const std::filesystem::path& path, const ModelDims& dims = ModelDims::standard());

  const FeatureFileHeader& header() const { return header_; }
  std::size_t size() const { return header_.n_samples; }
  std::optional<SampleFeatures> next();

 private:
  std::filesystem::path path_;
  ModelDims dims_;
  std::ifstream in_;
  FeatureFileHeader header_;
  std::size_t yielded_ = 0;
};

std::vector<SampleFeatures> read_features(const std::filesystem::path& path,
                                          const ModelDims& dims = ModelDims::standard());

// MMCK checkpoint, little-endian:
//   "MMCK" | u32 version | u32 param count
//   per parameter: u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 data
struct CheckpointFormat {
  static constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 12;
};

std::size_t save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);

// Loads into parameters shaped for `dims`; any unknown, missing or mis-shaped
// parameter is a format error listing the offending names.
ModelParams<float> load_checkpoint(const std::filesystem::path& path,
                                   const ModelDims& dims = ModelDims::standard());

}  // namespace mmfusion
