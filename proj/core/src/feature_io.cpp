#include "mmfusion/feature_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <map>
#include <string>

#include "mmfusion/error.hpp"

namespace mmfusion {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + 4 * values.size());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + start, values.data(), 4 * values.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) out[start + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

std::uint64_t get_u64(const unsigned char* p) {
  return std::uint64_t{get_u32(p)} | (std::uint64_t{get_u32(p + 4)} << 32);
}

void get_f32(const unsigned char* p, std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), p, 4 * out.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  return out;
}

void write_all(std::ofstream& out, const std::string& bytes, const std::filesystem::path& path) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

std::size_t file_length(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) fail(ErrorKind::io, "cannot stat " + path.string() + ": " + ec.message());
  return static_cast<std::size_t>(size);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

FeatureFileHeader FeatureFileHeader::for_dims(const ModelDims& dims, std::uint32_t n_samples) {
  FeatureFileHeader h;
  h.n_samples = n_samples;
  h.seq_len = static_cast<std::uint32_t>(dims.seq_len);
  h.text_dim = static_cast<std::uint32_t>(dims.text_dim);
  h.n_regions = static_cast<std::uint32_t>(dims.n_regions);
  h.region_dim = static_cast<std::uint32_t>(dims.region_dim);
  h.global_dim = static_cast<std::uint32_t>(dims.global_dim);
  return h;
}

std::size_t FeatureFileHeader::record_bytes() const {
  return 8 + 1 + 4 * (std::size_t{seq_len} * text_dim + global_dim + std::size_t{n_regions} * region_dim);
}

std::size_t feature_record_bytes(const ModelDims& dims) {
  return FeatureFileHeader::for_dims(dims, 0).record_bytes();
}

std::size_t write_features(const std::filesystem::path& path, std::span<const SampleFeatures> records,
                           const ModelDims& dims) {
  for (const auto& r : records) validate(r, dims);
  const FeatureFileHeader h = FeatureFileHeader::for_dims(dims, static_cast<std::uint32_t>(records.size()));
  std::ofstream out = open_for_write(path);

  std::string bytes(FeatureFileHeader::kMagic, 4);
  for (std::uint32_t v : {h.version, h.n_samples, h.seq_len, h.text_dim, h.n_regions, h.region_dim, h.global_dim}) {
    put_u32(bytes, v);
  }
  write_all(out, bytes, path);
  std::size_t total = bytes.size();

  for (const auto& r : records) {
    bytes.clear();
    bytes.reserve(h.record_bytes());
    put_u64(bytes, r.id);
    bytes.push_back(static_cast<char>(r.label));
    put_f32(bytes, r.tokens.data());
    put_f32(bytes, r.image_global.data());
    put_f32(bytes, r.image_regions.data());
    write_all(out, bytes, path);
    total += bytes.size();
  }
  out.flush();
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
  return total;
}

FeatureReader::FeatureReader(const std::filesystem::path& path, const ModelDims& dims)
    : path_(path), dims_(dims) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::io, "feature file not found: " + path.string());
  const std::size_t actual = file_length(path);
  in_.open(path, std::ios::binary);
  if (!in_) fail(ErrorKind::io, "cannot open " + path.string());
  if (actual < FeatureFileHeader::kBytes) {
    fail(ErrorKind::corruption, path.string() + ": truncated header, expected at least " +
                                    std::to_string(FeatureFileHeader::kBytes) + " bytes, found " +
                                    std::to_string(actual));
  }
  unsigned char raw[FeatureFileHeader::kBytes];
  in_.read(reinterpret_cast<char*>(raw), sizeof(raw));
  if (std::memcmp(raw, FeatureFileHeader::kMagic, 4) != 0) {
    fail(ErrorKind::format, path.string() + ": bad magic, expected \"MMFF\"");
  }
  header_.version = get_u32(raw + 4);
  header_.n_samples = get_u32(raw + 8);
  header_.seq_len = get_u32(raw + 12);
  header_.text_dim = get_u32(raw + 16);
  header_.n_regions = get_u32(raw + 20);
  header_.region_dim = get_u32(raw + 24);
  header_.global_dim = get_u32(raw + 28);
  if (header_.version != FeatureFileHeader::kVersion) {
    fail(ErrorKind::format, path.string() + ": unsupported version " + std::to_string(header_.version));
  }
  const FeatureFileHeader expected = FeatureFileHeader::for_dims(dims, header_.n_samples);
  auto check = [&](const char* field, std::uint32_t got, std::uint32_t want) {
    if (got != want) {
      fail(ErrorKind::format, path.string() + ": header field " + field + " is " + std::to_string(got) +
                                  ", model expects " + std::to_string(want));
    }
  };
  check("seq_len", header_.seq_len, expected.seq_len);
  check("text_dim", header_.text_dim, expected.text_dim);
  check("n_regions", header_.n_regions, expected.n_regions);
  check("region_dim", header_.region_dim, expected.region_dim);
  check("global_dim", header_.global_dim, expected.global_dim);
  if (actual != header_.file_bytes()) {
    fail(ErrorKind::corruption, path.string() + ": expected " + std::to_string(header_.file_bytes()) +
                                    " bytes for " + std::to_string(header_.n_samples) + " records, found " +
                                    std::to_string(actual));
  }
}

std::optional<SampleFeatures> FeatureReader::next() {
  if (yielded_ >= header_.n_samples) return std::nullopt;
  std::vector<unsigned char> raw(header_.record_bytes());
  in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in_) {
    fail(ErrorKind::corruption, path_.string() + ": record " + std::to_string(yielded_) + " is truncated");
  }
  SampleFeatures s;
  s.id = get_u64(raw.data());
  s.label = raw[8];
  if (s.label > 1) {
    fail(ErrorKind::corruption, path_.string() + ": record " + std::to_string(yielded_) + " has label " +
                                    std::to_string(s.label));
  }
  const unsigned char* p = raw.data() + 9;
  s.tokens = Tensor<float>({dims_.seq_len, dims_.text_dim});
  get_f32(p, s.tokens.data());
  p += 4 * s.tokens.size();
  s.image_global = Tensor<float>({dims_.global_dim});
  get_f32(p, s.image_global.data());
  p += 4 * s.image_global.size();
  s.image_regions = Tensor<float>({dims_.n_regions, dims_.region_dim});
  get_f32(p, s.image_regions.data());
  ++yielded_;
  return s;
}

std::vector<SampleFeatures> read_features(const std::filesystem::path& path, const ModelDims& dims) {
  FeatureReader reader(path, dims);
  std::vector<SampleFeatures> out;
  out.reserve(reader.size());
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

std::size_t save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  const auto named = params.named();
  std::string bytes(CheckpointFormat::kMagic, 4);
  put_u32(bytes, CheckpointFormat::kVersion);
  put_u32(bytes, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    put_u32(bytes, static_cast<std::uint32_t>(name.size()));
    bytes += name;
    put_u32(bytes, static_cast<std::uint32_t>(tensor->rank()));
    for (auto d : tensor->shape()) put_u32(bytes, static_cast<std::uint32_t>(d));
    put_f32(bytes, tensor->data());
  }
  std::ofstream out = open_for_write(path);
  write_all(out, bytes, path);
  out.flush();
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
  return bytes.size();
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelDims& dims) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::io, "checkpoint not found: " + path.string());
  const std::string bytes = read_file(path);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) {
      fail(ErrorKind::corruption, path.string() + ": truncated checkpoint, expected at least " +
                                      std::to_string(pos + n) + " bytes, found " + std::to_string(bytes.size()));
    }
  };
  need(CheckpointFormat::kHeaderBytes);
  if (std::memcmp(data, CheckpointFormat::kMagic, 4) != 0) {
    fail(ErrorKind::format, path.string() + ": bad magic, expected \"MMCK\"");
  }
  const std::uint32_t version = get_u32(data + 4);
  if (version != CheckpointFormat::kVersion) {
    fail(ErrorKind::format, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(data + 8);
  pos = CheckpointFormat::kHeaderBytes;

  std::map<std::string, Tensor<float>> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    need(4);
    const std::uint32_t name_len = get_u32(data + pos);
    pos += 4;
    need(name_len);
    std::string name(bytes.data() + pos, name_len);
    pos += name_len;
    need(4);
    const std::uint32_t rank = get_u32(data + pos);
    pos += 4;
    need(4 * std::size_t{rank});
    Shape shape(rank);
    for (auto& d : shape) {
      d = get_u32(data + pos);
      pos += 4;
      if (d == 0) fail(ErrorKind::format, path.string() + ": parameter " + name + " has a zero dimension");
    }
    const std::size_t n = shape_size(shape);
    need(4 * n);
    Tensor<float> t(shape);
    get_f32(data + pos, t.data());
    pos += 4 * n;
    stored.emplace(std::move(name), std::move(t));
  }
  if (pos != bytes.size()) {
    fail(ErrorKind::corruption, path.string() + ": " + std::to_string(bytes.size() - pos) +
                                    " trailing bytes after the last parameter");
  }

  ModelParams<float> params = zero_params<float>(dims);
  std::string missing, mismatched, unknown;
  auto append = [](std::string& list, const std::string& name) { list += (list.empty() ? "" : ", ") + name; };
  for (auto& [name, tensor] : params.named()) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      append(missing, name);
      continue;
    }
    if (it->second.shape() != tensor->shape()) {
      append(mismatched, name + " " + shape_string(it->second.shape()) + " vs " + shape_string(tensor->shape()));
    } else {
      *tensor = std::move(it->second);
    }
    stored.erase(it);
  }
  for (const auto& [name, _] : stored) append(unknown, name);
  if (!missing.empty() || !mismatched.empty() || !unknown.empty()) {
    std::string msg = path.string() + ": checkpoint does not match the model architecture;";
    if (!missing.empty()) msg += " missing: " + missing + ";";
    if (!unknown.empty()) msg += " unknown: " + unknown + ";";
    if (!mismatched.empty()) msg += " shape mismatch: " + mismatched + ";";
    fail(ErrorKind::format, msg);
  }
  return params;
}

}  // namespace mmfusion
