#include "mmfusion/synth.hpp"

#include <cmath>

#include "mmfusion/error.hpp"
#include "mmfusion/rng.hpp"

namespace mmfusion {

namespace {

std::vector<double> unit_vector(RngStream rng, std::size_t n) {
  std::vector<double> u(n);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : u) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : u) x /= norm;
  return u;
}

// Every row of `out` gets offset * u plus independent noise.
void fill_group(Tensor<float>& out, const std::vector<double>& u, double offset, double noise, RngStream& rng) {
  const std::size_t cols = u.size();
  auto data = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<float>(offset * u[i % cols] + noise * rng.normal());
  }
}

}  // namespace

SynthDirections synth_directions(std::uint64_t seed, const ModelDims& dims) {
  const RngStream root = RngStream(seed).derive("directions");
  return SynthDirections{unit_vector(root.derive("text"), dims.text_dim),
                         unit_vector(root.derive("global"), dims.global_dim),
                         unit_vector(root.derive("region"), dims.region_dim)};
}

std::vector<SampleFeatures> synth_generate(const SynthConfig& config, const ModelDims& dims) {
  if (config.n < 2) fail(ErrorKind::configuration, "synthetic set needs n >= 2, got " + std::to_string(config.n));
  if (!(config.separation >= 0.0)) fail(ErrorKind::configuration, "separation must be >= 0");
  if (!(config.noise >= 0.0)) fail(ErrorKind::configuration, "noise must be >= 0");
  validate(dims);

  const SynthDirections dirs = synth_directions(config.seed, dims);
  const RngStream samples_root = RngStream(config.seed).derive("samples");
  std::vector<SampleFeatures> out;
  out.reserve(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    SampleFeatures s;
    s.id = i;
    s.label = (i % 2 == 0) ? 1 : 0;
    const double sign = s.label == 1 ? 1.0 : -1.0;
    const double half = 0.5 * config.separation * sign;
    RngStream rng = samples_root.derive(static_cast<std::uint64_t>(i));
    s.tokens = Tensor<float>({dims.seq_len, dims.text_dim});
    s.image_global = Tensor<float>({dims.global_dim});
    s.image_regions = Tensor<float>({dims.n_regions, dims.region_dim});
    fill_group(s.tokens, dirs.text, half * config.text_weight, config.noise, rng);
    fill_group(s.image_global, dirs.global, half * config.global_weight, config.noise, rng);
    fill_group(s.image_regions, dirs.region, half * config.region_weight, config.noise, rng);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SampleFeatures> synth_generate(std::uint64_t seed, std::size_t n, double separation,
                                           const ModelDims& dims) {
  SynthConfig config;
  config.seed = seed;
  config.n = n;
  config.separation = separation;
  return synth_generate(config, dims);
}

}  // namespace mmfusion
