#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mmfusion/model.hpp"

namespace mmfusion {

// Class-conditional Gaussian features for backbone-free runs. Every row of a
// feature group (token rows, the global vector, region rows) is drawn from
// N(+-(separation * weight / 2) * u, I), where u is a fixed random unit vector
// per group and the sign follows the label, so the two class means sit
// `separation` apart along u.
struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n = 128;
  double separation = 4.0;
  double text_weight = 1.0;
  double global_weight = 1.0;
  double region_weight = 1.0;
  double noise = 1.0;  // per-entry standard deviation
};

// Labels alternate fake/real starting with fake, so ceil(n/2) posts are fake.
std::vector<SampleFeatures> synth_generate(const SynthConfig& config,
                                           const ModelDims& dims = ModelDims::standard());

std::vector<SampleFeatures> synth_generate(std::uint64_t seed, std::size_t n, double separation,
                                           const ModelDims& dims = ModelDims::standard());

struct SynthDirections {
  std::vector<double> text;    // text_dim
  std::vector<double> global;  // global_dim
  std::vector<double> region;  // region_dim
};

// The per-group class directions used for `seed`.
SynthDirections synth_directions(std::uint64_t seed, const ModelDims& dims = ModelDims::standard());

}  // namespace mmfusion
