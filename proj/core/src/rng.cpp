#include "mmfusion/rng.hpp"

#include <array>

namespace mmfusion {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(seeded_engine(seed)) {}

std::uint64_t RngStream::next_u64() {
  auto eng = engine();
  return eng();
}

double RngStream::uniform() {
  auto eng = engine();
  return std::uniform_real_distribution<double>(0.0, 1.0)(eng);
}

double RngStream::uniform(double low, double high) {
  auto eng = engine();
  return std::uniform_real_distribution<double>(low, high)(eng);
}

double RngStream::normal(double mean, double stddev) {
  auto eng = engine();
  return std::normal_distribution<double>(mean, stddev)(eng);
}

std::uint64_t RngStream::below(std::uint64_t bound) {
  auto eng = engine();
  return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(eng);
}

RngStream RngStream::derive(std::uint64_t tag) const {
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    0x5eedu};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return RngStream((std::uint64_t{words[0]} << 32) | words[1]);
}

RngStream RngStream::derive(std::string_view tag) const {
  // FNV-1a, stable across builds unlike std::hash.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return derive(h);
}

}  // namespace mmfusion
