#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mmfusion {

// Seeded random stream. The same seed yields the same draw sequence on a given
// build; `counter` is the number of raw draws taken so far. Streams are never
// shared between consumers: use derive() to split off an independent one.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double low, double high);  // [low, high)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t below(std::uint64_t bound);  // [0, bound)

  RngStream derive(std::uint64_t tag) const;
  RngStream derive(std::string_view tag) const;

 private:
  // Counts raw engine draws so distributions can be used directly on the stream.
  struct CountingEngine {
    using result_type = std::mt19937_64::result_type;
    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() {
      ++*counter;
      return (*engine)();
    }
    std::mt19937_64* engine;
    std::uint64_t* counter;
  };
  CountingEngine engine() { return CountingEngine{&engine_, &counter_}; }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace mmfusion
