#pragma once

#include <cstdint>
#include <span>

namespace noisyforge {

// What a random stream is used for. Part of every stream's path, so streams
// for different purposes never coincide.
enum class Purpose : std::uint8_t {
  kInit = 1,
  kShuffle = 2,
  kSigmaVar = 3,
  kTrainNoise = 4,
  kEvalNoise = 5,
  kData = 6,
  kSubsample = 7,
  kTest = 8,
};

struct RngPath {
  Purpose purpose = Purpose::kTest;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
  std::uint64_t sample = 0;
  std::uint64_t layer = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

// Counter-based generator: the value at draw `counter` is a pure function of
// (root_seed, path, counter). Streams carry no hidden state besides the
// counter, so any number of them can be derived and consumed concurrently.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, RngPath path, std::uint64_t counter = 0);

  std::uint64_t root_seed() const { return root_seed_; }
  const RngPath& path() const { return path_; }
  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t counter) { counter_ = counter; }

  RngStream with_epoch(std::uint64_t v) const;
  RngStream with_batch(std::uint64_t v) const;
  RngStream with_sample(std::uint64_t v) const;
  RngStream with_layer(std::uint64_t v) const;

  std::uint64_t bits_at(std::uint64_t counter) const;
  // Uniform in (0, 1], 53-bit resolution.
  double uniform_at(std::uint64_t counter) const;
  // Standard normal. Counters 2q and 2q+1 are the cosine and sine halves of
  // one Box-Muller pair.
  double normal_at(std::uint64_t counter) const;

  std::uint64_t next_bits() { return bits_at(counter_++); }
  double next_uniform() { return uniform_at(counter_++); }
  // Uniform integer in [0, bound), bound > 0.
  std::uint64_t next_below(std::uint64_t bound);

  // out[i] (+)= scale * normal_at(counter + i); advances the counter.
  void fill_normal(std::span<float> out, float scale, bool accumulate);

 private:
  std::uint64_t root_seed_;
  RngPath path_;
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Standard normal at the stream's current counter; advances the counter.
double normal_draw(RngStream& stream);

}  // namespace noisyforge
