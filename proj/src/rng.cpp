#include "noisyforge/rng.hpp"

#include <cmath>
#include <numbers>

namespace noisyforge {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t derive_key(std::uint64_t root, const RngPath& p) {
  std::uint64_t k = splitmix64_mix(root ^ 0x6E6F697379666F72ULL);
  const std::uint64_t parts[] = {static_cast<std::uint64_t>(p.purpose), p.epoch, p.batch, p.sample, p.layer};
  std::uint64_t salt = 1;
  for (auto v : parts) {
    k = splitmix64_mix(k ^ splitmix64_mix(v + salt * kGamma));
    ++salt;
  }
  return k;
}

}  // namespace

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t root_seed, RngPath path, std::uint64_t counter)
    : root_seed_(root_seed), path_(path), key_(derive_key(root_seed, path)), counter_(counter) {}

RngStream RngStream::with_epoch(std::uint64_t v) const {
  RngPath p = path_;
  p.epoch = v;
  return RngStream(root_seed_, p);
}
RngStream RngStream::with_batch(std::uint64_t v) const {
  RngPath p = path_;
  p.batch = v;
  return RngStream(root_seed_, p);
}
RngStream RngStream::with_sample(std::uint64_t v) const {
  RngPath p = path_;
  p.sample = v;
  return RngStream(root_seed_, p);
}
RngStream RngStream::with_layer(std::uint64_t v) const {
  RngPath p = path_;
  p.layer = v;
  return RngStream(root_seed_, p);
}

std::uint64_t RngStream::bits_at(std::uint64_t counter) const {
  return splitmix64_mix(key_ + (counter + 1) * kGamma);
}

double RngStream::uniform_at(std::uint64_t counter) const {
  return static_cast<double>((bits_at(counter) >> 11) + 1) * 0x1.0p-53;
}

double RngStream::normal_at(std::uint64_t counter) const {
  const std::uint64_t pair = counter & ~std::uint64_t{1};
  const double r = std::sqrt(-2.0 * std::log(uniform_at(pair)));
  const double angle = 2.0 * std::numbers::pi * uniform_at(pair + 1);
  return (counter & 1) ? r * std::sin(angle) : r * std::cos(angle);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  for (;;) {
    const std::uint64_t v = next_bits();
    if (v < limit) return v % bound;
  }
}

void RngStream::fill_normal(std::span<float> out, float scale, bool accumulate) {
  const double s = scale;
  std::size_t i = 0;
  // Odd starting counter: finish the pair it belongs to.
  if ((counter_ & 1) && i < out.size()) {
    const float v = static_cast<float>(s * normal_at(counter_));
    out[i] = accumulate ? out[i] + v : v;
    ++i;
    ++counter_;
  }
  for (; i + 1 < out.size(); i += 2, counter_ += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform_at(counter_)));
    const double angle = 2.0 * std::numbers::pi * uniform_at(counter_ + 1);
    const auto a = static_cast<float>(s * (r * std::cos(angle)));
    const auto b = static_cast<float>(s * (r * std::sin(angle)));
    out[i] = accumulate ? out[i] + a : a;
    out[i + 1] = accumulate ? out[i + 1] + b : b;
  }
  if (i < out.size()) {
    const float v = static_cast<float>(s * normal_at(counter_));
    out[i] = accumulate ? out[i] + v : v;
    ++counter_;
  }
}

double normal_draw(RngStream& stream) {
  const double v = stream.normal_at(stream.counter());
  stream.set_counter(stream.counter() + 1);
  return v;
}

}  // namespace noisyforge
