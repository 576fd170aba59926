#include "m2fedaqi/rng.hpp"

#include <cmath>
#include <numbers>

namespace m2fedaqi {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomStream::RandomStream(std::uint64_t seed) : key_(mix64(seed ^ 0x6d3266656461716bULL)) {}

RandomStream RandomStream::derive(std::string_view label) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return RandomStream(mix64(key_ ^ mix64(h)), 0);
}

RandomStream RandomStream::derive(std::uint64_t index) const {
  return RandomStream(mix64(key_ + mix64(index ^ 0xa0761d6478bd642fULL)), 0);
}

RandomStream::result_type RandomStream::operator()() {
  const std::uint64_t c = counter_++;
  return mix64(mix64(c ^ key_) + key_);
}

double RandomStream::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace m2fedaqi
