#include "tmr/core.hpp"

#include <algorithm>
#include <cmath>

namespace tmr {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Image: return "image";
    case Modality::Voxel: return "voxel";
  }
  return "?";
}

void Mat::set_row(int i, std::span<const double> v) {
  if (static_cast<int>(v.size()) != cols) throw std::invalid_argument("Mat::set_row: length mismatch");
  std::copy(v.begin(), v.end(), row(i).begin());
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double na = norm(a);
  double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm input");
  return dot(a, b) / (na * nb);
}

Vec l2_normalize(std::span<const double> v) {
  double n = norm(v);
  if (n == 0.0) throw std::invalid_argument("l2_normalize: zero vector");
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

bool EmbeddingSpace::admits(const Embedding& e) const {
  return static_cast<int>(e.values.size()) == dim && modalities.count(e.modality) > 0;
}

namespace {

// splitmix64 output mix, also used as a standalone bit finalizer.
uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

Rng Rng::stream(uint64_t seed, std::string_view label) {
  return Rng(mix64(mix64(seed) ^ fnv1a(label)));
}

uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ull;
  return mix64(state_);
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = next_double();
  } while (u1 == 0.0);
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

uint64_t Rng::next_below(uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
  return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
}

}  // namespace tmr
