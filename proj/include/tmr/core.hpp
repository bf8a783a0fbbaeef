#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tmr {

using Vec = std::vector<double>;

enum class Modality { Text, Image, Voxel };

const char* modality_name(Modality m);

/// Row-major dense matrix of doubles. Deliberately minimal: the encoders and
/// losses need row access and a handful of products, nothing more.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  std::span<double> row(int i) { return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int i) const {
    return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
  }

  void set_row(int i, std::span<const double> v);
  Vec row_vec(int i) const { return Vec(row(i).begin(), row(i).end()); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Cosine similarity a.b / (|a||b|). Zero-norm inputs and length mismatches
/// are errors, never a silent 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// v / |v|. Zero vector is an error.
Vec l2_normalize(std::span<const double> v);

/// The shared d-dimensional space embeddings live in.
struct EmbeddingSpace {
  int dim = 512;
  std::set<Modality> modalities;

  bool admits(const struct Embedding& e) const;
};

/// One modality's encoding of one object.
struct Embedding {
  Vec values;
  Modality modality = Modality::Text;
  std::string object_id;
};

/// Deterministic splitmix64 generator.
///
/// The raw u64 stream is bit-identical across platforms and runs for a given
/// seed. Substreams are derived as mix(mix(seed) xor fnv1a(label)), so
/// distinct labels give statistically independent streams. Doubles take the
/// top 53 bits; gaussians are Box-Muller over those doubles.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  static Rng stream(uint64_t seed, std::string_view label);

  uint64_t next_u64();
  double next_double();             // uniform [0, 1)
  double next_gaussian();           // standard normal
  uint64_t next_below(uint64_t n);  // uniform [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(next_below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  uint64_t state_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Raised when training produces a non-finite loss; carries the step index.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tmr
