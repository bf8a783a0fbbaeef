#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tmr/core.hpp"

namespace tmr {

/// Two-layer perceptron  y = W2 * relu(W1 * x + b1) + b2.
struct MlpHead {
  Mat W1;  // hidden x in
  Vec b1;  // hidden
  Mat W2;  // out x hidden
  Vec b2;  // out

  int in_dim() const { return W1.cols; }
  int hidden_dim() const { return W1.rows; }
  int out_dim() const { return W2.rows; }
};

/// Forward activations needed by the backward pass. A cache is only valid
/// for the head and input it was filled from.
struct MlpCache {
  Vec x;
  Vec pre1;
  Vec act1;
  bool valid = false;
};

struct MlpGrads {
  Mat W1;
  Vec b1;
  Mat W2;
  Vec b2;

  static MlpGrads like(const MlpHead& h);
  void zero();
  void add_scaled(const MlpGrads& o, double s);
};

Vec mlp_forward(const MlpHead& head, std::span<const double> x, MlpCache* cache = nullptr);

/// Accumulates parameter gradients into `acc` and returns d(loss)/d(input).
/// The ReLU subgradient at exactly 0 is 0. A stale or missing cache is an
/// error.
Vec mlp_backward(const MlpHead& head, const MlpCache& cache, std::span<const double> dy, MlpGrads& acc);

/// Word embedding table plus head. A caption embeds as the mean of its
/// non-pad word vectors pushed through the head.
struct TextEncoder {
  Mat word_emb;  // vocab x word_dim
  MlpHead head;
};

struct TextCache {
  std::vector<int> active_ids;
  MlpCache mlp;
  bool valid = false;
};

struct TextGrads {
  Mat word_emb;
  MlpGrads head;

  static TextGrads like(const TextEncoder& e);
  void zero();
};

Vec encode_text(const TextEncoder& enc, const std::vector<int>& token_ids, TextCache* cache = nullptr);
void text_backward(const TextEncoder& enc, const TextCache& cache, std::span<const double> dy, TextGrads& acc);

enum class PoolMode { Mean, Max };

const char* pool_name(PoolMode p);
PoolMode parse_pool(const std::string& s);

/// Shared head applied to each view feature vector, pooled across views.
/// Max pooling is elementwise; argmax ties go to the lowest view index.
struct ViewEncoder {
  MlpHead head;
  PoolMode pooling = PoolMode::Mean;
};

struct ViewsCache {
  std::vector<MlpCache> per_view;
  std::vector<Vec> outputs;
  std::vector<int> argmax;  // per output component, max pooling only
  bool valid = false;
};

Vec encode_views(const ViewEncoder& enc, const std::vector<Vec>& views, ViewsCache* cache = nullptr);
void views_backward(const ViewEncoder& enc, const ViewsCache& cache, std::span<const double> dy, MlpGrads& acc);

struct ModelDims {
  int vocab = 0;
  int word_dim = 256;
  int view_dim = 0;
  int voxel_dim = 0;
  int hidden = 128;
  int embed_dim = 512;
};

/// All trainable parameters of the three towers.
struct ModelParams {
  TextEncoder text;
  ViewEncoder image;
  MlpHead voxel;

  ModelDims dims() const;
};

/// Parameter gradients, shape-matched to ModelParams. Zeroed between steps.
struct GradientTape {
  TextGrads text;
  MlpGrads image_head;
  MlpGrads voxel_head;

  static GradientTape like(const ModelParams& p);
  void zero();
};

/// Word embeddings ~ N(0,1); weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in));
/// biases zero. Deterministic per seed.
ModelParams init_model(const ModelDims& dims, PoolMode pooling, uint64_t seed);

/// Flat named view over a parameter or gradient set, fixed order, used by
/// the optimizer and the checkpoint format.
struct TensorRef {
  std::string name;
  std::vector<int> shape;
  double* data = nullptr;
  size_t size = 0;
};

std::vector<TensorRef> model_tensors(ModelParams& p);
std::vector<TensorRef> tape_tensors(GradientTape& t);

constexpr uint32_t kTrainedText = 1;
constexpr uint32_t kTrainedImage = 2;
constexpr uint32_t kTrainedVoxel = 4;

struct Checkpoint {
  ModelParams params;
  uint32_t trained_mask = 0;
};

/// Binary checkpoint. Layout: magic "TCKP", u32 version, then per tensor a
/// u32 name length, the name bytes, u32 rank, u32 dims, and little-endian
/// f64 values until EOF. Pooling mode and the trained-modality mask ride
/// along as 1-element meta tensors.
void write_checkpoint(const std::string& path, const ModelParams& params, uint32_t trained_mask);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace tmr
