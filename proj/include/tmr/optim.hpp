#pragma once

#include <cstdint>
#include <vector>

#include "tmr/datagen.hpp"
#include "tmr/encoders.hpp"
#include "tmr/losses.hpp"
#include "tmr/metrics.hpp"
#include "tmr/retrieval.hpp"

namespace tmr {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one slot per parameter tensor.
struct AdamState {
  std::vector<Vec> m;
  std::vector<Vec> v;
  long t = 0;

  static AdamState like(const std::vector<TensorRef>& params);
};

/// Linear scaling rule: base_lr * batch / base_batch.
double scaled_lr(double base_lr, int base_batch, int batch);

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
/// params and grads must be shape-aligned, tensor by tensor.
void adam_step(AdamState& state, const AdamConfig& cfg, std::vector<TensorRef>& params,
               const std::vector<TensorRef>& grads);

struct BatchEntry {
  int record = 0;   // index into the record list handed to make_batches
  int caption = 0;  // caption index within that record
};
using Batch = std::vector<BatchEntry>;

/// Shuffles the records, chunks them into full batches (the short remainder
/// is dropped) and samples one caption per record for the epoch.
std::vector<Batch> make_batches(const std::vector<const DatasetRecord*>& records, int batch_size, Rng& rng);

enum class ModalityMode { BimodalIT, BimodalVT, Trimodal };
enum class LossKind { NtXent, Triplet };
enum class SelectionMetric { MRR, RR1, RR5, NDCG5 };

const char* modality_mode_name(ModalityMode m);
ModalityMode parse_modality_mode(const std::string& s);
const char* loss_kind_name(LossKind k);
LossKind parse_loss_kind(const std::string& s);
const char* selection_metric_name(SelectionMetric m);
SelectionMetric parse_selection_metric(const std::string& s);

/// Which strategy a modality mode is scored with (I, V, or I+V).
Strategy default_strategy(ModalityMode m);

struct TrainConfig {
  int batch_size = 128;
  double base_lr = 0.00035;
  int base_batch = 128;
  int epochs = 20;
  uint64_t seed = 0;
  ModalityMode mode = ModalityMode::Trimodal;
  LossKind loss = LossKind::NtXent;
  ContrastiveConfig contrastive;
  TripletConfig triplet;
  SelectionMetric selection = SelectionMetric::MRR;
  PoolMode pooling = PoolMode::Mean;
  int word_dim = 256;
  int hidden = 128;
  int embed_dim = 512;
  bool fuse_normalize = false;
  int topk = 5;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rr1 = 0.0;
  double val_rr5 = 0.0;
  double val_ndcg5 = 0.0;
  double val_mrr = 0.0;
};

struct TrainResult {
  ModelParams params;  // checkpoint with the best validation metric
  uint32_t trained_mask = 0;
  int best_epoch = 0;  // 0 means the initialization was never improved on
  std::vector<EpochStats> history;
};

/// Ranks every caption of `records` against an index built from the same
/// records and summarizes the ranking metrics.
RankingSummary evaluate_records(const ModelParams& params, uint32_t trained_mask,
                                const std::vector<const DatasetRecord*>& records, Strategy strategy,
                                const std::vector<int>& ks, bool fuse_normalize, int topk);

/// Epoch-shuffled minibatch training with Adam on the modality pairing the
/// mode selects. Keeps the checkpoint with the best validation selection
/// metric (ties keep the earlier epoch). A non-finite loss aborts with a
/// DivergenceError naming the step. Bitwise deterministic per (seed, config).
TrainResult train(const Dataset& ds, const TrainConfig& cfg);

}  // namespace tmr
