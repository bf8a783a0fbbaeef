#include "tmr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tmr {

AdamState AdamState::like(const std::vector<TensorRef>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size, 0.0);
    s.v.emplace_back(p.size, 0.0);
  }
  return s;
}

double scaled_lr(double base_lr, int base_batch, int batch) {
  if (base_lr <= 0.0) throw std::invalid_argument("scaled_lr: base learning rate must be positive");
  if (base_batch < 1 || batch < 1) throw std::invalid_argument("scaled_lr: batch sizes must be positive");
  return base_lr * static_cast<double>(batch) / static_cast<double>(base_batch);
}

void adam_step(AdamState& state, const AdamConfig& cfg, std::vector<TensorRef>& params,
               const std::vector<TensorRef>& grads) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter, gradient and state lists must align");
  state.t += 1;
  double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size || params[i].size != state.m[i].size())
      throw std::invalid_argument("adam_step: tensor '" + params[i].name + "' is misaligned");
    double* theta = params[i].data;
    const double* g = grads[i].data;
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    for (size_t k = 0; k < params[i].size; ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      theta[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

std::vector<Batch> make_batches(const std::vector<const DatasetRecord*>& records, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch size must be positive");
  if (static_cast<int>(records.size()) < batch_size)
    throw std::invalid_argument("make_batches: fewer records than one batch");
  for (const auto* r : records)
    if (r->caption_ids.empty())
      throw std::invalid_argument("make_batches: object '" + r->object_id + "' has no captions");

  std::vector<int> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  int n_batches = static_cast<int>(records.size()) / batch_size;  // short remainder dropped
  std::vector<Batch> batches(n_batches);
  for (int b = 0; b < n_batches; ++b) {
    batches[b].reserve(batch_size);
    for (int s = 0; s < batch_size; ++s) {
      int rec = order[static_cast<size_t>(b) * batch_size + s];
      int cap = static_cast<int>(rng.next_below(records[rec]->caption_ids.size()));
      batches[b].push_back({rec, cap});
    }
  }
  return batches;
}

const char* modality_mode_name(ModalityMode m) {
  switch (m) {
    case ModalityMode::BimodalIT: return "bimodal-it";
    case ModalityMode::BimodalVT: return "bimodal-vt";
    case ModalityMode::Trimodal: return "trimodal";
  }
  return "?";
}

ModalityMode parse_modality_mode(const std::string& s) {
  if (s == "bimodal-it") return ModalityMode::BimodalIT;
  if (s == "bimodal-vt") return ModalityMode::BimodalVT;
  if (s == "trimodal") return ModalityMode::Trimodal;
  throw std::invalid_argument("unknown modality mode: " + s);
}

const char* loss_kind_name(LossKind k) { return k == LossKind::NtXent ? "ntxent" : "triplet"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "ntxent") return LossKind::NtXent;
  if (s == "triplet") return LossKind::Triplet;
  throw std::invalid_argument("unknown loss kind: " + s);
}

const char* selection_metric_name(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::MRR: return "mrr";
    case SelectionMetric::RR1: return "rr1";
    case SelectionMetric::RR5: return "rr5";
    case SelectionMetric::NDCG5: return "ndcg5";
  }
  return "?";
}

SelectionMetric parse_selection_metric(const std::string& s) {
  if (s == "mrr") return SelectionMetric::MRR;
  if (s == "rr1") return SelectionMetric::RR1;
  if (s == "rr5") return SelectionMetric::RR5;
  if (s == "ndcg5") return SelectionMetric::NDCG5;
  throw std::invalid_argument("unknown selection metric: " + s);
}

Strategy default_strategy(ModalityMode m) {
  switch (m) {
    case ModalityMode::BimodalIT: return Strategy::Image;
    case ModalityMode::BimodalVT: return Strategy::Voxel;
    case ModalityMode::Trimodal: return Strategy::ImagePlusVoxel;
  }
  throw std::invalid_argument("unknown modality mode");
}

RankingSummary evaluate_records(const ModelParams& params, uint32_t trained_mask,
                                const std::vector<const DatasetRecord*>& records, Strategy strategy,
                                const std::vector<int>& ks, bool fuse_normalize, int topk) {
  ShapeIndex index = build_index(records, params, trained_mask, fuse_normalize);
  std::vector<RankedResult> results = evaluate_split(index, params, caption_queries(records), strategy, topk);
  return summarize_ranking(results, ks);
}

namespace {

uint32_t mask_for_mode(ModalityMode m) {
  switch (m) {
    case ModalityMode::BimodalIT: return kTrainedText | kTrainedImage;
    case ModalityMode::BimodalVT: return kTrainedText | kTrainedVoxel;
    case ModalityMode::Trimodal: return kTrainedText | kTrainedImage | kTrainedVoxel;
  }
  throw std::invalid_argument("unknown modality mode");
}

double selection_value(const EpochStats& s, SelectionMetric m) {
  switch (m) {
    case SelectionMetric::MRR: return s.val_mrr;
    case SelectionMetric::RR1: return s.val_rr1;
    case SelectionMetric::RR5: return s.val_rr5;
    case SelectionMetric::NDCG5: return s.val_ndcg5;
  }
  throw std::invalid_argument("unknown selection metric");
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be nonnegative");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  if (cfg.loss == LossKind::Triplet && cfg.batch_size < 2)
    throw std::invalid_argument("train: triplet loss needs batches of at least two");
  if (ds.vocab.size() < 2) throw std::invalid_argument("train: vocabulary holds no real tokens");

  std::vector<const DatasetRecord*> train_recs = ds.split(Split::Train);
  std::vector<const DatasetRecord*> val_recs = ds.split(Split::Val);
  if (train_recs.empty()) throw std::invalid_argument("train: training split is empty");
  if (cfg.epochs > 0 && val_recs.empty()) throw std::invalid_argument("train: validation split is empty");

  ModelDims dims;
  dims.vocab = ds.vocab.size();
  dims.word_dim = cfg.word_dim;
  dims.view_dim = ds.view_dim();
  dims.voxel_dim = ds.voxel_dim();
  dims.hidden = cfg.hidden;
  dims.embed_dim = cfg.embed_dim;

  bool use_image = cfg.mode != ModalityMode::BimodalVT;
  bool use_voxel = cfg.mode != ModalityMode::BimodalIT;
  if (use_image && dims.view_dim < 1) throw std::invalid_argument("train: dataset has no view features");
  if (use_voxel && dims.voxel_dim < 1) throw std::invalid_argument("train: dataset has no voxel features");
  if (!use_image) dims.view_dim = std::max(dims.view_dim, 1);
  if (!use_voxel) dims.voxel_dim = std::max(dims.voxel_dim, 1);

  TrainResult result;
  result.params = init_model(dims, cfg.pooling, cfg.seed);
  result.trained_mask = mask_for_mode(cfg.mode);
  result.best_epoch = 0;

  std::vector<TensorRef> param_refs = model_tensors(result.params);
  AdamState adam = AdamState::like(param_refs);
  AdamConfig adam_cfg;
  adam_cfg.lr = scaled_lr(cfg.base_lr, cfg.base_batch, cfg.batch_size);

  GradientTape tape = GradientTape::like(result.params);
  std::vector<TensorRef> grad_refs = tape_tensors(tape);

  Strategy strategy = default_strategy(cfg.mode);
  ModelParams best_params = result.params;
  double best_metric = -std::numeric_limits<double>::infinity();
  int global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng = Rng::stream(cfg.seed, "epoch." + std::to_string(epoch));
    std::vector<Batch> batches = make_batches(train_recs, cfg.batch_size, epoch_rng);
    double epoch_loss = 0.0;

    for (size_t step = 0; step < batches.size(); ++step) {
      const Batch& batch = batches[step];
      int n = static_cast<int>(batch.size());
      ++global_step;
      tape.zero();

      std::vector<TextCache> text_caches(n);
      std::vector<ViewsCache> view_caches(n);
      std::vector<MlpCache> voxel_caches(n);
      Mat T(n, dims.embed_dim);
      Mat I(use_image ? n : 0, dims.embed_dim);
      Mat V(use_voxel ? n : 0, dims.embed_dim);

      for (int e = 0; e < n; ++e) {
        const DatasetRecord& rec = *train_recs[batch[e].record];
        T.set_row(e, encode_text(result.params.text, rec.caption_ids[batch[e].caption], &text_caches[e]));
        if (use_image) I.set_row(e, encode_views(result.params.image, rec.view_features, &view_caches[e]));
        if (use_voxel) V.set_row(e, mlp_forward(result.params.voxel, rec.voxel_features, &voxel_caches[e]));
      }

      double loss_value = 0.0;
      Mat dT(n, dims.embed_dim), dI, dV;
      if (cfg.loss == LossKind::NtXent) {
        if (cfg.mode == ModalityMode::BimodalIT) {
          LossOutput out = bimodal_loss(I, T, cfg.contrastive);
          loss_value = out.value;
          dI = std::move(out.grads[0]);
          dT = std::move(out.grads[1]);
        } else if (cfg.mode == ModalityMode::BimodalVT) {
          LossOutput out = bimodal_loss(V, T, cfg.contrastive);
          loss_value = out.value;
          dV = std::move(out.grads[0]);
          dT = std::move(out.grads[1]);
        } else {
          LossOutput out = trimodal_loss(V, I, T, cfg.contrastive);
          loss_value = out.value;
          dV = std::move(out.grads[0]);
          dI = std::move(out.grads[1]);
          dT = std::move(out.grads[2]);
        }
      } else {
        // Text embeddings anchor the triplets; each shape tower supplies the
        // positives of its pairing.
        if (cfg.mode == ModalityMode::BimodalIT) {
          LossOutput out = triplet_semihard_loss(T, I, cfg.triplet);
          loss_value = out.value;
          dT = std::move(out.grads[0]);
          dI = std::move(out.grads[1]);
        } else if (cfg.mode == ModalityMode::BimodalVT) {
          LossOutput out = triplet_semihard_loss(T, V, cfg.triplet);
          loss_value = out.value;
          dT = std::move(out.grads[0]);
          dV = std::move(out.grads[1]);
        } else {
          LossOutput ti = triplet_semihard_loss(T, I, cfg.triplet);
          LossOutput tv = triplet_semihard_loss(T, V, cfg.triplet);
          loss_value = ti.value + tv.value;
          dT = std::move(ti.grads[0]);
          for (size_t i = 0; i < dT.data.size(); ++i) dT.data[i] += tv.grads[0].data[i];
          dI = std::move(ti.grads[1]);
          dV = std::move(tv.grads[1]);
        }
      }

      if (!std::isfinite(loss_value))
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step + 1) + " (global step " + std::to_string(global_step) + ")");
      epoch_loss += loss_value;

      for (int e = 0; e < n; ++e) {
        text_backward(result.params.text, text_caches[e], dT.row(e), tape.text);
        if (use_image) views_backward(result.params.image, view_caches[e], dI.row(e), tape.image_head);
        if (use_voxel) mlp_backward(result.params.voxel, voxel_caches[e], dV.row(e), tape.voxel_head);
      }
      adam_step(adam, adam_cfg, param_refs, grad_refs);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = batches.empty() ? 0.0 : epoch_loss / static_cast<double>(batches.size());
    RankingSummary val =
        evaluate_records(result.params, result.trained_mask, val_recs, strategy, {1, 5}, cfg.fuse_normalize, cfg.topk);
    stats.val_rr1 = val.rr_at.at(1);
    stats.val_rr5 = val.rr_at.at(5);
    stats.val_ndcg5 = val.ndcg_at.at(5);
    stats.val_mrr = val.mrr;
    result.history.push_back(stats);

    if (selection_value(stats, cfg.selection) > best_metric) {
      best_metric = selection_value(stats, cfg.selection);
      best_params = result.params;
      result.best_epoch = epoch;
    }
  }

  result.params = std::move(best_params);
  return result;
}

}  // namespace tmr
