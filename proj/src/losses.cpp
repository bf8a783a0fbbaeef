#include "tmr/losses.hpp"

#include <algorithm>
#include <cmath>

namespace tmr {

namespace {

struct NormalizedRows {
  Mat hat;    // rows scaled to unit norm
  Vec norms;  // original row norms
};

NormalizedRows normalize_rows(const Mat& M, const char* what) {
  NormalizedRows out;
  out.hat = Mat(M.rows, M.cols);
  out.norms.resize(M.rows);
  for (int j = 0; j < M.rows; ++j) {
    double n = norm(M.row(j));
    if (n == 0.0)
      throw std::invalid_argument(std::string(what) + ": zero-norm embedding at row " + std::to_string(j));
    out.norms[j] = n;
    for (int c = 0; c < M.cols; ++c) out.hat(j, c) = M(j, c) / n;
  }
  return out;
}

void check_pair(const Mat& U, const Mat& V, const char* what) {
  if (U.rows < 1 || U.cols < 1) throw std::invalid_argument(std::string(what) + ": empty embedding matrix");
  if (U.rows != V.rows || U.cols != V.cols)
    throw std::invalid_argument(std::string(what) + ": embedding matrices must have matching shapes");
}

// Cosine matrix S[j][k] = hatU_j . hatV_k.
Mat similarity(const NormalizedRows& u, const NormalizedRows& v) {
  Mat S(u.hat.rows, v.hat.rows);
  for (int j = 0; j < u.hat.rows; ++j)
    for (int k = 0; k < v.hat.rows; ++k) S(j, k) = dot(u.hat.row(j), v.hat.row(k));
  return S;
}

// Maps a gradient wrt the unit-normalized rows back to the raw rows:
// d/du = (dhat - (dhat . hat) hat) / |u|.
void denormalize_grad(const NormalizedRows& n, const Mat& d_hat, Mat& d_raw) {
  for (int j = 0; j < d_hat.rows; ++j) {
    double proj = dot(d_hat.row(j), n.hat.row(j));
    for (int c = 0; c < d_hat.cols; ++c) d_raw(j, c) += (d_hat(j, c) - proj * n.hat(j, c)) / n.norms[j];
  }
}

std::vector<double> directional_from_similarity(const Mat& S, double tau) {
  int n = S.rows;
  std::vector<double> l(n);
  for (int j = 0; j < n; ++j) {
    double m = S(j, 0) / tau;
    for (int k = 1; k < n; ++k) m = std::max(m, S(j, k) / tau);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += std::exp(S(j, k) / tau - m);
    l[j] = m + std::log(sum) - S(j, j) / tau;
  }
  return l;
}

}  // namespace

std::vector<double> ntxent_directional(const Mat& U, const Mat& V, double tau) {
  check_pair(U, V, "ntxent_directional");
  if (tau <= 0.0) throw std::invalid_argument("ntxent_directional: tau must be positive");
  NormalizedRows u = normalize_rows(U, "ntxent_directional(U)");
  NormalizedRows v = normalize_rows(V, "ntxent_directional(V)");
  return directional_from_similarity(similarity(u, v), tau);
}

LossOutput ntxent_loss(const Mat& U, const Mat& V, double tau) {
  check_pair(U, V, "ntxent_loss");
  if (tau <= 0.0) throw std::invalid_argument("ntxent_loss: tau must be positive");
  int n = U.rows;
  NormalizedRows u = normalize_rows(U, "ntxent_loss(U)");
  NormalizedRows v = normalize_rows(V, "ntxent_loss(V)");
  Mat S = similarity(u, v);

  std::vector<double> l = directional_from_similarity(S, tau);
  LossOutput out;
  for (double lj : l) out.value += lj;
  out.value /= n;

  // dL/dS = (P - I) / (n * tau) with P the row softmax of S / tau.
  Mat dS(n, n);
  for (int j = 0; j < n; ++j) {
    double m = S(j, 0) / tau;
    for (int k = 1; k < n; ++k) m = std::max(m, S(j, k) / tau);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += std::exp(S(j, k) / tau - m);
    for (int k = 0; k < n; ++k) {
      double p = std::exp(S(j, k) / tau - m) / sum;
      dS(j, k) = (p - (j == k ? 1.0 : 0.0)) / (n * tau);
    }
  }

  Mat d_hat_u(n, U.cols);
  Mat d_hat_v(n, U.cols);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      double g = dS(j, k);
      if (g == 0.0) continue;
      for (int c = 0; c < U.cols; ++c) {
        d_hat_u(j, c) += g * v.hat(k, c);
        d_hat_v(k, c) += g * u.hat(j, c);
      }
    }

  out.grads.assign(2, Mat(n, U.cols));
  denormalize_grad(u, d_hat_u, out.grads[0]);
  denormalize_grad(v, d_hat_v, out.grads[1]);
  return out;
}

LossOutput bimodal_loss(const Mat& U, const Mat& V, const ContrastiveConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw std::invalid_argument("bimodal_loss: alpha must lie in [0,1]");
  LossOutput fwd = ntxent_loss(U, V, cfg.tau);
  LossOutput bwd = ntxent_loss(V, U, cfg.tau);

  LossOutput out;
  out.value = cfg.alpha * fwd.value + (1.0 - cfg.alpha) * bwd.value;
  out.grads.assign(2, Mat(U.rows, U.cols));
  for (size_t i = 0; i < out.grads[0].data.size(); ++i) {
    out.grads[0].data[i] = cfg.alpha * fwd.grads[0].data[i] + (1.0 - cfg.alpha) * bwd.grads[1].data[i];
    out.grads[1].data[i] = cfg.alpha * fwd.grads[1].data[i] + (1.0 - cfg.alpha) * bwd.grads[0].data[i];
  }
  return out;
}

LossOutput trimodal_loss(const Mat& V, const Mat& I, const Mat& T, const ContrastiveConfig& cfg) {
  check_pair(V, I, "trimodal_loss");
  check_pair(V, T, "trimodal_loss");
  LossOutput vi = bimodal_loss(V, I, cfg);
  LossOutput vt = bimodal_loss(V, T, cfg);
  LossOutput it = bimodal_loss(I, T, cfg);

  LossOutput out;
  out.value = vi.value + vt.value + it.value;
  out.grads.assign(3, Mat(V.rows, V.cols));
  for (size_t i = 0; i < out.grads[0].data.size(); ++i) {
    out.grads[0].data[i] = vi.grads[0].data[i] + vt.grads[0].data[i];
    out.grads[1].data[i] = vi.grads[1].data[i] + it.grads[0].data[i];
    out.grads[2].data[i] = vt.grads[1].data[i] + it.grads[1].data[i];
  }
  return out;
}

std::vector<int> mine_semihard(std::span<const double> anchor, std::span<const double> positive,
                               const std::vector<Vec>& candidates, double margin) {
  if (margin <= 0.0) throw std::invalid_argument("mine_semihard: margin must be positive");
  double d_pos = 1.0 - cosine_similarity(anchor, positive);
  std::vector<int> mined;
  for (size_t k = 0; k < candidates.size(); ++k) {
    double d_k = 1.0 - cosine_similarity(anchor, candidates[k]);
    if (d_pos < d_k && d_k < d_pos + margin) mined.push_back(static_cast<int>(k));
  }
  return mined;
}

TripletMinedSets mine_batch_semihard(const Mat& anchors, const Mat& positives, double margin) {
  check_pair(anchors, positives, "triplet");
  if (anchors.rows < 2) throw std::invalid_argument("triplet: need at least two anchors for in-batch negatives");
  if (margin <= 0.0) throw std::invalid_argument("triplet: margin must be positive");

  NormalizedRows a = normalize_rows(anchors, "triplet(anchors)");
  NormalizedRows p = normalize_rows(positives, "triplet(positives)");
  TripletMinedSets sets;
  sets.negatives.resize(anchors.rows);
  for (int j = 0; j < anchors.rows; ++j) {
    double d_pos = 1.0 - dot(a.hat.row(j), p.hat.row(j));
    for (int k = 0; k < anchors.rows; ++k) {
      if (k == j) continue;
      double d_k = 1.0 - dot(a.hat.row(j), p.hat.row(k));
      if (d_pos < d_k && d_k < d_pos + margin) sets.negatives[j].push_back(k);
    }
  }
  return sets;
}

LossOutput triplet_loss_frozen(const Mat& anchors, const Mat& positives, const TripletMinedSets& sets,
                               double margin) {
  check_pair(anchors, positives, "triplet");
  if (static_cast<int>(sets.negatives.size()) != anchors.rows)
    throw std::invalid_argument("triplet: mined sets do not match the batch");

  NormalizedRows a = normalize_rows(anchors, "triplet(anchors)");
  NormalizedRows p = normalize_rows(positives, "triplet(positives)");
  int n = anchors.rows;
  int d = anchors.cols;

  int anchors_with_negatives = 0;
  for (const auto& s : sets.negatives)
    if (!s.empty()) ++anchors_with_negatives;

  LossOutput out;
  out.grads.assign(2, Mat(n, d));
  if (anchors_with_negatives == 0) return out;  // loss 0, zero gradients
  double scale = 1.0 / anchors_with_negatives;

  Mat d_hat_a(n, d);
  Mat d_hat_p(n, d);
  // d(1 - cos)/dcos = -1, so a hinge term d_pos - d_k + margin contributes
  // -1 on cos(a_j, p_j) and +1 on cos(a_j, p_k).
  for (int j = 0; j < n; ++j) {
    double c_pos = dot(a.hat.row(j), p.hat.row(j));
    double d_pos = 1.0 - c_pos;
    for (int k : sets.negatives[j]) {
      if (k < 0 || k >= n || k == j) throw std::invalid_argument("triplet: mined index out of range");
      double c_k = dot(a.hat.row(j), p.hat.row(k));
      double term = d_pos - (1.0 - c_k) + margin;
      if (term <= 0.0) continue;  // hinge inactive
      out.value += scale * term;
      for (int c = 0; c < d; ++c) {
        d_hat_a(j, c) += scale * (p.hat(k, c) - p.hat(j, c));
        d_hat_p(j, c) += -scale * a.hat(j, c);
        d_hat_p(k, c) += scale * a.hat(j, c);
      }
    }
  }
  denormalize_grad(a, d_hat_a, out.grads[0]);
  denormalize_grad(p, d_hat_p, out.grads[1]);
  return out;
}

LossOutput triplet_semihard_loss(const Mat& anchors, const Mat& positives, const TripletConfig& cfg) {
  TripletMinedSets sets = mine_batch_semihard(anchors, positives, cfg.margin);
  return triplet_loss_frozen(anchors, positives, sets, cfg.margin);
}

}  // namespace tmr
