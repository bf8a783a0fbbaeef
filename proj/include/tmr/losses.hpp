#pragma once

#include <vector>

#include "tmr/core.hpp"

namespace tmr {

struct ContrastiveConfig {
  double tau = 0.1;    // softmax temperature
  double alpha = 0.5;  // weight of the forward direction
};

struct TripletConfig {
  double margin = 0.025;  // semi-hard band width, cosine-distance units
};

/// Loss value plus one gradient matrix per input embedding matrix, in the
/// argument order of the producing function.
struct LossOutput {
  double value = 0.0;
  std::vector<Mat> grads;
};

/// Per-example contrastive loss for the direction U -> V:
///   l_j = -log( exp(cos(u_j, v_j)/tau) / sum_k exp(cos(u_j, v_k)/tau) )
/// computed with a max-shifted log-sum-exp. Rows of U and V are paired by
/// index; zero-norm rows are errors.
std::vector<double> ntxent_directional(const Mat& U, const Mat& V, double tau);

/// Mean of ntxent_directional over the batch, with gradients {dU, dV}.
LossOutput ntxent_loss(const Mat& U, const Mat& V, double tau);

/// Weighted two-direction contrastive loss
///   L(U, V) = mean_j( alpha * l_j(U->V) + (1-alpha) * l_j(V->U) ).
LossOutput bimodal_loss(const Mat& U, const Mat& V, const ContrastiveConfig& cfg);

/// L(v,i) + L(v,t) + L(i,t); every modality receives gradient from its two
/// pairings. Gradients ordered {dV, dI, dT}.
LossOutput trimodal_loss(const Mat& V, const Mat& I, const Mat& T, const ContrastiveConfig& cfg);

/// Indices k of candidates in the semi-hard band of the anchor, using the
/// cosine distance d = 1 - cos:  d(a,p) < d(a,c_k) < d(a,p) + margin.
std::vector<int> mine_semihard(std::span<const double> anchor, std::span<const double> positive,
                               const std::vector<Vec>& candidates, double margin);

/// Per-anchor mined negatives: candidate j's negatives are the positives of
/// the other rows, indexed into `positives`.
struct TripletMinedSets {
  std::vector<std::vector<int>> negatives;
};

TripletMinedSets mine_batch_semihard(const Mat& anchors, const Mat& positives, double margin);

/// Hinge loss over the given mined sets, treated as constants:
///   l_j = sum_k max(d(a_j,p_j) - d(a_j,p_k) + margin, 0),
/// averaged over anchors with at least one mined negative (zero if none).
/// Gradients ordered {dAnchors, dPositives}.
LossOutput triplet_loss_frozen(const Mat& anchors, const Mat& positives, const TripletMinedSets& sets,
                               double margin);

/// mine_batch_semihard followed by triplet_loss_frozen: the mined sets do
/// not move during backprop.
LossOutput triplet_semihard_loss(const Mat& anchors, const Mat& positives, const TripletConfig& cfg);

}  // namespace tmr
