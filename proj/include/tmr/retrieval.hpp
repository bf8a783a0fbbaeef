#pragma once

#include <string>
#include <vector>

#include "tmr/core.hpp"
#include "tmr/datagen.hpp"
#include "tmr/encoders.hpp"

namespace tmr {

/// Candidate embedding used when scoring a text query: image tower, voxel
/// tower, or their fused sum.
enum class Strategy { Image, Voxel, ImagePlusVoxel };

const char* strategy_name(Strategy s);                 // "I", "V", "I+V"
Strategy parse_strategy(const std::string& s);

/// Elementwise sum; optionally l2-normalizes both inputs first.
Vec fuse_embeddings(std::span<const double> image, std::span<const double> voxel, bool normalize_before_sum);

/// Per-object candidate embeddings for one split.
struct ShapeIndex {
  std::vector<std::string> ids;  // ascending-id tie-break relies on these
  Mat image;
  Mat voxel;
  Mat fused;
  bool has_image = false;
  bool has_voxel = false;
  bool has_fused = false;

  int size() const { return static_cast<int>(ids.size()); }
  const Mat& matrix(Strategy s) const;
};

/// Encodes every record's views and voxel features with the towers the
/// trained mask covers, and fuses when both shape towers are present.
ShapeIndex build_index(const std::vector<const DatasetRecord*>& records, const ModelParams& params,
                       uint32_t trained_mask, bool fuse_normalize);

struct ScoredId {
  std::string id;
  double score;
};

/// One query's outcome: the top-k candidates (score descending, id ascending
/// on ties) and the 1-based rank of the ground-truth object over the full
/// candidate set (0 when no ground truth was given).
struct RankedResult {
  std::string query_id;
  std::vector<ScoredId> topk;
  int gt_rank = 0;
};

RankedResult query(const ShapeIndex& index, std::span<const double> text_embedding, Strategy strategy, int k,
                   const std::string& gt_id = "");

struct RetrievalQuery {
  std::string query_id;
  std::vector<int> token_ids;
  std::string gt_id;
};

/// One query per caption of each record: query ids are "<object>#<n>".
std::vector<RetrievalQuery> caption_queries(const std::vector<const DatasetRecord*>& records);

/// Encodes each query caption and ranks it against the index.
std::vector<RankedResult> evaluate_split(const ShapeIndex& index, const ModelParams& params,
                                         const std::vector<RetrievalQuery>& queries, Strategy strategy, int k);

}  // namespace tmr
