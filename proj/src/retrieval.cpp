#include "tmr/retrieval.hpp"

#include <algorithm>
#include <numeric>

namespace tmr {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Image: return "I";
    case Strategy::Voxel: return "V";
    case Strategy::ImagePlusVoxel: return "I+V";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "I") return Strategy::Image;
  if (s == "V") return Strategy::Voxel;
  if (s == "I+V") return Strategy::ImagePlusVoxel;
  throw std::invalid_argument("unknown retrieval strategy '" + s + "' (expected I, V or I+V)");
}

Vec fuse_embeddings(std::span<const double> image, std::span<const double> voxel, bool normalize_before_sum) {
  if (image.size() != voxel.size()) throw std::invalid_argument("fuse_embeddings: dimension mismatch");
  Vec img(image.begin(), image.end());
  Vec vox(voxel.begin(), voxel.end());
  if (normalize_before_sum) {
    img = l2_normalize(img);
    vox = l2_normalize(vox);
  }
  for (size_t i = 0; i < img.size(); ++i) img[i] += vox[i];
  return img;
}

const Mat& ShapeIndex::matrix(Strategy s) const {
  switch (s) {
    case Strategy::Image:
      if (!has_image) throw std::runtime_error("strategy I needs an image tower, but none was trained");
      return image;
    case Strategy::Voxel:
      if (!has_voxel) throw std::runtime_error("strategy V needs a voxel tower, but none was trained");
      return voxel;
    case Strategy::ImagePlusVoxel:
      if (!has_fused) throw std::runtime_error("strategy I+V needs both shape towers, but they were not trained");
      return fused;
  }
  throw std::invalid_argument("unknown strategy");
}

ShapeIndex build_index(const std::vector<const DatasetRecord*>& records, const ModelParams& params,
                       uint32_t trained_mask, bool fuse_normalize) {
  ShapeIndex index;
  int n = static_cast<int>(records.size());
  int d = params.text.head.out_dim();
  index.has_image = (trained_mask & kTrainedImage) != 0;
  index.has_voxel = (trained_mask & kTrainedVoxel) != 0;
  index.has_fused = index.has_image && index.has_voxel;
  if (index.has_image) index.image = Mat(n, d);
  if (index.has_voxel) index.voxel = Mat(n, d);
  if (index.has_fused) index.fused = Mat(n, d);

  for (int r = 0; r < n; ++r) {
    const DatasetRecord& rec = *records[r];
    index.ids.push_back(rec.object_id);
    if (index.has_image) {
      if (rec.view_features.empty())
        throw std::runtime_error("object '" + rec.object_id + "' has no view features");
      index.image.set_row(r, encode_views(params.image, rec.view_features));
    }
    if (index.has_voxel) {
      if (rec.voxel_features.empty())
        throw std::runtime_error("object '" + rec.object_id + "' has no voxel features");
      index.voxel.set_row(r, mlp_forward(params.voxel, rec.voxel_features));
    }
    if (index.has_fused)
      index.fused.set_row(r, fuse_embeddings(index.image.row(r), index.voxel.row(r), fuse_normalize));
  }
  return index;
}

RankedResult query(const ShapeIndex& index, std::span<const double> text_embedding, Strategy strategy, int k,
                   const std::string& gt_id) {
  if (index.size() == 0) throw std::invalid_argument("query: index is empty");
  if (k < 1) throw std::invalid_argument("query: k must be positive");
  const Mat& M = index.matrix(strategy);

  int n = index.size();
  std::vector<double> scores(n);
  for (int r = 0; r < n; ++r) {
    if (norm(M.row(r)) == 0.0)
      throw std::runtime_error("zero-norm candidate embedding for object '" + index.ids[r] + "'");
    scores[r] = cosine_similarity(text_embedding, M.row(r));
  }

  auto better = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.ids[a] < index.ids[b];
  };

  int kk = std::min(k, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + kk, order.end(), better);

  RankedResult res;
  for (int i = 0; i < kk; ++i) res.topk.push_back({index.ids[order[i]], scores[order[i]]});

  if (!gt_id.empty()) {
    auto it = std::find(index.ids.begin(), index.ids.end(), gt_id);
    if (it == index.ids.end())
      throw std::invalid_argument("query: ground-truth object '" + gt_id + "' not in the index");
    int gt = static_cast<int>(it - index.ids.begin());
    int rank = 1;
    for (int r = 0; r < n; ++r)
      if (r != gt && better(r, gt)) ++rank;
    res.gt_rank = rank;
  }
  return res;
}

std::vector<RetrievalQuery> caption_queries(const std::vector<const DatasetRecord*>& records) {
  std::vector<RetrievalQuery> out;
  for (const DatasetRecord* rec : records)
    for (size_t c = 0; c < rec->caption_ids.size(); ++c)
      out.push_back({rec->object_id + "#" + std::to_string(c), rec->caption_ids[c], rec->object_id});
  return out;
}

std::vector<RankedResult> evaluate_split(const ShapeIndex& index, const ModelParams& params,
                                         const std::vector<RetrievalQuery>& queries, Strategy strategy, int k) {
  std::vector<RankedResult> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    Vec emb = encode_text(params.text, q.token_ids);
    RankedResult res = query(index, emb, strategy, k, q.gt_id);
    res.query_id = q.query_id;
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace tmr
