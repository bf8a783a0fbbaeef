#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "tmr/encoders.hpp"

using namespace tmr;
using testutil::fd_max_rel;
using testutil::random_mat;
using testutil::TempDir;

namespace {

MlpHead random_head(int in, int hidden, int out, Rng& rng) {
  MlpHead h;
  h.W1 = random_mat(hidden, in, rng, 0.5);
  h.b1 = Vec(hidden);
  h.W2 = random_mat(out, hidden, rng, 0.5);
  h.b2 = Vec(out);
  for (double& b : h.b1) b = 0.1 * rng.next_gaussian();
  for (double& b : h.b2) b = 0.1 * rng.next_gaussian();
  return h;
}

ModelDims tiny_dims() {
  ModelDims d;
  d.vocab = 9;
  d.word_dim = 5;
  d.view_dim = 6;
  d.voxel_dim = 7;
  d.hidden = 8;
  d.embed_dim = 4;
  return d;
}

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("mlp forward on hand weights") {
  MlpHead h;
  h.W1 = Mat(2, 2);
  h.W1.set_row(0, Vec{1.0, 0.0});
  h.W1.set_row(1, Vec{0.0, -1.0});
  h.b1 = {0.0, 0.5};
  h.W2 = Mat(1, 2);
  h.W2.set_row(0, Vec{1.0, 2.0});
  h.b2 = {0.25};
  // x = (2, 1): pre1 = (2, -0.5), relu -> (2, 0), y = 2 + 0 + 0.25
  Vec y = mlp_forward(h, Vec{2.0, 1.0});
  REQUIRE(y.size() == 1);
  CHECK(y[0] == doctest::Approx(2.25));
  CHECK_THROWS_AS(mlp_forward(h, Vec{1.0}), std::invalid_argument);
}

TEST_CASE("relu subgradient at exactly zero is zero") {
  MlpHead h;
  h.W1 = Mat(1, 1);
  h.W1(0, 0) = 1.0;
  h.b1 = {-3.0};  // x = 3 lands pre-activation exactly on 0
  h.W2 = Mat(1, 1);
  h.W2(0, 0) = 5.0;
  h.b2 = {0.0};
  MlpCache cache;
  Vec y = mlp_forward(h, Vec{3.0}, &cache);
  CHECK(y[0] == 0.0);
  MlpGrads g = MlpGrads::like(h);
  g.zero();
  Vec dx = mlp_backward(h, cache, Vec{1.0}, g);
  CHECK(dx[0] == 0.0);
  CHECK(g.W1(0, 0) == 0.0);
  CHECK(g.b1[0] == 0.0);
  CHECK(g.W2(0, 0) == 0.0);  // act1 is 0
  CHECK(g.b2[0] == 1.0);
}

TEST_CASE("mlp backward matches finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    MlpHead h = random_head(4, 6, 3, rng);
    Vec x(4), w(3);
    for (double& v : x) v = rng.next_gaussian();
    for (double& v : w) v = rng.next_gaussian();

    auto scalar = [&]() {
      Vec y = mlp_forward(h, x);
      return dot(y, w);
    };
    MlpCache cache;
    mlp_forward(h, x, &cache);
    MlpGrads g = MlpGrads::like(h);
    g.zero();
    Vec dx = mlp_backward(h, cache, w, g);

    CHECK(fd_max_rel(x.data(), x.size(), dx.data(), scalar) < 1e-6);
    CHECK(fd_max_rel(h.W1.data.data(), h.W1.data.size(), g.W1.data.data(), scalar) < 1e-6);
    CHECK(fd_max_rel(h.b1.data(), h.b1.size(), g.b1.data(), scalar) < 1e-6);
    CHECK(fd_max_rel(h.W2.data.data(), h.W2.data.size(), g.W2.data.data(), scalar) < 1e-6);
    CHECK(fd_max_rel(h.b2.data(), h.b2.size(), g.b2.data(), scalar) < 1e-6);
  }
}

TEST_CASE("mlp backward rejects a missing cache") {
  Rng rng(3);
  MlpHead h = random_head(2, 3, 2, rng);
  MlpCache cache;
  MlpGrads g = MlpGrads::like(h);
  g.zero();
  CHECK_THROWS_AS(mlp_backward(h, cache, Vec{1.0, 0.0}, g), std::invalid_argument);
}

TEST_CASE("text encoding averages non-pad embeddings") {
  Rng rng(8);
  TextEncoder enc;
  enc.word_emb = random_mat(5, 3, rng);
  enc.head = random_head(3, 4, 2, rng);

  Vec direct = mlp_forward(enc.head, Vec{(enc.word_emb(1, 0) + enc.word_emb(2, 0)) / 2,
                                         (enc.word_emb(1, 1) + enc.word_emb(2, 1)) / 2,
                                         (enc.word_emb(1, 2) + enc.word_emb(2, 2)) / 2});
  Vec via_encoder = encode_text(enc, {1, 2});
  CHECK(via_encoder[0] == doctest::Approx(direct[0]).epsilon(1e-12));
  CHECK(via_encoder[1] == doctest::Approx(direct[1]).epsilon(1e-12));
}

TEST_CASE("padding never changes a text embedding") {
  Rng rng(9);
  TextEncoder enc;
  enc.word_emb = random_mat(6, 4, rng);
  enc.head = random_head(4, 5, 3, rng);
  Vec a = encode_text(enc, {2, 4, 1});
  Vec b = encode_text(enc, {2, 4, 1, 0, 0, 0, 0});
  CHECK(a == b);
}

TEST_CASE("duplicate tokens count twice in the mean") {
  Rng rng(10);
  TextEncoder enc;
  enc.word_emb = random_mat(4, 2, rng);
  enc.head = random_head(2, 3, 2, rng);
  Vec dup = encode_text(enc, {3, 3, 1});
  Vec direct = mlp_forward(enc.head, Vec{(2 * enc.word_emb(3, 0) + enc.word_emb(1, 0)) / 3,
                                         (2 * enc.word_emb(3, 1) + enc.word_emb(1, 1)) / 3});
  CHECK(dup[0] == doctest::Approx(direct[0]).epsilon(1e-12));
}

TEST_CASE("text encoding input validation") {
  Rng rng(11);
  TextEncoder enc;
  enc.word_emb = random_mat(4, 2, rng);
  enc.head = random_head(2, 3, 2, rng);
  CHECK_THROWS_AS(encode_text(enc, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(encode_text(enc, {}), std::invalid_argument);
  CHECK_THROWS_AS(encode_text(enc, {4}), std::invalid_argument);
  CHECK_THROWS_AS(encode_text(enc, {-1}), std::invalid_argument);
}

TEST_CASE("text backward matches finite differences, duplicates included") {
  Rng rng(12);
  TextEncoder enc;
  enc.word_emb = random_mat(6, 4, rng);
  enc.head = random_head(4, 5, 3, rng);
  std::vector<int> ids = {2, 5, 2, 0};  // duplicate token, one pad
  Vec w(3);
  for (double& v : w) v = rng.next_gaussian();

  auto scalar = [&]() { return dot(encode_text(enc, ids), w); };
  TextCache cache;
  encode_text(enc, ids, &cache);
  TextGrads g = TextGrads::like(enc);
  g.zero();
  text_backward(enc, cache, w, g);

  CHECK(fd_max_rel(enc.word_emb.data.data(), enc.word_emb.data.size(), g.word_emb.data.data(), scalar) <
        1e-6);
  CHECK(fd_max_rel(enc.head.W1.data.data(), enc.head.W1.data.size(), g.head.W1.data.data(), scalar) < 1e-6);
  CHECK(fd_max_rel(enc.head.b2.data(), enc.head.b2.size(), g.head.b2.data(), scalar) < 1e-6);
  // pad row receives no gradient
  for (int j = 0; j < g.word_emb.cols; ++j) CHECK(g.word_emb(0, j) == 0.0);
}

TEST_CASE("mean pooling averages the per-view outputs") {
  Rng rng(13);
  ViewEncoder enc{random_head(3, 4, 2, rng), PoolMode::Mean};
  std::vector<Vec> views = testutil::random_vecs(3, 3, rng);
  Vec pooled = encode_views(enc, views);
  Vec manual(2, 0.0);
  for (const auto& v : views) {
    Vec y = mlp_forward(enc.head, v);
    for (size_t i = 0; i < manual.size(); ++i) manual[i] += y[i] / 3.0;
  }
  CHECK(pooled[0] == doctest::Approx(manual[0]).epsilon(1e-12));
  CHECK(pooled[1] == doctest::Approx(manual[1]).epsilon(1e-12));
}

TEST_CASE("max pooling takes the elementwise max and ties go low") {
  Rng rng(14);
  ViewEncoder enc{random_head(3, 4, 2, rng), PoolMode::Max};
  std::vector<Vec> views = testutil::random_vecs(4, 3, rng);
  ViewsCache cache;
  Vec pooled = encode_views(enc, views, &cache);
  for (size_t c = 0; c < pooled.size(); ++c) {
    double best = -1e300;
    for (const auto& v : views) best = std::max(best, mlp_forward(enc.head, v)[c]);
    CHECK(pooled[c] == doctest::Approx(best).epsilon(1e-12));
  }

  // identical views: every argmax must resolve to view 0
  std::vector<Vec> same = {views[0], views[0], views[0]};
  ViewsCache tie_cache;
  encode_views(enc, same, &tie_cache);
  for (int a : tie_cache.argmax) CHECK(a == 0);

  MlpGrads g = MlpGrads::like(enc.head);
  g.zero();
  views_backward(enc, tie_cache, Vec{1.0, 1.0}, g);
  // gradient equals a single-view backward through view 0
  MlpCache single;
  mlp_forward(enc.head, same[0], &single);
  MlpGrads ref = MlpGrads::like(enc.head);
  ref.zero();
  mlp_backward(enc.head, single, Vec{1.0, 1.0}, ref);
  for (size_t i = 0; i < g.W1.data.size(); ++i) CHECK(g.W1.data[i] == doctest::Approx(ref.W1.data[i]));
  for (size_t i = 0; i < g.b2.size(); ++i) CHECK(g.b2[i] == doctest::Approx(ref.b2[i]));
}

TEST_CASE("view pooling backward matches finite differences") {
  Rng rng(15);
  for (PoolMode mode : {PoolMode::Mean, PoolMode::Max}) {
    ViewEncoder enc{random_head(4, 5, 3, rng), mode};
    std::vector<Vec> views = testutil::random_vecs(3, 4, rng);
    Vec w(3);
    for (double& v : w) v = rng.next_gaussian();

    auto scalar = [&]() { return dot(encode_views(enc, views), w); };
    ViewsCache cache;
    encode_views(enc, views, &cache);
    MlpGrads g = MlpGrads::like(enc.head);
    g.zero();
    views_backward(enc, cache, w, g);

    CHECK(fd_max_rel(enc.head.W1.data.data(), enc.head.W1.data.size(), g.W1.data.data(), scalar) < 1e-6);
    CHECK(fd_max_rel(enc.head.b1.data(), enc.head.b1.size(), g.b1.data(), scalar) < 1e-6);
    CHECK(fd_max_rel(enc.head.W2.data.data(), enc.head.W2.data.size(), g.W2.data.data(), scalar) < 1e-6);
    CHECK(fd_max_rel(enc.head.b2.data(), enc.head.b2.size(), g.b2.data(), scalar) < 1e-6);
  }
}

TEST_CASE("encode_views rejects an empty view list") {
  Rng rng(16);
  ViewEncoder enc{random_head(3, 4, 2, rng), PoolMode::Mean};
  CHECK_THROWS_AS(encode_views(enc, {}), std::invalid_argument);
}

TEST_CASE("model init is deterministic, bounded and seed-sensitive") {
  ModelDims d = tiny_dims();
  ModelParams a = init_model(d, PoolMode::Mean, 5);
  ModelParams b = init_model(d, PoolMode::Mean, 5);
  ModelParams c = init_model(d, PoolMode::Mean, 6);
  CHECK(a.text.word_emb.data == b.text.word_emb.data);
  CHECK(a.image.head.W1.data == b.image.head.W1.data);
  CHECK(a.text.word_emb.data != c.text.word_emb.data);

  for (double v : a.text.head.b1) CHECK(v == 0.0);
  for (double v : a.voxel.b2) CHECK(v == 0.0);
  double bound1 = 1.0 / std::sqrt(static_cast<double>(d.word_dim));
  for (double v : a.text.head.W1.data) CHECK(std::fabs(v) <= bound1);
  double bound2 = 1.0 / std::sqrt(static_cast<double>(d.hidden));
  for (double v : a.text.head.W2.data) CHECK(std::fabs(v) <= bound2);
  CHECK(a.dims().vocab == d.vocab);
  CHECK(a.dims().embed_dim == d.embed_dim);
}

TEST_CASE("tensor listing covers all thirteen parameter blocks") {
  ModelDims d = tiny_dims();
  ModelParams p = init_model(d, PoolMode::Mean, 1);
  auto tensors = model_tensors(p);
  REQUIRE(tensors.size() == 13);
  CHECK(tensors[0].name == "text.emb");
  CHECK(tensors[0].shape == std::vector<int>{9, 5});
  CHECK(tensors[1].name == "text.head.W1");
  CHECK(tensors[5].name == "image.head.W1");
  CHECK(tensors[9].name == "voxel.head.W1");
  size_t total = 0;
  for (const auto& t : tensors) total += t.size;
  size_t expected = 9 * 5 + (8 * 5 + 8 + 4 * 8 + 4) + (8 * 6 + 8 + 4 * 8 + 4) + (8 * 7 + 8 + 4 * 8 + 4);
  CHECK(total == expected);

  GradientTape tape = GradientTape::like(p);
  auto grads = tape_tensors(tape);
  REQUIRE(grads.size() == 13);
  for (size_t i = 0; i < grads.size(); ++i) {
    CHECK(grads[i].name == tensors[i].name);
    CHECK(grads[i].shape == tensors[i].shape);
  }
}

TEST_CASE("gradient tape zeroing") {
  ModelParams p = init_model(tiny_dims(), PoolMode::Mean, 2);
  GradientTape tape = GradientTape::like(p);
  tape.text.word_emb(1, 1) = 3.0;
  tape.voxel_head.b2[0] = 2.0;
  tape.zero();
  CHECK(tape.text.word_emb(1, 1) == 0.0);
  CHECK(tape.voxel_head.b2[0] == 0.0);
}

TEST_CASE("checkpoint round trip is bitwise exact") {
  TempDir dir("ckpt");
  ModelParams p = init_model(tiny_dims(), PoolMode::Max, 77);
  std::string path = dir.file("model.tckp");
  write_checkpoint(path, p, kTrainedText | kTrainedVoxel);
  Checkpoint back = read_checkpoint(path);
  CHECK(back.trained_mask == (kTrainedText | kTrainedVoxel));
  CHECK(back.params.image.pooling == PoolMode::Max);
  CHECK(back.params.text.word_emb.data == p.text.word_emb.data);
  CHECK(back.params.text.head.W1.data == p.text.head.W1.data);
  CHECK(back.params.image.head.W2.data == p.image.head.W2.data);
  CHECK(back.params.voxel.b1 == p.voxel.b1);
  CHECK(back.params.voxel.b2 == p.voxel.b2);
}

TEST_CASE("checkpoint reader rejects corruption") {
  TempDir dir("ckptbad");
  ModelParams p = init_model(tiny_dims(), PoolMode::Mean, 1);
  std::string path = dir.file("model.tckp");
  write_checkpoint(path, p, kTrainedText);

  std::string bytes = testutil::slurp(path);
  std::string magic_bad = bytes;
  magic_bad[0] = 'Z';
  testutil::spit(path, magic_bad);
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);

  testutil::spit(path, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);

  CHECK_THROWS_AS(read_checkpoint(dir.file("missing.tckp")), std::runtime_error);
}

}  // TEST_SUITE
