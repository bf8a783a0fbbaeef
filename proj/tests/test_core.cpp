#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "tmr/core.hpp"

using namespace tmr;

TEST_SUITE("core") {

TEST_CASE("dot and norm") {
  Vec a = {1.0, 2.0, 3.0};
  Vec b = {4.0, -5.0, 6.0};
  CHECK(dot(a, b) == doctest::Approx(12.0));
  CHECK(norm(a) == doctest::Approx(std::sqrt(14.0)));
  CHECK(norm(Vec{}) == 0.0);
}

TEST_CASE("l2_normalize of (3,4) is (0.6, 0.8)") {
  Vec v = {3.0, 4.0};
  Vec u = l2_normalize(v);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(norm(u) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("l2_normalize rejects the zero vector") {
  Vec z = {0.0, 0.0};
  CHECK_THROWS_AS(l2_normalize(z), std::invalid_argument);
}

TEST_CASE("cosine similarity basics") {
  Vec a = {1.0, 0.0};
  Vec b = {0.0, 1.0};
  Vec c = {1.0, 1.0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, c) == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("cosine similarity is symmetric and scale invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Vec a(5), b(5);
    for (double& x : a) x = rng.next_gaussian();
    for (double& x : b) x = rng.next_gaussian();
    double c = cosine_similarity(a, b);
    CHECK(cosine_similarity(b, a) == doctest::Approx(c).epsilon(1e-12));
    Vec a2 = a, b3 = b;
    for (double& x : a2) x *= 2.0;
    for (double& x : b3) x *= 3.0;
    CHECK(cosine_similarity(a2, b3) == doctest::Approx(c).epsilon(1e-12));
    CHECK(c >= -1.0 - 1e-12);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("cosine similarity rejects zero vectors and length mismatches") {
  Vec a = {1.0, 2.0};
  Vec z = {0.0, 0.0};
  Vec c = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(cosine_similarity(a, z), std::invalid_argument);
  CHECK_THROWS_AS(cosine_similarity(z, a), std::invalid_argument);
  CHECK_THROWS_AS(cosine_similarity(a, c), std::invalid_argument);
}

TEST_CASE("Mat row access") {
  Mat m(2, 3);
  m.set_row(0, Vec{1, 2, 3});
  m.set_row(1, Vec{4, 5, 6});
  CHECK(m(1, 2) == 6.0);
  CHECK(m.row_vec(0) == Vec{1, 2, 3});
  m(0, 1) = 9.0;
  CHECK(m.row_vec(0) == Vec{1, 9, 3});
  CHECK(m.same_shape(Mat(2, 3)));
  CHECK(!m.same_shape(Mat(3, 2)));
}

TEST_CASE("embedding space admits only matching embeddings") {
  EmbeddingSpace space{4, {Modality::Text, Modality::Image}};
  Embedding ok{Vec(4, 0.1), Modality::Text, "a"};
  Embedding wrong_dim{Vec(3, 0.1), Modality::Text, "b"};
  Embedding wrong_mod{Vec(4, 0.1), Modality::Voxel, "c"};
  CHECK(space.admits(ok));
  CHECK(!space.admits(wrong_dim));
  CHECK(!space.admits(wrong_mod));
}

TEST_CASE("rng streams are deterministic per seed") {
  Rng a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("labelled substreams differ from each other and the base stream") {
  Rng a = Rng::stream(5, "epoch.1");
  Rng b = Rng::stream(5, "epoch.2");
  Rng c = Rng::stream(5, "epoch.1");
  Rng base(5);
  CHECK(a.next_u64() != b.next_u64());
  CHECK(Rng::stream(5, "epoch.1").next_u64() == c.next_u64());
  CHECK(Rng::stream(5, "epoch.1").next_u64() != base.next_u64());
  CHECK(Rng::stream(5, "x").next_u64() != Rng::stream(6, "x").next_u64());
}

TEST_CASE("next_double lies in [0, 1)") {
  Rng rng(99);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double d = rng.next_double();
    CHECK(d >= 0.0);
    CHECK(d < 1.0);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("next_below is in range, covers all residues and rejects zero") {
  Rng rng(3);
  std::set<uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    uint64_t v = rng.next_below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK(rng.next_below(1) == 0);
  CHECK_THROWS_AS(rng.next_below(0), std::invalid_argument);
}

TEST_CASE("gaussian draws have roughly standard moments") {
  Rng rng(2024);
  const int n = 50000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = rng.next_gaussian();
    sum += g;
    sumsq += g * g;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes without loss and is deterministic") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(11);
  rng.shuffle(v);
  std::vector<int> w = v, sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);

  std::vector<int> again(50);
  std::iota(again.begin(), again.end(), 0);
  Rng rng2(11);
  rng2.shuffle(again);
  CHECK(again == w);
}

TEST_CASE("divergence error carries its message") {
  DivergenceError e("training diverged: non-finite loss at epoch 2, step 1 (global step 4)");
  CHECK(std::string(e.what()).find("epoch 2") != std::string::npos);
  const std::runtime_error& base = e;
  CHECK(std::string(base.what()) == e.what());
}

}  // TEST_SUITE
