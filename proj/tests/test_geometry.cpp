#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "tmr/geometry.hpp"

using namespace tmr;

namespace {

PointCloud cloud_of(std::vector<Point3> pts, std::vector<Point3> normals = {}) {
  PointCloud c;
  c.points = std::move(pts);
  if (normals.empty()) normals.assign(c.points.size(), Point3{0.0, 0.0, 1.0});
  c.normals = std::move(normals);
  return c;
}

double brute_d2(const Point3& a, const Point3& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("obj loader accepts the three face forms") {
  testutil::TempDir dir("obj");
  std::string plain = dir.file("plain.obj");
  testutil::spit(plain, "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  TriangleMesh m = load_obj(plain);
  REQUIRE(m.vertices.size() == 3);
  REQUIRE(m.triangles.size() == 1);
  CHECK(m.triangles[0] == std::array<int, 3>{0, 1, 2});
  CHECK(m.vertex_normals.empty());

  std::string with_n = dir.file("normals.obj");
  testutil::spit(with_n,
                 "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
                 "vn 0 0 1\n"
                 "f 1//1 2//1 3//1\n");
  TriangleMesh mn = load_obj(with_n);
  REQUIRE(mn.vertex_normals.size() == 3);
  CHECK(mn.vertex_normals[1] == Point3{0.0, 0.0, 1.0});

  std::string with_t = dir.file("textured.obj");
  testutil::spit(with_t,
                 "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
                 "vt 0 0\nvn 1 0 0\n"
                 "o thing\ng grp\ns off\nusemtl m\nmtllib lib.mtl\n"
                 "f 1/1/1 2/1/1 3/1/1\n");
  TriangleMesh mt = load_obj(with_t);
  CHECK(mt.triangles.size() == 1);
  CHECK(mt.vertex_normals[0] == Point3{1.0, 0.0, 0.0});
}

TEST_CASE("obj loader rejects what it cannot represent") {
  testutil::TempDir dir("objbad");
  auto expect_error = [&](const std::string& name, const std::string& body, const std::string& needle) {
    std::string path = dir.file(name);
    testutil::spit(path, body);
    try {
      load_obj(path);
      FAIL("expected an error for ", name);
    } catch (const std::runtime_error& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos,
                    name, ": got '", e.what(), "'");
    }
  };

  expect_error("quad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", "only triangles");
  expect_error("dangling.obj", "v 0 0 0\nv 1 0 0\nf 1 2 3\n", "missing vertex 3");
  expect_error("negative.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -1 2 3\n", "negative");
  expect_error("unknown.obj", "v 0 0 0\ncurve 1 2\n", ":2: unsupported statement 'curve'");
  expect_error("short.obj", "v 0 0\n", "three coordinates");
  expect_error("novert.obj", "# nothing\n", "no vertices");
  expect_error("badnorm.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1//4 2//4 3//4\n", "missing normal 4");
  expect_error("garbled.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf a b c\n", "malformed face reference");

  CHECK_THROWS_AS(load_obj(dir.file("nonexistent.obj")), std::runtime_error);
}

TEST_CASE("bounding box spans the cloud") {
  std::vector<Point3> pts = {{-1.0, 2.0, 0.5}, {3.0, -4.0, 0.5}, {0.0, 0.0, 2.5}};
  Bbox box = bounding_box(pts);
  CHECK(box.min == Point3{-1.0, -4.0, 0.5});
  CHECK(box.max == Point3{3.0, 2.0, 2.5});
  CHECK(box.max_edge() == 6.0);
  CHECK_THROWS_AS(bounding_box({}), std::invalid_argument);
}

TEST_CASE("samples land on the triangle with its unit normal") {
  TriangleMesh m;
  m.vertices = {{0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}, {0.0, 2.0, 0.0}};
  m.triangles = {{0, 1, 2}};
  Rng rng(42);
  PointCloud cloud = sample_mesh_points(m, 500, rng);
  REQUIRE(cloud.points.size() == 500);
  REQUIRE(cloud.normals.size() == 500);
  for (const auto& p : cloud.points) {
    CHECK(p[2] == 0.0);
    CHECK(p[0] >= 0.0);
    CHECK(p[1] >= 0.0);
    CHECK(p[0] + p[1] <= 2.0 + 1e-12);
  }
  for (const auto& n : cloud.normals) {
    CHECK(std::abs(n[2]) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n[0] == doctest::Approx(0.0));
    CHECK(n[1] == doctest::Approx(0.0));
  }

  Rng rng2(42);
  PointCloud again = sample_mesh_points(m, 500, rng2);
  CHECK(again.points == cloud.points);

  CHECK_THROWS_AS(sample_mesh_points(m, 0, rng), std::invalid_argument);
  TriangleMesh empty;
  empty.vertices = m.vertices;
  CHECK_THROWS_AS(sample_mesh_points(empty, 10, rng), std::invalid_argument);

  TriangleMesh degenerate;
  degenerate.vertices = {{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {2.0, 0.0, 0.0}};
  degenerate.triangles = {{0, 1, 2}};
  CHECK_THROWS_AS(sample_mesh_points(degenerate, 10, rng), std::invalid_argument);
}

TEST_CASE("sampling is proportional to face area") {
  // two parallel triangles, one with 4x the area, split by z plane
  TriangleMesh m;
  m.vertices = {{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0},
                {0.0, 0.0, 5.0}, {2.0, 0.0, 5.0}, {0.0, 2.0, 5.0}};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  Rng rng(7);
  const int n = 10000;
  PointCloud cloud = sample_mesh_points(m, n, rng);
  int low = 0;
  for (const auto& p : cloud.points)
    if (p[2] < 2.5) ++low;
  int high = n - low;
  double exp_low = n / 5.0, exp_high = 4.0 * n / 5.0;
  double chi2 = (low - exp_low) * (low - exp_low) / exp_low + (high - exp_high) * (high - exp_high) / exp_high;
  CHECK(chi2 < 6.635);  // 99% quantile, 1 dof
}

TEST_CASE("rescaling divides by a tenth of the longest edge") {
  PointCloud c = cloud_of({{0.0, 0.0, 0.0}, {5.0, 1.0, 0.0}});
  Bbox box = bounding_box(c.points);
  PointCloud scaled = rescale_to_units(c, box);
  CHECK(scaled.points[1][0] == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(scaled.points[1][1] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(scaled.normals == c.normals);  // directions untouched

  Bbox flat{{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(rescale_to_units(c, flat), std::invalid_argument);
}

TEST_CASE("kd tree matches brute force, ties to the lowest index") {
  Rng rng(99);
  std::vector<Point3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back({rng.next_double(), rng.next_double(), rng.next_double()});
  for (int i = 0; i < 20; ++i) pts.push_back(pts[i * 3]);  // exact duplicates
  KdTree tree(pts);
  CHECK(tree.size() == 520);

  for (int q = 0; q < 100; ++q) {
    Point3 query = {rng.next_double() * 2.0 - 0.5, rng.next_double() * 2.0 - 0.5, rng.next_double()};
    auto [idx, d2] = tree.nearest(query);
    int best = 0;
    double best_d2 = brute_d2(query, pts[0]);
    for (size_t i = 1; i < pts.size(); ++i) {
      double d = brute_d2(query, pts[i]);
      if (d < best_d2) {
        best_d2 = d;
        best = static_cast<int>(i);
      }
    }
    CHECK(idx == best);
    CHECK(d2 == best_d2);
  }

  // querying a duplicated point returns the first copy
  auto [dup_idx, dup_d2] = tree.nearest(pts[500]);
  CHECK(dup_idx == 0);
  CHECK(dup_d2 == 0.0);

  KdTree empty_tree{std::vector<Point3>{}};
  CHECK(empty_tree.size() == 0);
  CHECK_THROWS_AS(empty_tree.nearest({0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("chamfer distance on hand clouds") {
  PointCloud a = cloud_of({{0.0, 0.0, 0.0}});
  PointCloud b = cloud_of({{1.0, 0.0, 0.0}});
  CHECK(chamfer_distance(a, b) == 2.0);  // 1 squared each way

  PointCloud c = cloud_of({{0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}});
  PointCloud d = cloud_of({{0.0, 0.0, 0.0}});
  // c->d mean: (0 + 4) / 2; d->c mean: 0
  CHECK(chamfer_distance(c, d) == 2.0);
  CHECK(chamfer_distance(c, d) == chamfer_distance(d, c));

  CHECK_THROWS_AS(chamfer_distance(PointCloud{}, a), std::invalid_argument);
}

TEST_CASE("f1 counts the threshold inclusively") {
  PointCloud gt = cloud_of({{0.0, 0.0, 0.0}});
  PointCloud at_tau = cloud_of({{0.5, 0.0, 0.0}});
  CHECK(f1_tau(gt, gt, 0.1) == 100.0);
  CHECK(f1_tau(gt, at_tau, 0.5) == 100.0);  // d^2 == tau^2 counts
  CHECK(f1_tau(gt, at_tau, 0.499999) == 0.0);

  PointCloud two = cloud_of({{0.0, 0.0, 0.0}, {5.0, 0.0, 0.0}});
  PointCloud one = cloud_of({{0.0, 0.0, 0.0}});
  // precision 1, recall 1/2 -> F1 = 2/3
  CHECK(f1_tau(two, one, 0.1) == doctest::Approx(200.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(f1_tau(gt, at_tau, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(f1_tau(gt, at_tau, -1.0), std::invalid_argument);
}

TEST_CASE("normal consistency uses absolute cosine both ways") {
  PointCloud a = cloud_of({{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}},
                          {{0.0, 0.0, 1.0}, {0.0, 1.0, 0.0}});
  CHECK(normal_consistency(a, a) == 1.0);

  PointCloud flipped = a;
  for (auto& n : flipped.normals)
    for (auto& v : n) v = -v;
  CHECK(normal_consistency(a, flipped) == 1.0);  // orientation-free

  PointCloud ortho = a;
  ortho.normals = {{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}};
  CHECK(normal_consistency(a, ortho) == 0.0);

  PointCloud no_normals;
  no_normals.points = a.points;
  CHECK_THROWS_AS(normal_consistency(a, no_normals), std::invalid_argument);
  PointCloud zero = a;
  zero.normals[0] = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(normal_consistency(a, zero), std::invalid_argument);
}

TEST_CASE("metrics are invariant under rigid rotation") {
  Rng rng(123);
  PointCloud gt, ret;
  for (int i = 0; i < 200; ++i) {
    gt.points.push_back({rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()});
    ret.points.push_back({rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()});
    auto unit = [&] {
      Point3 n = {rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()};
      double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      return Point3{n[0] / len, n[1] / len, n[2] / len};
    };
    gt.normals.push_back(unit());
    ret.normals.push_back(unit());
  }

  PointCloud gt_rot = testutil::rotate_cloud(gt);
  PointCloud ret_rot = testutil::rotate_cloud(ret);

  CHECK(f1_tau(gt_rot, ret_rot, 0.5) == doctest::Approx(f1_tau(gt, ret, 0.5)).epsilon(1e-9));
  CHECK(chamfer_distance(gt_rot, ret_rot) == doctest::Approx(chamfer_distance(gt, ret)).epsilon(1e-9));
  CHECK(normal_consistency(gt_rot, ret_rot) == doctest::Approx(normal_consistency(gt, ret)).epsilon(1e-9));
}

}  // TEST_SUITE
