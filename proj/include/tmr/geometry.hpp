#pragma once

#include <array>
#include <string>
#include <vector>

#include "tmr/core.hpp"

namespace tmr {

using Point3 = std::array<double, 3>;

/// Surface sample set with per-point unit normals.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<Point3> normals;
};

struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Point3> vertex_normals;  // optional, kept when the file provides them
};

/// Minimal OBJ subset: v, vn, and triangular f lines in the forms
/// "f a b c", "f a//an b//bn c//cn", "f a/at/an ...". Anything else that is
/// not a comment or an ignorable statement is an error naming file and line;
/// non-triangular faces are rejected.
TriangleMesh load_obj(const std::string& path);

struct Bbox {
  Point3 min;
  Point3 max;

  double max_edge() const;
};

Bbox bounding_box(const std::vector<Point3>& points);

/// Area-proportional triangle sampling: a triangle is picked by inverting
/// the cumulative area, the point placed at barycentric weights
/// (1-sqrt(r1), sqrt(r1)(1-r2), sqrt(r1) r2), and the normal taken from the
/// face plane. Zero-area faces are never selected.
PointCloud sample_mesh_points(const TriangleMesh& mesh, int n, Rng& rng);

/// Divides all points by bbox.max_edge()/10, so the governing box spans 10
/// units along its longest axis. Degenerate boxes (max edge 0) are errors.
PointCloud rescale_to_units(const PointCloud& cloud, const Bbox& bbox);

/// Exact 3-d nearest neighbour search; equal distances resolve to the lowest
/// point index.
class KdTree {
 public:
  explicit KdTree(std::vector<Point3> points);

  /// Returns (point index, squared distance).
  std::pair<int, double> nearest(const Point3& q) const;

  int size() const { return static_cast<int>(points_.size()); }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::vector<int>& idx, int lo, int hi);
  void search(int node, const Point3& q, int& best, double& best_d2) const;

  std::vector<Point3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// F-score at threshold tau (inclusive), percentage. Precision is the
/// fraction of retrieved points within tau of the ground truth; recall the
/// converse; F1 their harmonic mean (0 when both vanish).
double f1_tau(const PointCloud& gt, const PointCloud& retrieved, double tau);

/// Sum of the two directional means of squared nearest-neighbour distances.
double chamfer_distance(const PointCloud& gt, const PointCloud& retrieved);

/// Mean absolute cosine between each point's normal and its nearest
/// neighbour's normal, averaged over both directions.
double normal_consistency(const PointCloud& gt, const PointCloud& retrieved);

struct MetricConfig {
  std::vector<double> taus = {0.1, 0.3, 0.5};
  int n_samples = 10000;
  std::vector<int> ks = {1, 5};
};

}  // namespace tmr
