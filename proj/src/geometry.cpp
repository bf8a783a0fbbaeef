#include "tmr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace tmr {

namespace {

Point3 sub(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Point3 cross(const Point3& a, const Point3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double length(const Point3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

double dist2(const Point3& a, const Point3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

double abs_cos(const Point3& a, const Point3& b) {
  double la = length(a), lb = length(b);
  if (la == 0.0 || lb == 0.0) throw std::invalid_argument("normal_consistency: zero-length normal");
  return std::abs((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (la * lb));
}

void check_cloud(const PointCloud& c, const char* what, bool need_normals) {
  if (c.points.empty()) throw std::invalid_argument(std::string(what) + ": empty point cloud");
  if (need_normals && c.normals.size() != c.points.size())
    throw std::invalid_argument(std::string(what) + ": cloud lacks per-point normals");
}

}  // namespace

TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh file: " + path);

  TriangleMesh mesh;
  std::vector<Point3> file_normals;
  std::vector<std::array<int, 3>> face_normal_refs;  // -1 when absent
  std::string line;
  int line_no = 0;
  int face_no = 0;

  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;  // blank line
    if (key[0] == '#') continue;

    if (key == "v" || key == "vn") {
      Point3 p;
      if (!(ls >> p[0] >> p[1] >> p[2])) fail("expected three coordinates after '" + key + "'");
      std::string extra;
      if (ls >> extra) fail("unexpected token '" + extra + "' after coordinates");
      (key == "v" ? mesh.vertices : file_normals).push_back(p);
    } else if (key == "f") {
      ++face_no;
      std::vector<int> verts, norms;
      std::string ref;
      while (ls >> ref) {
        // forms: a | a/t | a//n | a/t/n, all indices 1-based
        size_t s1 = ref.find('/');
        std::string v_part = ref.substr(0, s1);
        std::string n_part;
        if (s1 != std::string::npos) {
          size_t s2 = ref.find('/', s1 + 1);
          if (s2 != std::string::npos) n_part = ref.substr(s2 + 1);
        }
        try {
          int v = std::stoi(v_part);
          if (v < 0) fail("negative vertex indices are not supported");
          verts.push_back(v);
          norms.push_back(n_part.empty() ? 0 : std::stoi(n_part));
        } catch (const std::logic_error&) {
          fail("malformed face reference '" + ref + "'");
        }
      }
      if (verts.size() != 3)
        fail("face " + std::to_string(face_no) + " has " + std::to_string(verts.size()) +
             " vertices; only triangles are supported");
      std::array<int, 3> tri;
      std::array<int, 3> nref;
      for (int i = 0; i < 3; ++i) {
        tri[i] = verts[i] - 1;
        nref[i] = norms[i] - 1;
      }
      mesh.triangles.push_back(tri);
      face_normal_refs.push_back(nref);
    } else if (key == "vt" || key == "vp" || key == "o" || key == "g" || key == "s" || key == "usemtl" ||
               key == "mtllib") {
      continue;  // legal but irrelevant here
    } else {
      fail("unsupported statement '" + key + "'");
    }
  }

  if (mesh.vertices.empty()) throw std::runtime_error(path + ": no vertices");
  for (size_t f = 0; f < mesh.triangles.size(); ++f)
    for (int i = 0; i < 3; ++i) {
      int v = mesh.triangles[f][i];
      if (v < 0 || v >= static_cast<int>(mesh.vertices.size()))
        throw std::runtime_error(path + ": face " + std::to_string(f + 1) + " references missing vertex " +
                                 std::to_string(v + 1));
      int nr = face_normal_refs[f][i];
      if (nr >= static_cast<int>(file_normals.size()))
        throw std::runtime_error(path + ": face " + std::to_string(f + 1) + " references missing normal " +
                                 std::to_string(nr + 1));
    }

  // Keep per-vertex normals when the file pins them down.
  bool any_ref = false;
  for (const auto& nref : face_normal_refs)
    for (int i = 0; i < 3; ++i)
      if (nref[i] >= 0) any_ref = true;
  if (any_ref) {
    mesh.vertex_normals.assign(mesh.vertices.size(), {0.0, 0.0, 0.0});
    for (size_t f = 0; f < mesh.triangles.size(); ++f)
      for (int i = 0; i < 3; ++i)
        if (face_normal_refs[f][i] >= 0) mesh.vertex_normals[mesh.triangles[f][i]] = file_normals[face_normal_refs[f][i]];
  } else if (file_normals.size() == mesh.vertices.size()) {
    mesh.vertex_normals = file_normals;
  }
  return mesh;
}

double Bbox::max_edge() const {
  double e = 0.0;
  for (int a = 0; a < 3; ++a) e = std::max(e, max[a] - min[a]);
  return e;
}

Bbox bounding_box(const std::vector<Point3>& points) {
  if (points.empty()) throw std::invalid_argument("bounding_box: no points");
  Bbox b{points[0], points[0]};
  for (const auto& p : points)
    for (int a = 0; a < 3; ++a) {
      b.min[a] = std::min(b.min[a], p[a]);
      b.max[a] = std::max(b.max[a], p[a]);
    }
  return b;
}

PointCloud sample_mesh_points(const TriangleMesh& mesh, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_mesh_points: n must be positive");
  if (mesh.vertices.empty() || mesh.triangles.empty())
    throw std::invalid_argument("sample_mesh_points: mesh has no faces");

  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (size_t f = 0; f < mesh.triangles.size(); ++f) {
    const auto& t = mesh.triangles[f];
    for (int i = 0; i < 3; ++i)
      if (t[i] < 0 || t[i] >= static_cast<int>(mesh.vertices.size()))
        throw std::invalid_argument("sample_mesh_points: face references a missing vertex");
    const Point3& a = mesh.vertices[t[0]];
    const Point3& b = mesh.vertices[t[1]];
    const Point3& c = mesh.vertices[t[2]];
    total += 0.5 * length(cross(sub(b, a), sub(c, a)));
    cumulative[f] = total;
  }
  if (total <= 0.0) throw std::invalid_argument("sample_mesh_points: mesh has zero surface area");

  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.normals.reserve(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.next_double() * total;
    size_t f = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
    if (f >= mesh.triangles.size()) f = mesh.triangles.size() - 1;
    const auto& t = mesh.triangles[f];
    const Point3& a = mesh.vertices[t[0]];
    const Point3& b = mesh.vertices[t[1]];
    const Point3& c = mesh.vertices[t[2]];

    double r1 = rng.next_double();
    double r2 = rng.next_double();
    double s = std::sqrt(r1);
    double w0 = 1.0 - s;
    double w1 = s * (1.0 - r2);
    double w2 = s * r2;
    cloud.points.push_back({w0 * a[0] + w1 * b[0] + w2 * c[0], w0 * a[1] + w1 * b[1] + w2 * c[1],
                            w0 * a[2] + w1 * b[2] + w2 * c[2]});

    Point3 nrm = cross(sub(b, a), sub(c, a));
    double len = length(nrm);
    cloud.normals.push_back({nrm[0] / len, nrm[1] / len, nrm[2] / len});
  }
  return cloud;
}

PointCloud rescale_to_units(const PointCloud& cloud, const Bbox& bbox) {
  check_cloud(cloud, "rescale_to_units", false);
  double edge = bbox.max_edge();
  if (edge <= 0.0) throw std::invalid_argument("rescale_to_units: degenerate bounding box");
  double scale = edge / 10.0;
  PointCloud out = cloud;
  for (auto& p : out.points)
    for (int a = 0; a < 3; ++a) p[a] /= scale;
  return out;
}

KdTree::KdTree(std::vector<Point3> points) : points_(std::move(points)) {
  if (points_.empty()) return;
  std::vector<int> idx(points_.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()));
}

int KdTree::build(std::vector<int>& idx, int lo, int hi) {
  if (lo >= hi) return -1;

  Point3 mn = points_[idx[lo]], mx = points_[idx[lo]];
  for (int i = lo + 1; i < hi; ++i)
    for (int a = 0; a < 3; ++a) {
      mn[a] = std::min(mn[a], points_[idx[i]][a]);
      mx[a] = std::max(mx[a], points_[idx[i]][a]);
    }
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (mx[a] - mn[a] > mx[axis] - mn[axis]) axis = a;

  int mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](int a, int b) {
    if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
    return a < b;
  });

  int id = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  int left = build(idx, lo, mid);
  int right = build(idx, mid + 1, hi);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Point3& q, int& best, double& best_d2) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Point3& p = points_[n.point];

  double d2 = dist2(q, p);
  if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
    best_d2 = d2;
    best = n.point;
  }

  double diff = q[n.axis] - p[n.axis];
  int near = diff < 0.0 ? n.left : n.right;
  int far = diff < 0.0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);  // <=: an equal-distance, lower-index
                                                              // point may sit on the far side
}

std::pair<int, double> KdTree::nearest(const Point3& q) const {
  if (points_.empty()) throw std::invalid_argument("KdTree::nearest: empty tree");
  int best = std::numeric_limits<int>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, q, best, best_d2);
  return {best, best_d2};
}

double f1_tau(const PointCloud& gt, const PointCloud& retrieved, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("f1_tau: tau must be positive");
  check_cloud(gt, "f1_tau", false);
  check_cloud(retrieved, "f1_tau", false);

  double tau2 = tau * tau;
  KdTree gt_tree(gt.points);
  int close = 0;
  for (const auto& p : retrieved.points)
    if (gt_tree.nearest(p).second <= tau2) ++close;
  double precision = static_cast<double>(close) / retrieved.points.size();

  KdTree ret_tree(retrieved.points);
  close = 0;
  for (const auto& p : gt.points)
    if (ret_tree.nearest(p).second <= tau2) ++close;
  double recall = static_cast<double>(close) / gt.points.size();

  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

double chamfer_distance(const PointCloud& gt, const PointCloud& retrieved) {
  check_cloud(gt, "chamfer_distance", false);
  check_cloud(retrieved, "chamfer_distance", false);

  KdTree ret_tree(retrieved.points);
  double forward = 0.0;
  for (const auto& p : gt.points) forward += ret_tree.nearest(p).second;
  forward /= static_cast<double>(gt.points.size());

  KdTree gt_tree(gt.points);
  double backward = 0.0;
  for (const auto& p : retrieved.points) backward += gt_tree.nearest(p).second;
  backward /= static_cast<double>(retrieved.points.size());

  return forward + backward;
}

double normal_consistency(const PointCloud& gt, const PointCloud& retrieved) {
  check_cloud(gt, "normal_consistency", true);
  check_cloud(retrieved, "normal_consistency", true);

  KdTree ret_tree(retrieved.points);
  double forward = 0.0;
  for (size_t i = 0; i < gt.points.size(); ++i)
    forward += abs_cos(gt.normals[i], retrieved.normals[ret_tree.nearest(gt.points[i]).first]);
  forward /= static_cast<double>(gt.points.size());

  KdTree gt_tree(gt.points);
  double backward = 0.0;
  for (size_t i = 0; i < retrieved.points.size(); ++i)
    backward += abs_cos(retrieved.normals[i], gt.normals[gt_tree.nearest(retrieved.points[i]).first]);
  backward /= static_cast<double>(retrieved.points.size());

  return 0.5 * (forward + backward);
}

}  // namespace tmr
