#pragma once

// Shared helpers for the unit and acceptance suites: finite-difference
// gradient checking, a naive contrastive-loss oracle, temp dirs, subprocess
// capture and tiny OBJ fixtures.

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tmr/core.hpp"
#include "tmr/geometry.hpp"

namespace testutil {

inline double rel_err(double analytic, double fd) {
  double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-4});
  return std::fabs(analytic - fd) / denom;
}

/// Central-difference check of d(value)/d(data[i]) against analytic[i] for a
/// contiguous block of doubles. `value` must recompute the scalar from the
/// current contents of data. Returns the worst relative error seen.
inline double fd_max_rel(double* data, size_t n, const double* analytic,
                         const std::function<double()>& value, double eps = 1e-6) {
  double worst = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double keep = data[i];
    data[i] = keep + eps;
    double up = value();
    data[i] = keep - eps;
    double down = value();
    data[i] = keep;
    double fd = (up - down) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[i], fd));
  }
  return worst;
}

/// Two explicit loops, no log-sum-exp shift: the textbook form of the
/// directional contrastive loss, averaged over rows.
inline double naive_contrastive_mean(const tmr::Mat& U, const tmr::Mat& V, double tau) {
  double total = 0.0;
  for (int j = 0; j < U.rows; ++j) {
    double num = std::exp(tmr::cosine_similarity(U.row(j), V.row(j)) / tau);
    double den = 0.0;
    for (int k = 0; k < V.rows; ++k) den += std::exp(tmr::cosine_similarity(U.row(j), V.row(k)) / tau);
    total += -std::log(num / den);
  }
  return total / U.rows;
}

inline tmr::Mat random_mat(int rows, int cols, tmr::Rng& rng, double scale = 1.0) {
  tmr::Mat m(rows, cols);
  for (double& x : m.data) x = scale * rng.next_gaussian();
  return m;
}

inline std::vector<tmr::Vec> random_vecs(int n, int dim, tmr::Rng& rng, double scale = 1.0) {
  std::vector<tmr::Vec> out(n, tmr::Vec(dim));
  for (auto& v : out)
    for (double& x : v) x = scale * rng.next_gaussian();
  return out;
}

/// Scratch directory under the system temp root, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("tmr_" + tag + "_" + std::to_string(static_cast<long>(::getpid())));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }

  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr merged
};

inline CmdResult run_cmd(const std::string& cmd) {
  CmdResult res;
  std::string full = cmd + " 2>&1";
  FILE* pipe = ::popen(full.c_str(), "r");
  if (!pipe) return res;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) res.output.append(buf, n);
  int status = ::pclose(pipe);
  if (WIFEXITED(status)) res.exit_code = WEXITSTATUS(status);
  return res;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

/// Axis-aligned unit cube, 12 triangles, outward normals per vertex line.
inline void write_cube_obj(const std::string& path, double edge = 1.0) {
  std::ostringstream o;
  const int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                            {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  for (const auto& c : corner) o << "v " << c[0] * edge << " " << c[1] * edge << " " << c[2] * edge << "\n";
  const int face[12][3] = {{1, 3, 2}, {1, 4, 3},  // z = 0
                           {5, 6, 7}, {5, 7, 8},  // z = 1
                           {1, 2, 6}, {1, 6, 5},  // y = 0
                           {4, 7, 3}, {4, 8, 7},  // y = 1
                           {1, 8, 4}, {1, 5, 8},  // x = 0
                           {2, 3, 7}, {2, 7, 6}}; // x = 1
  for (const auto& f : face) o << "f " << f[0] << " " << f[1] << " " << f[2] << "\n";
  spit(path, o.str());
}

/// Flat square plate in the z = 0 plane, two triangles, all normals +z.
inline void write_plate_obj(const std::string& path, double side = 1.0) {
  std::ostringstream o;
  o << "v 0 0 0\nv " << side << " 0 0\nv " << side << " " << side << " 0\nv 0 " << side << " 0\n";
  o << "vn 0 0 1\n";
  o << "f 1//1 2//1 3//1\nf 1//1 3//1 4//1\n";
  spit(path, o.str());
}

/// Rotates a cloud by a fixed non-axis-aligned rotation (30 deg about z,
/// then 40 deg about x), points and normals alike.
inline tmr::PointCloud rotate_cloud(const tmr::PointCloud& in) {
  const double a = 30.0 * M_PI / 180.0, b = 40.0 * M_PI / 180.0;
  const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b);
  auto rot = [&](const tmr::Point3& p) -> tmr::Point3 {
    tmr::Point3 q = {ca * p[0] - sa * p[1], sa * p[0] + ca * p[1], p[2]};
    return {q[0], cb * q[1] - sb * q[2], sb * q[1] + cb * q[2]};
  };
  tmr::PointCloud out;
  out.points.reserve(in.points.size());
  out.normals.reserve(in.normals.size());
  for (const auto& p : in.points) out.points.push_back(rot(p));
  for (const auto& n : in.normals) out.normals.push_back(rot(n));
  return out;
}

}  // namespace testutil
