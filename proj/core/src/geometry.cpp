#include "bflu/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

namespace bflu {

void PointCloud::validate() const {
  if (dimension != 2 && dimension != 3) throw InvalidInput("point cloud dimension must be 2 or 3");
  if (points.empty()) throw InvalidInput("point cloud is empty");
  for (const auto& p : points) {
    for (double c : p)
      if (!std::isfinite(c)) throw InvalidInput("point cloud contains a non-finite coordinate");
    if (dimension == 2 && p[2] != 0.0) throw InvalidInput("2D point with nonzero z coordinate");
  }
}

double distance(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

int tree_depth(Index n, Index leaf_size) {
  if (leaf_size < 1) throw InvalidInput("leaf_size must be positive");
  const double ratio = std::max(1.0, static_cast<double>(n) / static_cast<double>(leaf_size));
  int depth = static_cast<int>(std::ceil(std::log2(ratio) - 1e-12));
  // Never ask for more leaves than points.
  int cap = 0;
  while ((Index{1} << (cap + 1)) <= n) ++cap;
  return std::max(0, std::min(depth, cap));
}

namespace {

struct Builder {
  const PointCloud& cloud;
  std::vector<Index>& perm;
  std::vector<ClusterNode>& nodes;
  int depth;

  void bounding(Index begin, Index end, ClusterNode& node) const {
    Point lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::numeric_limits<double>::infinity();
      hi[a] = -lo[a];
    }
    for (Index t = begin; t < end; ++t) {
      const auto& p = cloud.points[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])];
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    }
    for (int a = 0; a < 3; ++a) node.center[a] = 0.5 * (lo[a] + hi[a]);
    double r = 0.0;
    for (Index t = begin; t < end; ++t)
      r = std::max(r, distance(node.center,
                               cloud.points[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])]));
    node.radius = r;
  }

  int build(Index begin, Index end, int level, int parent) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    {
      ClusterNode& node = nodes.back();
      node.level = level;
      node.begin = begin;
      node.end = end;
      node.parent = parent;
      bounding(begin, end, node);
    }
    if (level == depth) return id;

    // Longest bounding-box axis; ties go to the lowest axis index.
    double span[3];
    for (int a = 0; a < 3; ++a) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Index t = begin; t < end; ++t) {
        const double c = cloud.points[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])][a];
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
      span[a] = hi - lo;
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (span[a] > span[axis]) axis = a;

    const Index mid = begin + (end - begin) / 2;
    auto first = perm.begin() + begin, nth = perm.begin() + mid, last = perm.begin() + end;
    std::nth_element(first, nth, last, [&](Index x, Index y) {
      const double cx = cloud.points[static_cast<std::size_t>(x)][axis];
      const double cy = cloud.points[static_cast<std::size_t>(y)][axis];
      return cx < cy || (cx == cy && x < y);
    });
    // Keep each half in a canonical order so the permutation is deterministic.
    std::sort(first, nth, [&](Index x, Index y) {
      const double cx = cloud.points[static_cast<std::size_t>(x)][axis];
      const double cy = cloud.points[static_cast<std::size_t>(y)][axis];
      return cx < cy || (cx == cy && x < y);
    });
    std::sort(nth, last, [&](Index x, Index y) {
      const double cx = cloud.points[static_cast<std::size_t>(x)][axis];
      const double cy = cloud.points[static_cast<std::size_t>(y)][axis];
      return cx < cy || (cx == cy && x < y);
    });

    const int left = build(begin, mid, level + 1, id);
    const int right = build(mid, end, level + 1, id);
    nodes[static_cast<std::size_t>(id)].children = {left, right};
    return id;
  }
};

}  // namespace

ClusterTree build_cluster_tree(const PointCloud& cloud, Index leaf_size) {
  if (cloud.points.empty()) throw InvalidInput("cannot build a cluster tree over an empty cloud");
  if (leaf_size < 1) throw InvalidInput("leaf_size must be positive");
  ClusterTree tree;
  const Index n = cloud.size();
  tree.perm_.resize(static_cast<std::size_t>(n));
  std::iota(tree.perm_.begin(), tree.perm_.end(), Index{0});
  tree.depth_ = tree_depth(n, leaf_size);
  tree.leaf_size_ = leaf_size;
  Builder b{cloud, tree.perm_, tree.nodes_, tree.depth_};
  b.build(0, n, 0, -1);
  tree.iperm_.resize(tree.perm_.size());
  for (Index t = 0; t < n; ++t)
    tree.iperm_[static_cast<std::size_t>(tree.perm_[static_cast<std::size_t>(t)])] = t;
  return tree;
}

std::vector<int> ClusterTree::level_nodes(int level) const { return descendants(root(), level); }

std::vector<int> ClusterTree::descendants(int id, int down) const {
  std::vector<int> cur{id};
  for (int s = 0; s < down; ++s) {
    std::vector<int> next;
    next.reserve(cur.size() * 2);
    for (int c : cur) {
      const auto& nd = node(c);
      if (nd.is_leaf()) throw InvalidInput("descendants requested below a leaf");
      next.push_back(nd.children[0]);
      next.push_back(nd.children[1]);
    }
    cur = std::move(next);
  }
  return cur;
}

PointCloud ClusterTree::tree_ordered(const PointCloud& cloud) const {
  PointCloud out;
  out.dimension = cloud.dimension;
  out.points.reserve(perm_.size());
  for (Index o : perm_) out.points.push_back(cloud.points[static_cast<std::size_t>(o)]);
  return out;
}

bool is_far(const ClusterNode& a, const ClusterNode& b, double chi) {
  return distance(a.center, b.center) > chi * (a.radius + b.radius);
}

namespace {

void partition_pair(const ClusterTree& tree, int obs, int src, double chi, BlockPartition& out) {
  const auto& o = tree.node(obs);
  const auto& s = tree.node(src);
  if (o.level >= 2 && obs != src && is_far(o, s, chi)) {
    out.far_pairs.push_back({o.level, src, obs});
    return;
  }
  if (o.is_leaf() || s.is_leaf()) {
    out.near_pairs.push_back({o.level, src, obs});
    return;
  }
  for (int oc : o.children)
    for (int sc : s.children) partition_pair(tree, oc, sc, chi, out);
}

}  // namespace

BlockPartition build_block_partition(const ClusterTree& tree, double chi) {
  if (!(chi > 0.0)) throw InvalidInput("chi must be positive");
  if (chi < 2.0 || chi > 4.0)
    std::clog << "warning: chi = " << chi << " lies outside the usual range [2, 4]\n";
  BlockPartition part;
  part.chi = chi;
  partition_pair(tree, tree.root(), tree.root(), chi, part);
  return part;
}

PointCloud make_circle(double radius, Index n) {
  if (n < 1 || !(radius > 0.0)) throw InvalidInput("circle needs n >= 1 and radius > 0");
  PointCloud c;
  c.dimension = 2;
  c.points.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double t = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
    c.points.push_back({radius * std::cos(t), radius * std::sin(t), 0.0});
  }
  return c;
}

PointCloud make_arc(double radius, double angle_begin, double angle_end, Index n) {
  if (n < 1 || !(radius > 0.0)) throw InvalidInput("arc needs n >= 1 and radius > 0");
  PointCloud c;
  c.dimension = 2;
  for (Index i = 0; i < n; ++i) {
    const double t = angle_begin + (angle_end - angle_begin) * (static_cast<double>(i) + 0.5) /
                                       static_cast<double>(n);
    c.points.push_back({radius * std::cos(t), radius * std::sin(t), 0.0});
  }
  return c;
}

PointCloud make_sphere(double radius, Index n) {
  if (n < 1 || !(radius > 0.0)) throw InvalidInput("sphere needs n >= 1 and radius > 0");
  // Fibonacci lattice.
  PointCloud c;
  c.dimension = 3;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (Index i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    Point p{rho * std::cos(phi), rho * std::sin(phi), z};
    const double nrm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    for (auto& v : p) v *= radius / nrm;
    c.points.push_back(p);
  }
  return c;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("bad " + what + " in geometry descriptor: '" + s + "'");
  }
}

Index to_index(const std::string& s, const std::string& what) {
  const double v = to_double(s, what);
  if (v != std::floor(v) || v < 1) throw InvalidInput("bad " + what + " in geometry descriptor: '" + s + "'");
  return static_cast<Index>(v);
}

}  // namespace

PointCloud generate_geometry(const std::string& descriptor) {
  if (descriptor.rfind("file:", 0) == 0) return load_geometry(descriptor.substr(5));
  const auto parts = split(descriptor, ':');
  if (parts.empty()) throw InvalidInput("empty geometry descriptor");
  const auto& kind = parts[0];
  if (kind == "circle" && parts.size() == 3)
    return make_circle(to_double(parts[1], "radius"), to_index(parts[2], "point count"));
  if (kind == "sphere" && parts.size() == 3)
    return make_sphere(to_double(parts[1], "radius"), to_index(parts[2], "point count"));
  if (kind == "arc" && parts.size() == 5)
    return make_arc(to_double(parts[1], "radius"), to_double(parts[2], "angle"),
                    to_double(parts[3], "angle"), to_index(parts[4], "point count"));
  throw InvalidInput("unknown geometry descriptor '" + descriptor + "'");
}

PointCloud load_geometry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open geometry file " + path.string(), 0);
  PointCloud cloud;
  cloud.dimension = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t pos = 0;
        vals.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("malformed coordinate '" + tok + "' in " + path.string(), lineno);
      }
    }
    if (vals.size() != 2 && vals.size() != 3)
      throw ParseError("expected 2 or 3 coordinates in " + path.string(), lineno);
    const int dim = static_cast<int>(vals.size());
    if (cloud.dimension == 0) cloud.dimension = dim;
    if (dim != cloud.dimension) throw ParseError("inconsistent point dimension in " + path.string(), lineno);
    cloud.points.push_back({vals[0], vals[1], dim == 3 ? vals[2] : 0.0});
  }
  if (cloud.points.empty()) throw ParseError("no points in " + path.string(), lineno);
  return cloud;
}

void save_geometry(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write geometry file " + path.string());
  out << "# " << cloud.size() << " points, dimension " << cloud.dimension << "\n";
  out << std::setprecision(17);
  for (const auto& p : cloud.points) {
    out << p[0] << ' ' << p[1];
    if (cloud.dimension == 3) out << ' ' << p[2];
    out << '\n';
  }
}

}  // namespace bflu
