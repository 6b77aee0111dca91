#include "pame/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

#include <nlohmann/json.hpp>

#include "pame/error.hpp"
#include "pame/rng.hpp"

namespace pame::topology {

using pame::Error;
using pame::ErrorCode;

const char* graph_kind_name(GraphKind kind) {
  switch (kind) {
    case GraphKind::OddRing: return "odd_ring";
    case GraphKind::Torus2D: return "torus2d";
    case GraphKind::KRegularRandom: return "k_regular_random";
    case GraphKind::Complete: return "complete";
    case GraphKind::Custom: return "custom";
  }
  return "custom";
}

GraphKind graph_kind_from_name(const std::string& name) {
  if (name == "odd_ring") return GraphKind::OddRing;
  if (name == "torus2d") return GraphKind::Torus2D;
  if (name == "k_regular_random") return GraphKind::KRegularRandom;
  if (name == "complete") return GraphKind::Complete;
  if (name == "custom") return GraphKind::Custom;
  throw Error(ErrorCode::ConfigError, "unknown graph kind '" + name + "'");
}

namespace {

Graph ring(int m, uint64_t seed) {
  if (m < 3 || m % 2 == 0)
    throw Error(ErrorCode::InvalidDimension,
                "odd ring needs odd m >= 3, got m=" + std::to_string(m));
  Graph g{m, GraphKind::OddRing, seed, {}};
  g.neighbors.resize(m);
  for (int i = 0; i < m; ++i) {
    int a = (i + m - 1) % m, b = (i + 1) % m;
    g.neighbors[i] = {std::min(a, b), std::max(a, b)};
  }
  return g;
}

Graph torus(int m, uint64_t seed) {
  const int side = int(std::lround(std::sqrt(double(m))));
  if (side * side != m || side < 3 || side % 2 == 0)
    throw Error(ErrorCode::InvalidDimension,
                "torus2d needs m = side^2 with odd side >= 3, got m=" +
                    std::to_string(m));
  Graph g{m, GraphKind::Torus2D, seed, {}};
  g.neighbors.resize(m);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int id = r * side + c;
      std::set<int> nb = {((r + 1) % side) * side + c,
                          ((r + side - 1) % side) * side + c,
                          r * side + (c + 1) % side,
                          r * side + (c + side - 1) % side};
      g.neighbors[id].assign(nb.begin(), nb.end());
    }
  }
  return g;
}

Graph complete(int m, uint64_t seed) {
  if (m < 2)
    throw Error(ErrorCode::InvalidDimension,
                "complete graph needs m >= 2, got m=" + std::to_string(m));
  Graph g{m, GraphKind::Complete, seed, {}};
  g.neighbors.resize(m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (j != i) g.neighbors[i].push_back(j);
  return g;
}

// One stub-matching attempt with pair-level rejection (Steger-Wormald):
// among the remaining stubs, draw uniform pairs and redraw on self-loops or
// multi-edges; give up only when the remaining stubs admit no valid pair at
// all. Rejecting whole matchings instead would succeed with probability
// ~exp(-(d^2-1)/4) per attempt, hopeless already at d = 6.
bool try_pairing(int m, int d, rng::Stream& stream, Graph* out) {
  std::vector<int> stubs(size_t(m) * d);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < d; ++k) stubs[size_t(i) * d + k] = i;
  std::vector<std::set<int>> adj(m);
  const auto valid = [&](int a, int b) { return a != b && !adj[a].count(b); };
  size_t live = stubs.size();
  while (live > 0) {
    bool placed = false;
    for (int draw = 0; draw < 64 && !placed; ++draw) {
      const size_t ia = size_t(stream.below(live));
      size_t ib = size_t(stream.below(live - 1));
      if (ib >= ia) ++ib;
      const int a = stubs[ia], b = stubs[ib];
      if (!valid(a, b)) continue;
      adj[a].insert(b);
      adj[b].insert(a);
      const size_t hi = std::max(ia, ib), lo = std::min(ia, ib);
      stubs[hi] = stubs[live - 1];
      --live;
      stubs[lo] = stubs[live - 1];
      --live;
      placed = true;
    }
    if (!placed) {
      bool any = false;
      for (size_t x = 0; x < live && !any; ++x)
        for (size_t y = x + 1; y < live && !any; ++y)
          if (valid(stubs[x], stubs[y])) any = true;
      if (!any) return false;  // dead end: the caller restarts
    }
  }
  out->neighbors.resize(m);
  for (int i = 0; i < m; ++i)
    out->neighbors[i].assign(adj[i].begin(), adj[i].end());
  return true;
}

Graph k_regular(int m, int d, uint64_t seed, int max_retries) {
  if (m < 3 || d < 1 || d >= m || (int64_t(m) * d) % 2 != 0)
    throw Error(ErrorCode::InvalidDimension,
                "k-regular random needs m >= 3, 1 <= degree < m, m*degree "
                "even; got m=" + std::to_string(m) +
                    " degree=" + std::to_string(d));
  rng::Stream stream(seed, rng::Purpose::GraphGen);
  Graph g{m, GraphKind::KRegularRandom, seed, {}};
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    g.neighbors.clear();
    if (!try_pairing(m, d, stream, &g)) continue;
    if (is_connected(g) && !is_bipartite(g)) return g;
  }
  throw Error(ErrorCode::NotConnected,
              "no connected non-bipartite " + std::to_string(d) +
                  "-regular graph on " + std::to_string(m) + " nodes after " +
                  std::to_string(max_retries) + " attempts");
}

}  // namespace

Graph build_graph(GraphKind kind, int m, int degree, uint64_t seed,
                  int max_retries) {
  switch (kind) {
    case GraphKind::OddRing: return ring(m, seed);
    case GraphKind::Torus2D: return torus(m, seed);
    case GraphKind::KRegularRandom: return k_regular(m, degree, seed, max_retries);
    case GraphKind::Complete: return complete(m, seed);
    case GraphKind::Custom:
      throw Error(ErrorCode::ConfigError,
                  "custom graphs cannot be generated; load them from JSON");
  }
  throw Error(ErrorCode::ConfigError, "unreachable graph kind");
}

bool is_connected(const Graph& g) {
  if (g.node_count <= 0) return false;
  std::vector<char> seen(g.node_count, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : g.neighbors[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
  }
  return count == g.node_count;
}

bool is_bipartite(const Graph& g) {
  std::vector<int> color(g.node_count, -1);
  for (int start = 0; start < g.node_count; ++start) {
    if (color[start] != -1) continue;
    color[start] = 0;
    std::queue<int> q;
    q.push(start);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : g.neighbors[u]) {
        if (color[v] == -1) {
          color[v] = color[u] ^ 1;
          q.push(v);
        } else if (color[v] == color[u]) {
          return false;
        }
      }
    }
  }
  return true;
}

void validate_graph(const Graph& g) {
  const int m = g.node_count;
  if (m < 2 || int(g.neighbors.size()) != m)
    throw Error(ErrorCode::InvalidDimension,
                "graph needs m >= 2 nodes and one adjacency list per node");
  const size_t deg = g.neighbors[0].size();
  for (int i = 0; i < m; ++i) {
    const auto& nb = g.neighbors[i];
    if (nb.size() != deg)
      throw Error(ErrorCode::InvalidDimension,
                  "graph is not regular: node " + std::to_string(i));
    if (!std::is_sorted(nb.begin(), nb.end()) ||
        std::adjacent_find(nb.begin(), nb.end()) != nb.end())
      throw Error(ErrorCode::InvalidDimension,
                  "adjacency of node " + std::to_string(i) +
                      " is not sorted/unique");
    for (int v : nb) {
      if (v < 0 || v >= m || v == i)
        throw Error(ErrorCode::InvalidDimension,
                    "bad neighbor " + std::to_string(v) + " at node " +
                        std::to_string(i));
      const auto& back = g.neighbors[v];
      if (!std::binary_search(back.begin(), back.end(), i))
        throw Error(ErrorCode::InvalidDimension,
                    "asymmetric edge " + std::to_string(i) + "-" +
                        std::to_string(v));
    }
  }
  if (deg == 0)
    throw Error(ErrorCode::InvalidTopology, "graph has isolated nodes");
}

std::vector<double> mixing_entries(const Graph& g) {
  validate_graph(g);
  const int m = g.node_count;
  std::vector<double> B(size_t(m) * m, 0.0);
  for (int i = 0; i < m; ++i) {
    const double w = 1.0 / double(g.neighbors[i].size());
    for (int j : g.neighbors[i]) B[size_t(j) * m + i] = w;  // B_ji = 1/m_i
  }
  return B;
}

CommMatrix communication_matrix(const Graph& g) {
  CommMatrix cm;
  cm.m = g.node_count;
  cm.degree = g.degree();
  cm.entries = mixing_entries(g);
  cm.zeta = spectral_gap(cm.entries, cm.m);
  if (cm.zeta >= 1.0 - 1e-10)
    throw Error(ErrorCode::BipartiteOrDisconnected,
                "mixing matrix has zeta = " + std::to_string(cm.zeta) +
                    " >= 1; graph is bipartite or disconnected");
  return cm;
}

namespace {

// y = (B - J) x, with J = (1/m) ones.
void apply_deflated(const std::vector<double>& B, int m,
                    const std::vector<double>& x, std::vector<double>* y) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / m;
  for (int r = 0; r < m; ++r) {
    double acc = 0.0;
    const double* row = &B[size_t(r) * m];
    for (int c = 0; c < m; ++c) acc += row[c] * x[c];
    (*y)[r] = acc - mean;
  }
}

void remove_ones_component(std::vector<double>* v) {
  const double mean = std::accumulate(v->begin(), v->end(), 0.0) / double(v->size());
  for (double& x : *v) x -= mean;
}

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Cyclic Jacobi eigenvalues of a symmetric matrix (destroys its argument).
// Good enough for m <= 256; used only when power iteration stalls.
double jacobi_max_abs_eig(std::vector<double> A, int m) {
  auto at = [&](int r, int c) -> double& { return A[size_t(r) * m + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int r = 0; r < m; ++r)
      for (int c = r + 1; c < m; ++c) off += at(r, c) * at(r, c);
    if (std::sqrt(off) < 1e-14) break;
    for (int p = 0; p < m; ++p) {
      for (int q = p + 1; q < m; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < m; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < m; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  double best = 0.0;
  for (int r = 0; r < m; ++r) best = std::max(best, std::abs(at(r, r)));
  return best;
}

}  // namespace

double spectral_gap(const std::vector<double>& B, int m) {
  if (m <= 0 || B.size() != size_t(m) * m)
    throw Error(ErrorCode::InvalidDimension, "spectral_gap: bad matrix size");
  for (int r = 0; r < m; ++r) {
    double row = 0.0, col = 0.0;
    for (int c = 0; c < m; ++c) {
      row += B[size_t(r) * m + c];
      col += B[size_t(c) * m + r];
      if (std::abs(B[size_t(r) * m + c] - B[size_t(c) * m + r]) > 1e-12)
        throw Error(ErrorCode::NotSymmetric,
                    "B is not symmetric at (" + std::to_string(r) + "," +
                        std::to_string(c) + ")");
    }
    if (std::abs(row - 1.0) > 1e-12 || std::abs(col - 1.0) > 1e-12)
      throw Error(ErrorCode::NotStochastic,
                  "row/column " + std::to_string(r) + " does not sum to 1");
  }
  if (m == 1) return 0.0;

  // Power iteration on M^2 where M = B - J: theta converges to zeta^2.
  // Deterministic start vector; re-deflate each step so roundoff cannot
  // reintroduce the all-ones direction.
  rng::Stream stream(0x5eedf00d, rng::Purpose::Generic);
  std::vector<double> v(m), Mv(m), MMv(m);
  for (double& x : v) x = stream.uniform(-1.0, 1.0);
  remove_ones_component(&v);
  double nv = norm2(v);
  if (nv == 0.0) {
    v[0] = 1.0;
    remove_ones_component(&v);
    nv = norm2(v);
  }
  for (double& x : v) x /= nv;

  double theta = 0.0;
  for (int it = 0; it < 100000; ++it) {
    apply_deflated(B, m, v, &Mv);
    apply_deflated(B, m, Mv, &MMv);
    remove_ones_component(&MMv);
    theta = 0.0;
    for (int i = 0; i < m; ++i) theta += v[i] * MMv[i];
    // Residual || M^2 v - theta v ||: standard symmetric eigenvalue bound.
    double res = 0.0;
    for (int i = 0; i < m; ++i) {
      const double d = MMv[i] - theta * v[i];
      res += d * d;
    }
    if (std::sqrt(res) <= 1e-10) return std::sqrt(std::max(theta, 0.0));
    const double nn = norm2(MMv);
    if (nn < 1e-200) return 0.0;  // M^2 v vanished: zeta is numerically 0
    for (int i = 0; i < m; ++i) v[i] = MMv[i] / nn;
  }
  if (m <= 256) {
    std::vector<double> M(B);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) M[size_t(r) * m + c] -= 1.0 / m;
    return jacobi_max_abs_eig(std::move(M), m);
  }
  return std::sqrt(std::max(theta, 0.0));  // best available estimate
}

nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["m"] = g.node_count;
  j["kind"] = graph_kind_name(g.kind);
  j["seed"] = g.seed;
  j["neighbors"] = g.neighbors;
  return j;
}

Graph graph_from_json(const nlohmann::json& j) {
  Graph g;
  try {
    g.node_count = j.at("m").get<int>();
    g.kind = graph_kind_from_name(j.at("kind").get<std::string>());
    g.seed = j.value("seed", uint64_t(0));
    g.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError,
                std::string("bad graph JSON: ") + e.what());
  }
  validate_graph(g);
  if (!is_connected(g))
    throw Error(ErrorCode::NotConnected, "graph JSON describes a disconnected graph");
  return g;
}

}  // namespace pame::topology
