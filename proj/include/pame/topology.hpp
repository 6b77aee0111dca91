#pragma once

// Communication topologies and the gossip mixing matrix.
//
// All supported generators produce regular graphs, which is what makes the
// column-normalized communication matrix B (B_ji = 1/m_i for j in N_i, zero
// diagonal) doubly stochastic. The second-largest eigenvalue modulus
// zeta = max{|lambda_2|, |lambda_m|} < 1 is the mixing requirement; bipartite
// graphs (even rings, K2) have zeta = 1 and are rejected by
// communication_matrix.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace pame::topology {

enum class GraphKind { OddRing, Torus2D, KRegularRandom, Complete, Custom };

const char* graph_kind_name(GraphKind kind);
GraphKind graph_kind_from_name(const std::string& name);

struct Graph {
  int node_count = 0;
  GraphKind kind = GraphKind::Custom;
  uint64_t seed = 0;
  // neighbors[i] sorted ascending, no self-loops, symmetric.
  std::vector<std::vector<int>> neighbors;

  int degree() const { return neighbors.empty() ? 0 : int(neighbors[0].size()); }
};

// Generators. Same (kind, m, degree, seed) always yields the same graph.
//  - OddRing: m odd, >= 3; degree ignored (2).
//  - Torus2D: m a perfect square with odd side >= 3; degree ignored (4).
//  - KRegularRandom: stub matching with pair-level rejection, restarted
//    until simple, connected and non-bipartite; needs degree >= 1,
//    m > degree, m*degree even.
//  - Complete: m >= 2; degree ignored (m-1). K2 builds but will not mix.
Graph build_graph(GraphKind kind, int m, int degree, uint64_t seed,
                  int max_retries = 1000);

bool is_connected(const Graph& g);
bool is_bipartite(const Graph& g);

// Checks symmetry, degree-regularity, sorted/self-loop-free adjacency.
void validate_graph(const Graph& g);

struct CommMatrix {
  int m = 0;
  int degree = 0;
  double zeta = 0.0;
  std::vector<double> entries;  // row-major m*m; entries[j*m + i] = B_ji

  double at(int row, int col) const { return entries[size_t(row) * m + col]; }
};

// Dense row-major B for a regular graph; no gap gate. Used by the engine,
// which degrades zeta >= 1 to a warning instead of refusing to run.
std::vector<double> mixing_entries(const Graph& g);

// Builds B, verifies double stochasticity, computes zeta and rejects
// zeta >= 1 - 1e-10 with BipartiteOrDisconnected.
CommMatrix communication_matrix(const Graph& g);

// zeta = max |eigenvalue| of B - (1/m)J for symmetric doubly stochastic B
// (row-major m*m). Power iteration on (B-J)^2 with re-deflation of the
// all-ones direction and residual stop 1e-10; cyclic Jacobi fallback for
// m <= 256 when the power iteration stalls. Throws NotSymmetric /
// NotStochastic (tolerance 1e-12 on sums and symmetry).
double spectral_gap(const std::vector<double>& B, int m);

nlohmann::json graph_to_json(const Graph& g);
Graph graph_from_json(const nlohmann::json& j);

}  // namespace pame::topology
