#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>
#include <vector>

#include "poserec/tensor.hpp"

namespace poserec {

inline constexpr std::size_t kLandmarks = 33;

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

// The canonical 33-landmark BlazePose connection set. Overridable through a
// plain-text edge file (one "i j" pair per line, 0-based).
inline const EdgeList& blazepose_edges() {
  static const EdgeList edges = {
      {0, 1},   {1, 2},   {2, 3},   {3, 7},   {0, 4},   {4, 5},   {5, 6},
      {6, 8},   {9, 10},  {11, 12}, {11, 13}, {13, 15}, {15, 17}, {15, 19},
      {15, 21}, {17, 19}, {12, 14}, {14, 16}, {16, 18}, {16, 20}, {16, 22},
      {18, 20}, {11, 23}, {12, 24}, {23, 24}, {23, 25}, {24, 26}, {25, 27},
      {26, 28}, {27, 29}, {28, 30}, {29, 31}, {30, 32}, {27, 31}, {28, 32},
  };
  return edges;
}

// Symmetrically normalized adjacency with self-loops:
//   A = D^{-1/2} (E + I) D^{-1/2},  D = rowsum(E + I).
inline Tensor build_adjacency(const EdgeList& edges, std::size_t nodes = kLandmarks) {
  Tensor e({nodes, nodes});
  for (std::size_t i = 0; i < nodes; ++i) e.at(i, i) = 1.0;
  for (const auto& [a, b] : edges) {
    if (a >= nodes || b >= nodes) {
      throw DataError("skeleton: edge (" + std::to_string(a) + "," + std::to_string(b) +
                      ") out of range for " + std::to_string(nodes) + " nodes");
    }
    e.at(a, b) = 1.0;
    e.at(b, a) = 1.0;
  }
  std::vector<double> inv_sqrt_deg(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < nodes; ++j) deg += e.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);  // deg >= 1 from the self-loop
  }
  Tensor adj({nodes, nodes});
  for (std::size_t i = 0; i < nodes; ++i) {
    for (std::size_t j = 0; j < nodes; ++j) {
      adj.at(i, j) = inv_sqrt_deg[i] * e.at(i, j) * inv_sqrt_deg[j];
    }
  }
  return adj;
}

// Row-stochastic variant D^{-1} (E + I); internal consistency check only.
inline Tensor build_adjacency_row_normalized(const EdgeList& edges,
                                             std::size_t nodes = kLandmarks) {
  Tensor e({nodes, nodes});
  for (std::size_t i = 0; i < nodes; ++i) e.at(i, i) = 1.0;
  for (const auto& [a, b] : edges) {
    if (a >= nodes || b >= nodes) {
      throw DataError("skeleton: edge index out of range");
    }
    e.at(a, b) = 1.0;
    e.at(b, a) = 1.0;
  }
  for (std::size_t i = 0; i < nodes; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < nodes; ++j) deg += e.at(i, j);
    for (std::size_t j = 0; j < nodes; ++j) e.at(i, j) /= deg;
  }
  return e;
}

inline EdgeList load_edge_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("skeleton: cannot open edge file " + path.string());
  EdgeList edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    long long a = -1, b = -1;
    if (!(is >> a >> b) || a < 0 || b < 0) {
      throw DataError("skeleton: bad edge at " + path.string() + ":" + std::to_string(lineno));
    }
    edges.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
  }
  return edges;
}

inline void save_edge_list(const std::filesystem::path& path, const EdgeList& edges) {
  std::ofstream out(path);
  if (!out) throw DataError("skeleton: cannot write edge file " + path.string());
  for (const auto& [a, b] : edges) out << a << " " << b << "\n";
}

}  // namespace poserec
