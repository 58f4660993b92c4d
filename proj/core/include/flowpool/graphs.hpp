#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace flowpool {

// One classification sample: undirected simple graph with categorical node
// labels (atom types) and a class label.
struct LabeledGraph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;  // deduplicated, u < v, no self-loops
  std::vector<int> node_labels;
  int class_label = 0;
};

struct GraphDataset {
  std::vector<LabeledGraph> graphs;
  int num_node_label_kinds = 0;
  int num_classes = 0;
  std::string name;
};

// Reads the TU plain-text layout from a directory: <DS>_A.txt (1-based
// "u, v" edge lines), <DS>_graph_indicator.txt, <DS>_graph_labels.txt,
// <DS>_node_labels.txt. Edges are deduplicated to undirected pairs; graph
// and node labels are remapped to dense 0-based ranges. Malformed input is
// reported with file and line.
GraphDataset parse_tu_dataset(const std::filesystem::path& directory);

// Inverse of the parser, for round-trip checks and fixture generation.
void write_tu_dataset(const GraphDataset& ds,
                      const std::filesystem::path& directory);

// Exact one-hot rows from the categorical node labels.
Eigen::MatrixXd one_hot_features(const LabeledGraph& g, int kinds);

// S^K F with S = D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
// K = 0 returns F unchanged.
Eigen::MatrixXd sgc_propagate(const LabeledGraph& g, const Eigen::MatrixXd& F,
                              int K);

// Keep the K rows with the largest last-channel value (descending, ties by
// original index), zero-padding when fewer than K rows exist.
Eigen::MatrixXd sortpool_baseline(const Eigen::MatrixXd& Y, int K);

}  // namespace flowpool
