#include "flowpool/graphs.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace flowpool {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void parse_fail(const fs::path& file, std::size_t line,
                             const std::string& what) {
  throw std::runtime_error(file.string() + ":" + std::to_string(line) + ": " +
                           what);
}

long long parse_int(const std::string& token, const fs::path& file,
                    std::size_t line) {
  std::size_t pos = 0;
  long long value = 0;
  try {
    value = std::stoll(token, &pos);
  } catch (const std::exception&) {
    parse_fail(file, line, "non-integer token '" + token + "'");
  }
  if (pos != token.size())
    parse_fail(file, line, "non-integer token '" + token + "'");
  return value;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("missing file: " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  // trailing blank lines are tolerated
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

// The TU layout prefixes every file with the dataset name; recover it from
// whichever *_A.txt is present.
std::pair<std::string, fs::path> find_prefix(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 6 && name.ends_with("_A.txt"))
      return {name.substr(0, name.size() - 6), entry.path()};
  }
  throw std::runtime_error("missing file: no *_A.txt under " + dir.string());
}

std::vector<int> densify(std::vector<long long>& raw) {
  std::map<long long, int> remap;
  for (long long v : raw) remap.emplace(v, 0);
  int next = 0;
  for (auto& [k, v] : remap) v = next++;
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = remap[raw[i]];
  return out;
}

}  // namespace

GraphDataset parse_tu_dataset(const fs::path& directory) {
  const auto [prefix, a_file] = find_prefix(directory);
  const fs::path ind_file = directory / (prefix + "_graph_indicator.txt");
  const fs::path glab_file = directory / (prefix + "_graph_labels.txt");
  const fs::path nlab_file = directory / (prefix + "_node_labels.txt");

  const auto ind_lines = read_lines(ind_file);
  const auto glab_lines = read_lines(glab_file);
  const auto nlab_lines = read_lines(nlab_file);
  const auto a_lines = read_lines(a_file);

  const std::size_t num_nodes = ind_lines.size();
  const std::size_t num_graphs = glab_lines.size();
  if (nlab_lines.size() != num_nodes)
    parse_fail(nlab_file, nlab_lines.size(),
               "expected one node label per node (" + std::to_string(num_nodes) +
                   " nodes)");

  // graph assignment per node, 1-based graph ids
  std::vector<int> node_graph(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    const long long g = parse_int(trim(ind_lines[i]), ind_file, i + 1);
    if (g < 1 || static_cast<std::size_t>(g) > num_graphs)
      parse_fail(ind_file, i + 1,
                 "graph id " + std::to_string(g) + " out of range [1, " +
                     std::to_string(num_graphs) + "]");
    node_graph[i] = static_cast<int>(g - 1);
  }

  std::vector<long long> raw_node_labels(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i)
    raw_node_labels[i] = parse_int(trim(nlab_lines[i]), nlab_file, i + 1);
  std::vector<long long> raw_graph_labels(num_graphs);
  for (std::size_t i = 0; i < num_graphs; ++i)
    raw_graph_labels[i] = parse_int(trim(glab_lines[i]), glab_file, i + 1);

  const std::vector<int> node_labels = densify(raw_node_labels);
  const std::vector<int> graph_labels = densify(raw_graph_labels);

  GraphDataset ds;
  ds.name = prefix;
  ds.graphs.resize(num_graphs);
  ds.num_node_label_kinds =
      node_labels.empty() ? 0 : *std::max_element(node_labels.begin(), node_labels.end()) + 1;
  ds.num_classes =
      graph_labels.empty() ? 0 : *std::max_element(graph_labels.begin(), graph_labels.end()) + 1;

  // nodes are consecutive per graph; record each graph's base offset
  std::vector<int> offset(num_graphs, -1);
  std::vector<int> counts(num_graphs, 0);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    const int g = node_graph[i];
    if (offset[g] < 0) offset[g] = static_cast<int>(i);
    if (counts[g] > 0 && node_graph[i - 1] != g)
      parse_fail(ind_file, i + 1, "nodes of graph " + std::to_string(g + 1) +
                                      " are not consecutive");
    ++counts[g];
  }
  for (std::size_t g = 0; g < num_graphs; ++g) {
    if (counts[g] == 0)
      parse_fail(ind_file, num_nodes,
                 "graph " + std::to_string(g + 1) + " has no nodes");
    ds.graphs[g].num_nodes = counts[g];
    ds.graphs[g].class_label = graph_labels[g];
    ds.graphs[g].node_labels.assign(node_labels.begin() + offset[g],
                                    node_labels.begin() + offset[g] + counts[g]);
  }

  std::vector<std::set<std::pair<int, int>>> edge_sets(num_graphs);
  for (std::size_t i = 0; i < a_lines.size(); ++i) {
    const std::string line = trim(a_lines[i]);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      parse_fail(a_file, i + 1, "expected 'u, v' edge line");
    const long long u = parse_int(trim(line.substr(0, comma)), a_file, i + 1);
    const long long v = parse_int(trim(line.substr(comma + 1)), a_file, i + 1);
    if (u < 1 || v < 1 || static_cast<std::size_t>(u) > num_nodes ||
        static_cast<std::size_t>(v) > num_nodes)
      parse_fail(a_file, i + 1, "node index out of range [1, " +
                                    std::to_string(num_nodes) + "]");
    if (u == v) continue;  // self-loops are added during propagation, not stored
    const int gu = node_graph[u - 1];
    const int gv = node_graph[v - 1];
    if (gu != gv)
      parse_fail(a_file, i + 1, "edge crosses graphs " + std::to_string(gu + 1) +
                                    " and " + std::to_string(gv + 1));
    const int lu = static_cast<int>(u - 1) - offset[gu];
    const int lv = static_cast<int>(v - 1) - offset[gu];
    edge_sets[gu].insert({std::min(lu, lv), std::max(lu, lv)});
  }
  for (std::size_t g = 0; g < num_graphs; ++g)
    ds.graphs[g].edges.assign(edge_sets[g].begin(), edge_sets[g].end());
  return ds;
}

void write_tu_dataset(const GraphDataset& ds, const fs::path& directory) {
  fs::create_directories(directory);
  std::ofstream a(directory / (ds.name + "_A.txt"));
  std::ofstream ind(directory / (ds.name + "_graph_indicator.txt"));
  std::ofstream glab(directory / (ds.name + "_graph_labels.txt"));
  std::ofstream nlab(directory / (ds.name + "_node_labels.txt"));
  int offset = 0;
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
    const LabeledGraph& graph = ds.graphs[g];
    for (int v = 0; v < graph.num_nodes; ++v) {
      ind << (g + 1) << "\n";
      nlab << graph.node_labels[v] << "\n";
    }
    for (const auto& [u, v] : graph.edges) {
      a << (offset + u + 1) << ", " << (offset + v + 1) << "\n";
      a << (offset + v + 1) << ", " << (offset + u + 1) << "\n";
    }
    glab << graph.class_label << "\n";
    offset += graph.num_nodes;
  }
}

Eigen::MatrixXd one_hot_features(const LabeledGraph& g, int kinds) {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(g.num_nodes, kinds);
  for (int v = 0; v < g.num_nodes; ++v) {
    const int label = g.node_labels[v];
    if (label < 0 || label >= kinds)
      throw std::invalid_argument("one_hot_features: label " +
                                  std::to_string(label) + " out of range");
    F(v, label) = 1.0;
  }
  return F;
}

Eigen::MatrixXd sgc_propagate(const LabeledGraph& g, const Eigen::MatrixXd& F,
                              int K) {
  if (F.rows() != g.num_nodes)
    throw std::invalid_argument("sgc_propagate: feature rows != num_nodes");
  if (K < 0) throw std::invalid_argument("sgc_propagate: K must be >= 0");
  if (K == 0) return F;

  const int n = g.num_nodes;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);  // A + I
  for (const auto& [u, v] : g.edges) {
    A(u, v) = 1.0;
    A(v, u) = 1.0;
  }
  const Eigen::VectorXd inv_sqrt_deg =
      A.rowwise().sum().array().rsqrt().matrix();
  const Eigen::MatrixXd S =
      inv_sqrt_deg.asDiagonal() * A * inv_sqrt_deg.asDiagonal();

  Eigen::MatrixXd out = F;
  for (int k = 0; k < K; ++k) out = S * out;
  return out;
}

Eigen::MatrixXd sortpool_baseline(const Eigen::MatrixXd& Y, int K) {
  if (Y.cols() < 1)
    throw std::invalid_argument("sortpool_baseline: need d >= 1");
  const Eigen::Index n = Y.rows();
  const Eigen::Index last = Y.cols() - 1;
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     return Y(a, last) > Y(b, last);
                   });
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(K, Y.cols());
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(K, n); ++i)
    out.row(i) = Y.row(order[i]);
  return out;
}

}  // namespace flowpool
