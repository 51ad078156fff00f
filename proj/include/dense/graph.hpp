#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace dense {

using NodeId = std::size_t;
using ClassId = std::size_t;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

/// Undirected simple graph on nodes 0..n-1.
///
/// Edges are stored once as (u, v) with u < v; neighbor lists are sorted.
/// Self-loops and duplicate edges are not representable.
class Graph {
 public:
  Graph() = default;

  // Builds a graph from an arbitrary edge list. Reversed duplicates collapse,
  // directed input is symmetrized. Throws std::invalid_argument on a self-loop
  // or an endpoint >= n.
  Graph(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& edges);

  std::size_t num_nodes() const noexcept { return adjacency_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const std::vector<std::pair<NodeId, NodeId>>& edges() const noexcept { return edges_; }
  const std::vector<NodeId>& neighbors(NodeId u) const { return adjacency_.at(u); }
  std::size_t degree(NodeId u) const { return adjacency_.at(u).size(); }

 private:
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<std::vector<NodeId>> adjacency_;
};

/// Per-node texts, optional ground-truth labels and the class vocabulary.
struct NodeTable {
  std::vector<std::string> texts;             // empty when the table carries no text
  std::optional<std::vector<ClassId>> labels;
  std::vector<std::string> class_names;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  void validate() const;
};

/// n x d matrix of finite node features.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(Matrix data);  // throws std::invalid_argument on NaN/Inf

  std::size_t rows() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(data_.cols()); }
  const Matrix& data() const noexcept { return data_; }
  auto row(NodeId i) const { return data_.row(static_cast<Eigen::Index>(i)); }

 private:
  Matrix data_;
};

// Lower-cased, whitespace-trimmed copy; used for class-name matching.
std::string fold_case(std::string_view s);

/// Reads an edge list: "u v" per line, '#' comments, optional "n <count>" header.
/// Self-loops are skipped; each skipped line appends a message to `warnings`
/// (when given) and is logged to stderr.
Graph load_edge_list(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void save_edge_list(const Graph& graph, const std::filesystem::path& path);

/// Reads line-delimited JSON records {"id", "text"?, "label"?} in id order.
NodeTable load_node_table(const std::filesystem::path& path, std::vector<std::string> class_names);
void save_node_table(const NodeTable& table, const std::filesystem::path& path);

/// Text matrix format: header "rows cols" followed by rows of floats.
Matrix read_text_matrix(const std::filesystem::path& path);
void write_text_matrix(const Matrix& m, const std::filesystem::path& path);

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingMatrix& x, const std::filesystem::path& path);

/// BFS hop counts from `core`; unreachable nodes hold kUnreachable.
std::vector<std::size_t> hop_distances(const Graph& graph, NodeId core);

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
SparseMatrix normalized_adjacency(const Graph& graph);

}  // namespace dense
