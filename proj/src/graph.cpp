#include "dense/graph.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dense/error.hpp"

namespace dense {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::optional<std::size_t> parse_index(std::string_view tok) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Graph::Graph(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& edges) : adjacency_(n) {
  std::set<std::pair<NodeId, NodeId>> unique;
  for (auto [u, v] : edges) {
    if (u >= n || v >= n) {
      throw std::invalid_argument("edge (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") has endpoint >= n=" + std::to_string(n));
    }
    if (u == v) throw std::invalid_argument("self-loop on node " + std::to_string(u));
    unique.emplace(std::min(u, v), std::max(u, v));
  }
  edges_.assign(unique.begin(), unique.end());
  for (auto [u, v] : edges_) {
    adjacency_[u].push_back(v);
    adjacency_[v].push_back(u);
  }
  for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
}

void NodeTable::validate() const {
  std::set<std::string> seen;
  for (const auto& name : class_names) {
    if (!seen.insert(fold_case(name)).second) {
      throw ConfigError("duplicate class name '" + name + "'");
    }
  }
  if (labels) {
    for (std::size_t i = 0; i < labels->size(); ++i) {
      if ((*labels)[i] >= class_names.size()) {
        throw ConfigError("label of node " + std::to_string(i) + " out of range");
      }
    }
    if (!texts.empty() && texts.size() != labels->size()) {
      throw ConfigError("texts and labels disagree on node count");
    }
  }
}

EmbeddingMatrix::EmbeddingMatrix(Matrix data) : data_(std::move(data)) {
  for (Eigen::Index i = 0; i < data_.rows(); ++i) {
    for (Eigen::Index j = 0; j < data_.cols(); ++j) {
      if (!std::isfinite(data_(i, j))) {
        throw std::invalid_argument("non-finite embedding entry at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      }
    }
  }
}

std::string fold_case(std::string_view s) {
  std::string out(trim(s));
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

Graph load_edge_list(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  auto in = open_input(path);
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::optional<std::size_t> declared_n;
  std::size_t max_index = 0;
  bool any_index = false;
  bool any_content = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto toks = split_ws(body);
    if (!any_content && toks.size() == 2 && toks[0] == "n") {
      declared_n = parse_index(toks[1]);
      if (!declared_n) throw ParseError("malformed node-count header", lineno);
      any_content = true;
      continue;
    }
    any_content = true;
    if (toks.size() != 2) throw ParseError("expected two node indices", lineno);
    auto u = parse_index(toks[0]);
    auto v = parse_index(toks[1]);
    if (!u || !v) throw ParseError("node index is not a non-negative integer", lineno);
    max_index = any_index ? std::max({max_index, *u, *v}) : std::max(*u, *v);
    any_index = true;
    if (*u == *v) {
      std::string msg = path.string() + ":" + std::to_string(lineno) + ": skipping self-loop on node " +
                        std::to_string(*u);
      std::cerr << "warning: " << msg << '\n';
      if (warnings) warnings->push_back(std::move(msg));
      continue;
    }
    edges.emplace_back(*u, *v);
  }
  if (!any_content) throw ParseError("empty edge list " + path.string());
  std::size_t n = any_index ? max_index + 1 : 0;
  if (declared_n) {
    if (any_index && *declared_n <= max_index) {
      throw ParseError("header declares n=" + std::to_string(*declared_n) + " but index " +
                       std::to_string(max_index) + " appears");
    }
    n = *declared_n;
  }
  return Graph(n, edges);
}

void save_edge_list(const Graph& graph, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "n " << graph.num_nodes() << '\n';
  for (auto [u, v] : graph.edges()) out << u << ' ' << v << '\n';
}

NodeTable load_node_table(const std::filesystem::path& path, std::vector<std::string> class_names) {
  NodeTable table;
  table.class_names = std::move(class_names);
  table.validate();
  std::vector<std::string> folded;
  for (const auto& c : table.class_names) folded.push_back(fold_case(c));

  auto in = open_input(path);
  std::vector<ClassId> labels;
  std::size_t labeled = 0;
  std::string line;
  std::size_t lineno = 0;
  std::size_t expected_id = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw ParseError("invalid JSON record", lineno);
    if (!rec.contains("id") || !rec["id"].is_number_unsigned()) {
      throw ParseError("record lacks a non-negative integer id", lineno);
    }
    auto id = rec["id"].get<std::size_t>();
    if (id != expected_id) {
      throw ParseError("id gap: expected id " + std::to_string(expected_id) + ", found " + std::to_string(id),
                       lineno);
    }
    ++expected_id;
    std::string text;
    if (rec.contains("text") && rec["text"].is_string()) text = rec["text"].get<std::string>();
    table.texts.push_back(std::move(text));
    ClassId label = 0;
    if (rec.contains("label") && rec["label"].is_string()) {
      auto want = fold_case(rec["label"].get<std::string>());
      auto it = std::find(folded.begin(), folded.end(), want);
      if (it == folded.end()) {
        throw ParseError("record id " + std::to_string(id) + ": unknown class '" +
                             rec["label"].get<std::string>() + "'",
                         lineno);
      }
      label = static_cast<ClassId>(it - folded.begin());
      ++labeled;
    }
    labels.push_back(label);
  }
  if (labeled > 0) {
    if (labeled != labels.size()) throw ParseError("labels present on some records but not all");
    table.labels = std::move(labels);
  }
  return table;
}

void save_node_table(const NodeTable& table, const std::filesystem::path& path) {
  auto out = open_output(path);
  const std::size_t n = table.labels ? table.labels->size() : table.texts.size();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json rec;
    rec["id"] = i;
    rec["text"] = i < table.texts.size() ? table.texts[i] : std::string();
    if (table.labels) rec["label"] = table.class_names.at((*table.labels)[i]);
    out << rec.dump() << '\n';
  }
}

Matrix read_text_matrix(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::pair<std::size_t, std::size_t>> shape;
  while (!shape && std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    auto r = toks.size() == 2 ? parse_index(toks[0]) : std::nullopt;
    auto c = toks.size() == 2 ? parse_index(toks[1]) : std::nullopt;
    if (!r || !c) throw ParseError("expected header 'rows cols'", lineno);
    shape.emplace(*r, *c);
  }
  if (!shape) throw ParseError("empty matrix file " + path.string());
  const auto [rows, cols] = *shape;
  Matrix m(rows, cols);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (row >= rows) {
      throw ParseError("expected " + std::to_string(rows) + " data rows, found more", lineno);
    }
    if (toks.size() != cols) {
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(cols) + " values, found " +
                           std::to_string(toks.size()),
                       lineno);
    }
    for (std::size_t j = 0; j < cols; ++j) {
      double v = 0.0;
      auto tok = toks[j];
      if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParseError("invalid number '" + std::string(toks[j]) + "' at row " + std::to_string(row) +
                             ", column " + std::to_string(j),
                         lineno);
      }
      if (!std::isfinite(v)) {
        throw ParseError("non-finite value '" + std::string(toks[j]) + "' at row " + std::to_string(row) +
                             ", column " + std::to_string(j),
                         lineno);
      }
      m(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = v;
    }
    ++row;
  }
  if (row != rows) {
    throw ParseError("expected " + std::to_string(rows) + " data rows, found " + std::to_string(row));
  }
  return m;
}

void write_text_matrix(const Matrix& m, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return EmbeddingMatrix(read_text_matrix(path));
}

void save_embeddings(const EmbeddingMatrix& x, const std::filesystem::path& path) {
  write_text_matrix(x.data(), path);
}

std::vector<std::size_t> hop_distances(const Graph& graph, NodeId core) {
  if (core >= graph.num_nodes()) {
    throw std::out_of_range("core " + std::to_string(core) + " out of range for n=" +
                            std::to_string(graph.num_nodes()));
  }
  std::vector<std::size_t> dist(graph.num_nodes(), kUnreachable);
  std::deque<NodeId> queue{core};
  dist[core] = 0;
  while (!queue.empty()) {
    NodeId u = queue.front();
    queue.pop_front();
    for (NodeId v : graph.neighbors(u)) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

SparseMatrix normalized_adjacency(const Graph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(graph.degree(i) + 1));
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n + 2 * graph.num_edges());
  for (std::size_t i = 0; i < n; ++i) {
    triplets.emplace_back(i, i, inv_sqrt_deg[i] * inv_sqrt_deg[i]);
  }
  for (auto [u, v] : graph.edges()) {
    const double w = inv_sqrt_deg[u] * inv_sqrt_deg[v];
    triplets.emplace_back(u, v, w);
    triplets.emplace_back(v, u, w);
  }
  SparseMatrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.setFromTriplets(triplets.begin(), triplets.end());
  a.makeCompressed();
  return a;
}

}  // namespace dense
