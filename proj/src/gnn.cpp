#include "dense/gnn.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dense/error.hpp"
#include "dense/rng.hpp"

namespace dense {
namespace {

Matrix glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
  }
  return w;
}

void check_shapes(const GcnParams& params, const GcnInput& input) {
  if (input.a_hat.rows() != input.x.rows() || input.a_hat.cols() != input.x.rows()) {
    throw ConfigError("adjacency is not n x n for the feature matrix");
  }
  if (params.w1.rows() != input.x.cols()) {
    throw ConfigError("W1 expects " + std::to_string(params.w1.rows()) + " input features, got " +
                      std::to_string(input.x.cols()));
  }
  if (params.b1.size() != params.w1.cols() || params.w2.rows() != params.w1.cols() ||
      params.b2.size() != params.w2.cols()) {
    throw ConfigError("inconsistent GCN parameter shapes");
  }
}

// Hidden activations of a single node from the cached A_hat * X row.
Vector hidden_row(const GcnParams& params, const GcnInput& input, NodeId r, Vector* pre_out = nullptr) {
  Vector pre = (input.ax.row(static_cast<Eigen::Index>(r)) * params.w1).transpose() + params.b1;
  if (pre_out) *pre_out = pre;
  return pre.cwiseMax(0.0);
}

}  // namespace

std::size_t GcnParams::num_params() const noexcept {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

Vector GcnParams::flatten() const {
  Vector out(static_cast<Eigen::Index>(num_params()));
  Eigen::Index o = 0;
  out.segment(o, w1.size()) = Eigen::Map<const Vector>(w1.data(), w1.size());
  o += w1.size();
  out.segment(o, b1.size()) = b1;
  o += b1.size();
  out.segment(o, w2.size()) = Eigen::Map<const Vector>(w2.data(), w2.size());
  o += w2.size();
  out.segment(o, b2.size()) = b2;
  return out;
}

void GcnParams::assign(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != num_params()) throw ConfigError("flat parameter size mismatch");
  Eigen::Index o = 0;
  Eigen::Map<Vector>(w1.data(), w1.size()) = flat.segment(o, w1.size());
  o += w1.size();
  b1 = flat.segment(o, b1.size());
  o += b1.size();
  Eigen::Map<Vector>(w2.data(), w2.size()) = flat.segment(o, w2.size());
  o += w2.size();
  b2 = flat.segment(o, b2.size());
}

GcnParams GcnParams::zeros(std::size_t d, std::size_t h, std::size_t c) {
  return {Matrix::Zero(d, h), Vector::Zero(h), Matrix::Zero(h, c), Vector::Zero(c)};
}

bool GcnParams::operator==(const GcnParams& o) const {
  return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows() &&
         w2.cols() == o.w2.cols() && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
}

GcnInput::GcnInput(SparseMatrix a_hat_in, Matrix x_in)
    : a_hat(std::move(a_hat_in)), x(std::move(x_in)), ax(a_hat * x) {}

GcnParams init_params(std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed) {
  if (d < 1 || h < 1 || c < 1) throw ConfigError("GCN dimensions must be >= 1");
  Rng rng = make_stream(seed, 0, 0x67636e);  // "gcn"
  GcnParams p;
  p.w1 = glorot(d, h, rng);
  p.b1 = Vector::Zero(h);
  p.w2 = glorot(h, c, rng);
  p.b2 = Vector::Zero(c);
  return p;
}

Vector softmax_row(const Eigen::Ref<const Vector>& z) {
  Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) p.row(i) = softmax_row(z.row(i).transpose()).transpose();
  return p;
}

ForwardTrace forward(const GcnParams& params, const GcnInput& input) {
  check_shapes(params, input);
  ForwardTrace t;
  t.h_pre = input.ax * params.w1;
  t.h_pre.rowwise() += params.b1.transpose();
  t.h = t.h_pre.cwiseMax(0.0);
  t.ah = input.a_hat * t.h;
  t.z = t.ah * params.w2;
  t.z.rowwise() += params.b2.transpose();
  t.p = softmax_rows(t.z);
  return t;
}

ForwardTrace forward(const GcnParams& params, const SparseMatrix& a_hat, const EmbeddingMatrix& x) {
  return forward(params, GcnInput(a_hat, x.data()));
}

GcnParams backward(const GcnParams& params, const GcnInput& input, const ForwardTrace& trace, const Matrix& dz) {
  check_shapes(params, input);
  if (trace.z.rows() != input.x.rows() || trace.h_pre.cols() != params.w1.cols()) {
    throw ConfigError("forward trace does not match the inputs");
  }
  if (dz.rows() != trace.z.rows() || dz.cols() != trace.z.cols()) throw ConfigError("dZ shape mismatch");
  GcnParams g;
  g.w2 = trace.ah.transpose() * dz;
  g.b2 = dz.colwise().sum().transpose();
  // A_hat is symmetric, so A_hat^T * (dZ W2^T) = A_hat * (dZ W2^T).
  Matrix dh = input.a_hat * (dz * params.w2.transpose());
  dh.array() *= (trace.h_pre.array() > 0.0).cast<double>();
  g.w1 = input.ax.transpose() * dh;
  g.b1 = dh.colwise().sum().transpose();
  return g;
}

Matrix probe_logits(const GcnParams& params, const GcnInput& input, std::span<const NodeId> rows) {
  check_shapes(params, input);
  Matrix z(static_cast<Eigen::Index>(rows.size()), params.w2.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    Vector ah = Vector::Zero(params.w1.cols());
    for (SparseMatrix::InnerIterator it(input.a_hat, static_cast<Eigen::Index>(rows[k])); it; ++it) {
      ah += it.value() * hidden_row(params, input, static_cast<NodeId>(it.col()));
    }
    z.row(static_cast<Eigen::Index>(k)) = (params.w2.transpose() * ah + params.b2).transpose();
  }
  return z;
}

Matrix logit_jacobian(const GcnParams& params, const GcnInput& input, std::span<const NodeId> rows) {
  check_shapes(params, input);
  const auto d = params.w1.rows();
  const auto h = params.w1.cols();
  const auto c_count = params.w2.cols();
  const Eigen::Index off_b1 = d * h;
  const Eigen::Index off_w2 = off_b1 + h;
  const Eigen::Index off_b2 = off_w2 + h * c_count;
  Matrix jac = Matrix::Zero(static_cast<Eigen::Index>(rows.size()) * c_count,
                            static_cast<Eigen::Index>(params.num_params()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    Vector ah = Vector::Zero(h);
    std::vector<std::pair<double, NodeId>> support;
    std::vector<Vector> masks;
    for (SparseMatrix::InnerIterator it(input.a_hat, static_cast<Eigen::Index>(rows[k])); it; ++it) {
      Vector pre;
      ah += it.value() * hidden_row(params, input, static_cast<NodeId>(it.col()), &pre);
      support.emplace_back(it.value(), static_cast<NodeId>(it.col()));
      masks.push_back((pre.array() > 0.0).cast<double>().matrix());
    }
    for (Eigen::Index c = 0; c < c_count; ++c) {
      auto row = jac.row(static_cast<Eigen::Index>(k) * c_count + c);
      Matrix dw1 = Matrix::Zero(d, h);
      Vector db1 = Vector::Zero(h);
      for (std::size_t s = 0; s < support.size(); ++s) {
        const auto [a, r] = support[s];
        const Vector gate = a * masks[s].cwiseProduct(params.w2.col(c));
        dw1.noalias() += input.ax.row(static_cast<Eigen::Index>(r)).transpose() * gate.transpose();
        db1 += gate;
      }
      row.segment(0, d * h) = Eigen::Map<const Vector>(dw1.data(), d * h).transpose();
      row.segment(off_b1, h) = db1.transpose();
      row.segment(off_w2 + c * h, h) = ah.transpose();
      row(off_b2 + c) = 1.0;
    }
  }
  return jac;
}

LogitDerivativeBounds estimate_logit_bounds(const GcnParams& params, const GcnInput& input,
                                            std::span<const NodeId> rows, double step) {
  LogitDerivativeBounds out;
  const Vector theta = params.flatten();
  GcnParams probe = params;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    Vector t = theta;
    t(j) = theta(j) + step;
    probe.assign(t);
    const Matrix z_plus = probe_logits(probe, input, rows);
    const Matrix j_plus = logit_jacobian(probe, input, rows);
    t(j) = theta(j) - step;
    probe.assign(t);
    const Matrix z_minus = probe_logits(probe, input, rows);
    const Matrix j_minus = logit_jacobian(probe, input, rows);
    out.g = std::max(out.g, ((z_plus - z_minus) / (2.0 * step)).cwiseAbs().maxCoeff());
    out.m = std::max(out.m, ((j_plus - j_minus) / (2.0 * step)).cwiseAbs().maxCoeff());
  }
  return out;
}

void save_params(const GcnParams& params, std::uint64_t seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_matrix(params.w1, dir / "W1.txt");
  write_text_matrix(params.b1.transpose(), dir / "b1.txt");
  write_text_matrix(params.w2, dir / "W2.txt");
  write_text_matrix(params.b2.transpose(), dir / "b2.txt");
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["input_dim"] = params.input_dim();
  manifest["hidden_dim"] = params.hidden_dim();
  manifest["num_classes"] = params.num_classes();
  manifest["tensors"] = {
      {"W1", {{"file", "W1.txt"}, {"rows", params.w1.rows()}, {"cols", params.w1.cols()}}},
      {"b1", {{"file", "b1.txt"}, {"rows", 1}, {"cols", params.b1.size()}}},
      {"W2", {{"file", "W2.txt"}, {"rows", params.w2.rows()}, {"cols", params.w2.cols()}}},
      {"b2", {{"file", "b2.txt"}, {"rows", 1}, {"cols", params.b2.size()}}},
  };
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

GcnParams load_params(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open " + (dir / "manifest.json").string());
  auto manifest = nlohmann::json::parse(in, nullptr, false);
  if (manifest.is_discarded()) throw ParseError("invalid parameter manifest");
  auto tensor = [&](const char* name) {
    const auto& spec = manifest.at("tensors").at(name);
    Matrix m = read_text_matrix(dir / spec.at("file").get<std::string>());
    if (m.rows() != spec.at("rows").get<Eigen::Index>() || m.cols() != spec.at("cols").get<Eigen::Index>()) {
      throw ParseError(std::string("tensor ") + name + " does not match the manifest shape");
    }
    return m;
  };
  GcnParams p;
  p.w1 = tensor("W1");
  p.b1 = tensor("b1").row(0).transpose();
  p.w2 = tensor("W2");
  p.b2 = tensor("b2").row(0).transpose();
  if (p.w2.rows() != p.w1.cols()) throw ParseError("W1 and W2 disagree on the hidden width");
  return p;
}

}  // namespace dense
