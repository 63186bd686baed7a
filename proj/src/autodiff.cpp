#include "ftrack/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "ftrack/error.hpp"

namespace ftrack::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require(bool ok, std::string_view op, const std::string& detail) {
  if (!ok) throw ShapeError(fmt::format("{}: {}", op, detail));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

double sorted_sum(std::span<const double> xs) {
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw ShapeError(fmt::format("tensor data length {} does not match shape {}", data_.size(), shape_str(shape_)));
  }
}

Tensor Tensor::vector(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError(fmt::format("item() on tensor of shape {}", shape_str(shape_)));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::accumulate(const Tensor& other, double scale) {
  if (other.size() != size()) throw ShapeError("accumulate: size mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

std::string shape_str(const std::vector<std::size_t>& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw Error(fmt::format("duplicate parameter '{}'", name));
  index_.emplace(name, params_.size());
  Tensor grad(init.shape());
  params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad)});
  return params_.back();
}

Parameter& ParameterSet::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw Error(fmt::format("unknown parameter '{}'", name));
  return params_[it->second];
}

const Parameter& ParameterSet::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw Error("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
}

nlohmann::ordered_json ParameterSet::to_json() const {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& p : params_) {
    arr.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"data", p.value.data()}});
  }
  return arr;
}

void ParameterSet::load_json(const nlohmann::ordered_json& j) {
  if (!j.is_array() || j.size() != params_.size()) {
    throw CheckpointMismatch(fmt::format("checkpoint holds {} tensors, model expects {}", j.size(), params_.size()));
  }
  for (const auto& pj : j) {
    const auto name = pj.at("name").get<std::string>();
    if (!contains(name)) throw CheckpointMismatch(fmt::format("checkpoint tensor '{}' is not a model parameter", name));
    Parameter& p = at(name);
    auto shape = pj.at("shape").get<std::vector<std::size_t>>();
    if (shape != p.value.shape()) {
      throw CheckpointMismatch(fmt::format("tensor '{}' has shape {} in checkpoint, {} in model", name, shape_str(shape),
                                           shape_str(p.value.shape())));
    }
    p.value = Tensor(std::move(shape), pj.at("data").get<std::vector<double>>());
  }
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  if (p.grad.size() != p.value.size()) p.grad = Tensor(p.value.shape());
  nodes_.push_back(Node{{}, {}, {}, &p, true});
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var{id};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward fn) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.id].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : Backward{}, nullptr, needs});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor* Tape::grad_target(Var v) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return nullptr;
  if (n.param != nullptr) return &n.param->grad;
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Tape::backward(Var root, double seed) {
  if (value(root).size() != 1) {
    throw ShapeError(fmt::format("backward: root must hold one value, has shape {}", shape_str(value(root).shape())));
  }
  Tensor* g = grad_target(root);
  if (g == nullptr) return;
  (*g)[0] += seed;
  for (std::uint32_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.param != nullptr || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, Var{i});
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require(x.size() == y.size(), "add", fmt::format("{} vs {}", shape_str(x.shape()), shape_str(y.shape())));
  Tensor out = x;
  out.accumulate(y);
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(a)) ga->accumulate(g);
    if (Tensor* gb = t.grad_target(b)) gb->accumulate(g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require(x.size() == y.size(), "sub", fmt::format("{} vs {}", shape_str(x.shape()), shape_str(y.shape())));
  Tensor out = x;
  out.accumulate(y, -1.0);
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(a)) ga->accumulate(g);
    if (Tensor* gb = t.grad_target(b)) gb->accumulate(g, -1.0);
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require(x.size() == y.size(), "mul", fmt::format("{} vs {}", shape_str(x.shape()), shape_str(y.shape())));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (Tensor* ga = t.grad_target(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
    }
    if (Tensor* gb = t.grad_target(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
    }
  });
}

Var scale(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  for (auto& v : out.data()) v *= c;
  return t.record(std::move(out), {a}, [a, c](Tape& t, Var self) {
    if (Tensor* ga = t.grad_target(a)) ga->accumulate(t.grad(self), c);
  });
}

Var scale_by(Tape& t, Var a, Var s) {
  require(t.value(s).size() == 1, "scale_by", "scale must hold one value");
  const double c = t.value(s)[0];
  Tensor out = t.value(a);
  for (auto& v : out.data()) v *= c;
  return t.record(std::move(out), {a, s}, [a, s](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a);
    if (Tensor* ga = t.grad_target(a)) ga->accumulate(g, t.value(s)[0]);
    if (Tensor* gs = t.grad_target(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
      (*gs)[0] += acc;
    }
  });
}

Var add_scalar_var(Tape& t, Var a, Var s) {
  require(t.value(s).size() == 1, "add_scalar_var", "offset must hold one value");
  Tensor out = t.value(a);
  const double c = t.value(s)[0];
  for (auto& v : out.data()) v += c;
  return t.record(std::move(out), {a, s}, [a, s](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(a)) ga->accumulate(g);
    if (Tensor* gs = t.grad_target(s)) {
      double acc = 0.0;
      for (double v : g.data()) acc += v;
      (*gs)[0] += acc;
    }
  });
}

Var activate(Tape& t, Var a, Activation act) {
  if (act == Activation::kIdentity) return a;
  Tensor out = t.value(a);
  for (auto& v : out.data()) {
    switch (act) {
      case Activation::kTanh: v = std::tanh(v); break;
      case Activation::kSigmoid: v = stable_sigmoid(v); break;
      case Activation::kRelu: v = v > 0.0 ? v : 0.0; break;
      case Activation::kIdentity: break;
    }
  }
  return t.record(std::move(out), {a}, [a, act](Tape& t, Var self) {
    Tensor* ga = t.grad_target(a);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      switch (act) {
        case Activation::kTanh: d = 1.0 - y[i] * y[i]; break;
        case Activation::kSigmoid: d = y[i] * (1.0 - y[i]); break;
        case Activation::kRelu: d = y[i] > 0.0 ? 1.0 : 0.0; break;
        case Activation::kIdentity: d = 1.0; break;
      }
      (*ga)[i] += g[i] * d;
    }
  });
}

Var add_n(Tape& t, std::span<const Var> xs) {
  require(!xs.empty(), "add_n", "needs at least one input");
  Tensor out = t.value(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require(t.value(xs[k]).size() == out.size(), "add_n", "size mismatch");
    out.accumulate(t.value(xs[k]));
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return t.record(std::move(out), parents, [parents](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    for (Var p : parents) {
      if (Tensor* gp = t.grad_target(p)) gp->accumulate(g);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

Var affine_impl(Tape& t, Var w, Var x, const Var* b, std::string_view op) {
  const Tensor& W = t.value(w);
  const Tensor& X = t.value(x);
  require(W.rank() == 2, op, fmt::format("weight must be a matrix, got {}", shape_str(W.shape())));
  const std::size_t R = W.dim(0), C = W.dim(1);
  require(X.size() == C, op, fmt::format("weight {} cannot multiply input of size {}", shape_str(W.shape()), X.size()));
  Tensor out({R});
  if (b != nullptr) {
    const Tensor& B = t.value(*b);
    require(B.size() == R, op, fmt::format("bias of size {} for output of size {}", B.size(), R));
    std::copy(B.data().begin(), B.data().end(), out.ptr());
  }
  const double* wp = W.ptr();
  const double* xp = X.ptr();
  for (std::size_t r = 0; r < R; ++r) {
    double acc = 0.0;
    const double* wr = wp + r * C;
    for (std::size_t c = 0; c < C; ++c) acc += wr[c] * xp[c];
    out[r] += acc;
  }
  std::vector<Var> parents{w, x};
  if (b != nullptr) parents.push_back(*b);
  const Var bias = b != nullptr ? *b : Var{};
  return t.record(std::move(out), parents, [w, x, bias](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& W = t.value(w);
    const Tensor& X = t.value(x);
    const std::size_t R = W.dim(0), C = W.dim(1);
    if (Tensor* gw = t.grad_target(w)) {
      double* gp = gw->ptr();
      for (std::size_t r = 0; r < R; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        double* row = gp + r * C;
        for (std::size_t c = 0; c < C; ++c) row[c] += gr * X[c];
      }
    }
    if (Tensor* gx = t.grad_target(x)) {
      const double* wp = W.ptr();
      double* gp = gx->ptr();
      for (std::size_t r = 0; r < R; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* wr = wp + r * C;
        for (std::size_t c = 0; c < C; ++c) gp[c] += gr * wr[c];
      }
    }
    if (bias.valid()) {
      if (Tensor* gb = t.grad_target(bias)) gb->accumulate(g);
    }
  });
}

}  // namespace

Var matvec(Tape& t, Var w, Var x) { return affine_impl(t, w, x, nullptr, "matvec"); }

Var affine(Tape& t, Var w, Var x, Var b) { return affine_impl(t, w, x, &b, "affine"); }

Var dense(Tape& t, Var x, Var w, Var b, Activation act) { return activate(t, affine(t, w, x, b), act); }

Var matmul_nt(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "matmul_nt",
          fmt::format("{} vs {}", shape_str(A.shape()), shape_str(B.shape())));
  const std::size_t N = A.dim(0), M = B.dim(0), D = A.dim(1);
  Tensor out({N, M});
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < D; ++d) acc += A.at(i, d) * B.at(j, d);
      out.at(i, j) = acc;
    }
  }
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    const std::size_t N = A.dim(0), M = B.dim(0), D = A.dim(1);
    if (Tensor* ga = t.grad_target(a)) {
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < M; ++j)
          for (std::size_t d = 0; d < D; ++d) ga->at(i, d) += g.at(i, j) * B.at(j, d);
    }
    if (Tensor* gb = t.grad_target(b)) {
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < M; ++j)
          for (std::size_t d = 0; d < D; ++d) gb->at(j, d) += g.at(i, j) * A.at(i, d);
    }
  });
}

// ---------------------------------------------------------------------------
// Structure

Var concat(Tape& t, std::span<const Var> xs) {
  std::size_t n = 0;
  for (Var v : xs) n += t.value(v).size();
  Tensor out({n});
  std::size_t off = 0;
  for (Var v : xs) {
    const Tensor& x = t.value(v);
    std::copy(x.data().begin(), x.data().end(), out.ptr() + off);
    off += x.size();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return t.record(std::move(out), parents, [parents](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (Var p : parents) {
      const std::size_t n = t.value(p).size();
      if (Tensor* gp = t.grad_target(p)) {
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var stack(Tape& t, std::span<const Var> rows) {
  require(!rows.empty(), "stack", "needs at least one row");
  const std::size_t D = t.value(rows[0]).size();
  Tensor out({rows.size(), D});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& r = t.value(rows[i]);
    require(r.size() == D, "stack", "rows differ in size");
    std::copy(r.data().begin(), r.data().end(), out.ptr() + i * D);
  }
  std::vector<Var> parents(rows.begin(), rows.end());
  return t.record(std::move(out), parents, [parents, D](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (Tensor* gp = t.grad_target(parents[i])) {
        for (std::size_t d = 0; d < D; ++d) (*gp)[d] += g[i * D + d];
      }
    }
  });
}

Var row(Tape& t, Var m, std::size_t i) {
  const Tensor& M = t.value(m);
  require(M.rank() == 2 && i < M.dim(0), "row", fmt::format("row {} of {}", i, shape_str(M.shape())));
  const std::size_t D = M.dim(1);
  Tensor out({D});
  std::copy(M.ptr() + i * D, M.ptr() + (i + 1) * D, out.ptr());
  return t.record(std::move(out), {m}, [m, i, D](Tape& t, Var self) {
    if (Tensor* gm = t.grad_target(m)) {
      const Tensor& g = t.grad(self);
      for (std::size_t d = 0; d < D; ++d) (*gm)[i * D + d] += g[d];
    }
  });
}

Var element(Tape& t, Var v, std::size_t i) {
  const Tensor& x = t.value(v);
  require(i < x.size(), "element", fmt::format("index {} of size {}", i, x.size()));
  return t.record(Tensor::scalar(x[i]), {v}, [v, i](Tape& t, Var self) {
    if (Tensor* gv = t.grad_target(v)) (*gv)[i] += t.grad(self)[0];
  });
}

Var slice(Tape& t, Var v, std::size_t begin, std::size_t len) {
  const Tensor& x = t.value(v);
  require(begin + len <= x.size(), "slice", fmt::format("range [{}, {}) of size {}", begin, begin + len, x.size()));
  Tensor out({len});
  std::copy_n(x.ptr() + begin, len, out.ptr());
  return t.record(std::move(out), {v}, [v, begin, len](Tape& t, Var self) {
    if (Tensor* gv = t.grad_target(v)) {
      const Tensor& g = t.grad(self);
      for (std::size_t i = 0; i < len; ++i) (*gv)[begin + i] += g[i];
    }
  });
}

Var divide_by(Tape& t, Var a, Var s) {
  require(t.value(s).size() == 1, "divide_by", "divisor must hold one value");
  const double c = t.value(s)[0];
  Tensor out = t.value(a);
  for (auto& v : out.data()) v /= c;
  return t.record(std::move(out), {a, s}, [a, s](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const double c = t.value(s)[0];
    if (Tensor* ga = t.grad_target(a)) ga->accumulate(g, 1.0 / c);
    if (Tensor* gs = t.grad_target(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * y[i];
      (*gs)[0] -= acc / c;
    }
  });
}

Var sum(Tape& t, Var v) {
  const double s = sorted_sum(t.value(v).data());
  return t.record(Tensor::scalar(s), {v}, [v](Tape& t, Var self) {
    if (Tensor* gv = t.grad_target(v)) {
      const double g = t.grad(self)[0];
      for (auto& x : gv->data()) x += g;
    }
  });
}

Var sum_rows(Tape& t, Var m) {
  const Tensor& M = t.value(m);
  require(M.rank() == 2, "sum_rows", fmt::format("expects a matrix, got {}", shape_str(M.shape())));
  const std::size_t N = M.dim(0), D = M.dim(1);
  Tensor out({D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) out[d] += M.at(i, d);
  return t.record(std::move(out), {m}, [m, N, D](Tape& t, Var self) {
    if (Tensor* gm = t.grad_target(m)) {
      const Tensor& g = t.grad(self);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t d = 0; d < D; ++d) gm->at(i, d) += g[d];
    }
  });
}

Var max_element(Tape& t, Var v) {
  const Tensor& x = t.value(v);
  require(!x.empty(), "max_element", "empty input");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[arg]) arg = i;
  }
  return t.record(Tensor::scalar(x[arg]), {v}, [v, arg](Tape& t, Var self) {
    if (Tensor* gv = t.grad_target(v)) (*gv)[arg] += t.grad(self)[0];
  });
}

// ---------------------------------------------------------------------------
// Embeddings

namespace {

void check_indices(const Tensor& table, std::span<const std::int32_t> indices, std::string_view op) {
  require(table.rank() == 2, op, fmt::format("table must be a matrix, got {}", shape_str(table.shape())));
  for (auto idx : indices) {
    require(idx >= -1 && static_cast<std::size_t>(idx + 1) <= table.dim(0), op,
            fmt::format("index {} outside table of {} rows", idx, table.dim(0)));
  }
}

}  // namespace

Var embedding_lookup(Tape& t, Var table, std::span<const std::int32_t> indices) {
  const Tensor& T = t.value(table);
  check_indices(T, indices, "embedding_lookup");
  const std::size_t E = T.dim(1);
  Tensor out({indices.size(), E});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0) continue;
    std::copy(T.ptr() + indices[i] * E, T.ptr() + (indices[i] + 1) * E, out.ptr() + i * E);
  }
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {table}, [table, idx = std::move(idx), E](Tape& t, Var self) {
    if (Tensor* gt = t.grad_target(table)) {
      const Tensor& g = t.grad(self);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        for (std::size_t d = 0; d < E; ++d) (*gt)[idx[i] * E + d] += g[i * E + d];
      }
    }
  });
}

Var embedding_sum(Tape& t, Var table, std::span<const std::int32_t> indices) {
  const Tensor& T = t.value(table);
  check_indices(T, indices, "embedding_sum");
  const std::size_t E = T.dim(1);
  Tensor out({E});
  for (auto i : indices) {
    if (i < 0) continue;
    for (std::size_t d = 0; d < E; ++d) out[d] += T[i * E + d];
  }
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {table}, [table, idx = std::move(idx), E](Tape& t, Var self) {
    if (Tensor* gt = t.grad_target(table)) {
      const Tensor& g = t.grad(self);
      for (auto i : idx) {
        if (i < 0) continue;
        for (std::size_t d = 0; d < E; ++d) (*gt)[i * E + d] += g[d];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// GRU

Var gru_cell(Tape& t, Var x, Var h, const GruWeights& p) {
  const Tensor& W = t.value(p.w);
  const Tensor& U = t.value(p.u);
  const Tensor& B = t.value(p.b);
  const Tensor& X = t.value(x);
  const Tensor& Hp = t.value(h);
  const std::size_t H = Hp.size();
  require(W.rank() == 2 && W.dim(0) == 3 * H && W.dim(1) == X.size(), "gru_cell",
          fmt::format("input weights {} for input {} and hidden {}", shape_str(W.shape()), X.size(), H));
  require(U.rank() == 2 && U.dim(0) == 3 * H && U.dim(1) == H, "gru_cell",
          fmt::format("recurrent weights {} for hidden {}", shape_str(U.shape()), H));
  require(B.size() == 3 * H, "gru_cell", fmt::format("bias of size {} for hidden {}", B.size(), H));
  const std::size_t E = X.size();

  std::vector<double> pre(3 * H);
  for (std::size_t r = 0; r < 3 * H; ++r) {
    double acc = B[r];
    const double* wr = W.ptr() + r * E;
    for (std::size_t c = 0; c < E; ++c) acc += wr[c] * X[c];
    pre[r] = acc;
  }
  std::vector<double> z(H), rg(H), rh(H), cand(H);
  for (std::size_t r = 0; r < 2 * H; ++r) {
    double acc = 0.0;
    const double* ur = U.ptr() + r * H;
    for (std::size_t c = 0; c < H; ++c) acc += ur[c] * Hp[c];
    pre[r] += acc;
  }
  for (std::size_t i = 0; i < H; ++i) {
    z[i] = stable_sigmoid(pre[i]);
    rg[i] = stable_sigmoid(pre[H + i]);
    rh[i] = rg[i] * Hp[i];
  }
  Tensor out({H});
  for (std::size_t i = 0; i < H; ++i) {
    double acc = pre[2 * H + i];
    const double* ur = U.ptr() + (2 * H + i) * H;
    for (std::size_t c = 0; c < H; ++c) acc += ur[c] * rh[c];
    cand[i] = std::tanh(acc);
    out[i] = (1.0 - z[i]) * Hp[i] + z[i] * cand[i];
  }

  const GruWeights w = p;
  return t.record(std::move(out), {x, h, p.w, p.u, p.b},
                  [x, h, w, z = std::move(z), rg = std::move(rg), rh = std::move(rh), cand = std::move(cand)](
                      Tape& t, Var self) {
                    const Tensor& g = t.grad(self);
                    const Tensor& X = t.value(x);
                    const Tensor& Hp = t.value(h);
                    const Tensor& W = t.value(w.w);
                    const Tensor& U = t.value(w.u);
                    const std::size_t H = Hp.size(), E = X.size();

                    // d(pre-activation) for the three gate blocks
                    std::vector<double> da(3 * H);
                    std::vector<double> dh(H);
                    for (std::size_t i = 0; i < H; ++i) {
                      const double dz = g[i] * (cand[i] - Hp[i]);
                      const double dc = g[i] * z[i];
                      dh[i] = g[i] * (1.0 - z[i]);
                      da[i] = dz * z[i] * (1.0 - z[i]);
                      da[2 * H + i] = dc * (1.0 - cand[i] * cand[i]);
                    }
                    // candidate path through U_h (r * h)
                    std::vector<double> drh(H, 0.0);
                    for (std::size_t i = 0; i < H; ++i) {
                      const double d = da[2 * H + i];
                      if (d == 0.0) continue;
                      const double* ur = U.ptr() + (2 * H + i) * H;
                      for (std::size_t c = 0; c < H; ++c) drh[c] += ur[c] * d;
                    }
                    for (std::size_t i = 0; i < H; ++i) {
                      const double dr = drh[i] * Hp[i];
                      dh[i] += drh[i] * rg[i];
                      da[H + i] = dr * rg[i] * (1.0 - rg[i]);
                    }
                    // update/reset recurrent contributions to dh
                    for (std::size_t r = 0; r < 2 * H; ++r) {
                      const double d = da[r];
                      if (d == 0.0) continue;
                      const double* ur = U.ptr() + r * H;
                      for (std::size_t c = 0; c < H; ++c) dh[c] += ur[c] * d;
                    }

                    if (Tensor* gw = t.grad_target(w.w)) {
                      for (std::size_t r = 0; r < 3 * H; ++r) {
                        if (da[r] == 0.0) continue;
                        double* row = gw->ptr() + r * E;
                        for (std::size_t c = 0; c < E; ++c) row[c] += da[r] * X[c];
                      }
                    }
                    if (Tensor* gu = t.grad_target(w.u)) {
                      for (std::size_t r = 0; r < 2 * H; ++r) {
                        if (da[r] == 0.0) continue;
                        double* row = gu->ptr() + r * H;
                        for (std::size_t c = 0; c < H; ++c) row[c] += da[r] * Hp[c];
                      }
                      for (std::size_t i = 0; i < H; ++i) {
                        const double d = da[2 * H + i];
                        if (d == 0.0) continue;
                        double* row = gu->ptr() + (2 * H + i) * H;
                        for (std::size_t c = 0; c < H; ++c) row[c] += d * rh[c];
                      }
                    }
                    if (Tensor* gb = t.grad_target(w.b)) {
                      for (std::size_t r = 0; r < 3 * H; ++r) (*gb)[r] += da[r];
                    }
                    if (Tensor* gx = t.grad_target(x)) {
                      for (std::size_t r = 0; r < 3 * H; ++r) {
                        if (da[r] == 0.0) continue;
                        const double* wr = W.ptr() + r * E;
                        for (std::size_t c = 0; c < E; ++c) (*gx)[c] += wr[c] * da[r];
                      }
                    }
                    if (Tensor* gh = t.grad_target(h)) {
                      for (std::size_t i = 0; i < H; ++i) (*gh)[i] += dh[i];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Losses

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - m);
  // Summed in sorted order so the result does not depend on class order.
  const double s = sorted_sum(p);
  for (auto& v : p) v /= s;
  return p;
}

Var log_softmax(Tape& t, Var logits) {
  const Tensor& x = t.value(logits);
  const double lse = log_sum_exp(x.data());
  Tensor out = x;
  for (auto& v : out.data()) v -= lse;
  return t.record(std::move(out), {logits}, [logits](Tape& t, Var self) {
    Tensor* gx = t.grad_target(logits);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    double gs = 0.0;
    for (double v : g.data()) gs += v;
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] - std::exp(y[i]) * gs;
  });
}

Var softmax(Tape& t, Var logits) {
  Tensor out({t.value(logits).size()}, softmax_values(t.value(logits).data()));
  return t.record(std::move(out), {logits}, [logits](Tape& t, Var self) {
    Tensor* gx = t.grad_target(logits);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& p = t.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * p[i];
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += p[i] * (g[i] - dot);
  });
}

SoftmaxLoss softmax_ce(Tape& t, Var logits, std::size_t target) {
  const Tensor& x = t.value(logits);
  require(target < x.size(), "softmax_ce", fmt::format("target {} outside {} classes", target, x.size()));
  const std::size_t targets[] = {target};
  SoftmaxLoss out;
  out.probs = softmax_values(x.data());
  out.loss = pooled_softmax_ce(t, logits, targets);
  return out;
}

Var pooled_softmax_ce(Tape& t, Var logits, std::span<const std::size_t> targets) {
  const Tensor& x = t.value(logits);
  std::set<std::size_t> uniq(targets.begin(), targets.end());
  require(!uniq.empty(), "pooled_softmax_ce", "no target classes");
  for (auto k : uniq) require(k < x.size(), "pooled_softmax_ce", fmt::format("target {} outside {} classes", k, x.size()));
  std::vector<std::size_t> set(uniq.begin(), uniq.end());
  std::vector<double> sel;
  for (auto k : set) sel.push_back(x[k]);
  const double loss = log_sum_exp(x.data()) - log_sum_exp(sel);
  return t.record(Tensor::scalar(loss), {logits}, [logits, set = std::move(set)](Tape& t, Var self) {
    Tensor* gx = t.grad_target(logits);
    if (gx == nullptr) return;
    const double g = t.grad(self)[0];
    const Tensor& x = t.value(logits);
    const auto p = softmax_values(x.data());
    double pooled = 0.0;
    for (auto k : set) pooled += p[k];
    for (std::size_t i = 0; i < p.size(); ++i) (*gx)[i] += g * p[i];
    for (auto k : set) (*gx)[k] -= g * p[k] / pooled;
  });
}

Var bce_with_logits(Tape& t, Var logits, std::span<const double> labels) {
  const Tensor& z = t.value(logits);
  require(z.size() == labels.size(), "bce_with_logits", fmt::format("{} logits, {} labels", z.size(), labels.size()));
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    loss += std::max(z[i], 0.0) - z[i] * labels[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  std::vector<double> y(labels.begin(), labels.end());
  return t.record(Tensor::scalar(loss), {logits}, [logits, y = std::move(y)](Tape& t, Var self) {
    Tensor* gz = t.grad_target(logits);
    if (gz == nullptr) return;
    const double g = t.grad(self)[0];
    const Tensor& z = t.value(logits);
    for (std::size_t i = 0; i < z.size(); ++i) (*gz)[i] += g * (stable_sigmoid(z[i]) - y[i]);
  });
}

}  // namespace ftrack::ad
