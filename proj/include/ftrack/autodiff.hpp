#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace ftrack::ad {

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor vector(std::vector<double> data);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  void fill(double v);
  // this += other (same size)
  void accumulate(const Tensor& other, double scale = 1.0);

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named trainable tensors with stable addresses.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

  nlohmann::ordered_json to_json() const;
  // Overwrites values of existing parameters; names and shapes must match.
  void load_json(const nlohmann::ordered_json& j);

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Handle to a tape node.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

// Reverse-mode tape. Nodes are appended in execution order, so reverse index
// order is a valid reverse topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  Var constant(Tensor value);
  // Leaf bound to a parameter; backward() adds its gradient into p.grad.
  Var param(Parameter& p);
  Var record(Tensor value, std::initializer_list<Var> parents, Backward fn);
  Var record(Tensor value, std::span<const Var> parents, Backward fn);

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param != nullptr ? n.param->value : n.value;
  }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Gradient buffer of v, allocated on first use; nullptr when v needs no gradient.
  // Parameter leaves accumulate straight into Parameter::grad.
  Tensor* grad_target(Var v);
  const Tensor& grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param != nullptr ? n.param->grad : n.grad;
  }

  void backward(Var root, double seed = 1.0);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

enum class Activation { kIdentity, kTanh, kSigmoid, kRelu };

// Elementwise
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var scale_by(Tape& t, Var a, Var s);       // s holds one value
Var add_scalar_var(Tape& t, Var a, Var s);  // a + s, s holds one value
Var activate(Tape& t, Var a, Activation act);
inline Var tanh(Tape& t, Var a) { return activate(t, a, Activation::kTanh); }
inline Var sigmoid(Tape& t, Var a) { return activate(t, a, Activation::kSigmoid); }
inline Var relu(Tape& t, Var a) { return activate(t, a, Activation::kRelu); }
Var add_n(Tape& t, std::span<const Var> xs);

// Linear algebra
Var matvec(Tape& t, Var w, Var x);               // (R x C) . (C) -> (R)
Var affine(Tape& t, Var w, Var x, Var b);        // W x + b
Var matmul_nt(Tape& t, Var a, Var b);            // (N x D) . (M x D)^T -> (N x M)
Var dense(Tape& t, Var x, Var w, Var b, Activation act);

// Structure
Var concat(Tape& t, std::span<const Var> xs);
Var stack(Tape& t, std::span<const Var> rows);   // equal-size vectors -> (N x D)
Var row(Tape& t, Var m, std::size_t i);
Var element(Tape& t, Var v, std::size_t i);      // -> shape {1}
Var slice(Tape& t, Var v, std::size_t begin, std::size_t len);
Var divide_by(Tape& t, Var a, Var s);            // s holds one value
Var sum(Tape& t, Var v);                         // -> shape {1}
Var sum_rows(Tape& t, Var m);                    // (N x D) -> (D)
Var max_element(Tape& t, Var v);                 // -> shape {1}; gradient to the first argmax

// Embeddings. Indices equal to -1 gather a zero row.
Var embedding_lookup(Tape& t, Var table, std::span<const std::int32_t> indices);
Var embedding_sum(Tape& t, Var table, std::span<const std::int32_t> indices);

// Standard GRU cell. W is (3H x E), U is (3H x H), b is (3H); gate order is
// update, reset, candidate. Returns (1 - z) * h + z * candidate.
struct GruWeights {
  Var w, u, b;
};
Var gru_cell(Tape& t, Var x, Var h, const GruWeights& p);

// Losses
std::vector<double> softmax_values(std::span<const double> logits);
Var log_softmax(Tape& t, Var logits);
Var softmax(Tape& t, Var logits);

struct SoftmaxLoss {
  Var loss;
  std::vector<double> probs;
};
SoftmaxLoss softmax_ce(Tape& t, Var logits, std::size_t target);
// -log of the probability mass pooled over `targets`.
Var pooled_softmax_ce(Tape& t, Var logits, std::span<const std::size_t> targets);
// Sum of binary cross-entropies of sigmoid(logits) against 0/1 labels.
Var bce_with_logits(Tape& t, Var logits, std::span<const double> labels);

}  // namespace ftrack::ad
