#pragma once

#include <span>
#include <string>
#include <vector>

#include "ftrack/autodiff.hpp"
#include "ftrack/rng.hpp"

namespace ftrack::ad {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng);

// Registers a (rows x dim) embedding table initialised uniformly in [-0.1, 0.1].
Parameter& add_embedding(ParameterSet& ps, std::string name, std::size_t rows, std::size_t dim, Rng& rng);

struct DenseLayer {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  static DenseLayer create(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
  Var operator()(Tape& t, Var x, Activation act = Activation::kIdentity) const;
  std::size_t in() const { return w->value.dim(1); }
  std::size_t out() const { return w->value.dim(0); }
};

struct GruLayer {
  Parameter* w = nullptr;
  Parameter* u = nullptr;
  Parameter* b = nullptr;

  static GruLayer create(ParameterSet& ps, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng);
  GruWeights bind(Tape& t) const { return GruWeights{t.param(*w), t.param(*u), t.param(*b)}; }
  std::size_t hidden() const { return u->value.dim(1); }
};

// Concatenated final states of a forward pass over `seq` and a backward pass
// over its reverse. An empty sequence yields zeros.
Var bigru_encode(Tape& t, std::span<const Var> seq, const GruWeights& fwd, const GruWeights& bwd);

// Per-position [forward_i; backward_i] hidden states.
std::vector<Var> bigru_states(Tape& t, std::span<const Var> seq, const GruWeights& fwd, const GruWeights& bwd);

struct BiGruLayer {
  GruLayer fwd, bwd;

  static BiGruLayer create(ParameterSet& ps, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng);
  Var encode(Tape& t, std::span<const Var> seq) const { return bigru_encode(t, seq, fwd.bind(t), bwd.bind(t)); }
  std::vector<Var> states(Tape& t, std::span<const Var> seq) const {
    return bigru_states(t, seq, fwd.bind(t), bwd.bind(t));
  }
  std::size_t output_dim() const { return 2 * fwd.hidden(); }
};

}  // namespace ftrack::ad
