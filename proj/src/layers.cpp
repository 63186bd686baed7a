#include "ftrack/layers.hpp"

#include <cmath>

namespace ftrack::ad {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Parameter& add_embedding(ParameterSet& ps, std::string name, std::size_t rows, std::size_t dim, Rng& rng) {
  return ps.add(std::move(name), uniform_tensor({rows, dim}, 0.1, rng));
}

DenseLayer DenseLayer::create(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  DenseLayer l;
  l.w = &ps.add(prefix + ".W", uniform_tensor({out, in}, bound, rng));
  l.b = &ps.add(prefix + ".b", Tensor({out}));
  return l;
}

Var DenseLayer::operator()(Tape& t, Var x, Activation act) const { return dense(t, x, t.param(*w), t.param(*b), act); }

GruLayer GruLayer::create(ParameterSet& ps, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
  GruLayer l;
  l.w = &ps.add(prefix + ".W", uniform_tensor({3 * hidden, input}, 1.0 / std::sqrt(static_cast<double>(input)), rng));
  l.u = &ps.add(prefix + ".U", uniform_tensor({3 * hidden, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
  l.b = &ps.add(prefix + ".b", Tensor({3 * hidden}));
  return l;
}

BiGruLayer BiGruLayer::create(ParameterSet& ps, const std::string& prefix, std::size_t input, std::size_t hidden,
                              Rng& rng) {
  BiGruLayer l;
  l.fwd = GruLayer::create(ps, prefix + ".fwd", input, hidden, rng);
  l.bwd = GruLayer::create(ps, prefix + ".bwd", input, hidden, rng);
  return l;
}

namespace {

std::size_t hidden_of(const Tape& t, const GruWeights& w) { return t.value(w.u).dim(1); }

}  // namespace

Var bigru_encode(Tape& t, std::span<const Var> seq, const GruWeights& fwd, const GruWeights& bwd) {
  const std::size_t hf = hidden_of(t, fwd), hb = hidden_of(t, bwd);
  if (seq.empty()) return t.constant(Tensor({hf + hb}));
  Var hF = t.constant(Tensor({hf}));
  for (Var x : seq) hF = gru_cell(t, x, hF, fwd);
  Var hB = t.constant(Tensor({hb}));
  for (std::size_t i = seq.size(); i-- > 0;) hB = gru_cell(t, seq[i], hB, bwd);
  const Var parts[] = {hF, hB};
  return concat(t, parts);
}

std::vector<Var> bigru_states(Tape& t, std::span<const Var> seq, const GruWeights& fwd, const GruWeights& bwd) {
  const std::size_t n = seq.size();
  std::vector<Var> f(n), b(n), out(n);
  Var h = t.constant(Tensor({hidden_of(t, fwd)}));
  for (std::size_t i = 0; i < n; ++i) f[i] = h = gru_cell(t, seq[i], h, fwd);
  h = t.constant(Tensor({hidden_of(t, bwd)}));
  for (std::size_t i = n; i-- > 0;) b[i] = h = gru_cell(t, seq[i], h, bwd);
  for (std::size_t i = 0; i < n; ++i) {
    const Var parts[] = {f[i], b[i]};
    out[i] = concat(t, parts);
  }
  return out;
}

}  // namespace ftrack::ad
