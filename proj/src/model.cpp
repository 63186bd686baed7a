#include "ftrack/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "ftrack/error.hpp"

namespace ftrack {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr std::string_view kSwitchFrame = "switch_frame";
constexpr std::string_view kCheckpointFormat = "ftrack-checkpoint";
constexpr int kCheckpointVersion = 1;

double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

std::string_view activation_name(ad::Activation a) {
  switch (a) {
    case ad::Activation::kIdentity: return "identity";
    case ad::Activation::kTanh: return "tanh";
    case ad::Activation::kSigmoid: return "sigmoid";
    case ad::Activation::kRelu: return "relu";
  }
  return "identity";
}

ad::Activation parse_activation(const std::string& s) {
  if (s == "identity") return ad::Activation::kIdentity;
  if (s == "tanh") return ad::Activation::kTanh;
  if (s == "sigmoid") return ad::Activation::kSigmoid;
  if (s == "relu") return ad::Activation::kRelu;
  throw ConfigError(fmt::format("unknown activation '{}'", s));
}

std::string_view normalization_name(EditNormalization n) {
  return n == EditNormalization::kMaxLength ? "max_length" : "sum_length";
}

EditNormalization parse_normalization(const std::string& s) {
  if (s == "max_length") return EditNormalization::kMaxLength;
  if (s == "sum_length") return EditNormalization::kSumLength;
  throw ConfigError(fmt::format("unknown edit normalization '{}'", s));
}

std::string_view redistribution_name(Redistribution r) {
  return r == Redistribution::kConserving ? "conserving" : "displayed";
}

Redistribution parse_redistribution(const std::string& s) {
  if (s == "conserving") return Redistribution::kConserving;
  if (s == "displayed") return Redistribution::kDisplayed;
  throw ConfigError(fmt::format("unknown redistribution mode '{}'", s));
}

std::vector<double> values_of(const Tape& t, Var v) {
  const auto d = t.value(v).data();
  return {d.begin(), d.end()};
}

std::vector<std::vector<double>> rows_of(const Tape& t, std::span<const Var> vs) {
  std::vector<std::vector<double>> out;
  out.reserve(vs.size());
  for (Var v : vs) out.push_back(values_of(t, v));
  return out;
}

std::size_t first_argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Index of the first switch_frame triple, or npos.
std::size_t first_switch_triple(const EncodedTurn& turn) {
  for (std::size_t i = 0; i < turn.triples.size(); ++i) {
    if (turn.act_names[turn.triples[i].act_position] == kSwitchFrame) return i;
  }
  return std::string::npos;
}

std::size_t first_switch_act(const EncodedTurn& turn) {
  for (std::size_t a = 0; a < turn.act_names.size(); ++a) {
    if (turn.act_names[a] == kSwitchFrame) return a;
  }
  return std::string::npos;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  const std::pair<const char*, std::size_t> dims[] = {
      {"trigram_embed_dim", trigram_embed_dim}, {"act_embed_dim", act_embed_dim},
      {"slot_embed_dim", slot_embed_dim},       {"gru_hidden", gru_hidden},
      {"triple_gru_hidden", triple_gru_hidden}, {"frame_gru_hidden", frame_gru_hidden},
      {"summary_dim", summary_dim},             {"gate_hidden", gate_hidden},
      {"act_head_hidden", act_head_hidden}};
  for (const auto& [name, v] : dims) {
    if (v == 0) throw ConfigError(fmt::format("model.{} must be at least 1", name));
  }
  if (!(encoding.gamma > 0.0 && encoding.gamma < 1.0)) {
    throw ConfigError(fmt::format("model.gamma must lie in (0, 1), got {}", encoding.gamma));
  }
  if (encoding.trigram_cap == 0) throw ConfigError("model.trigram_cap must be at least 1");
}

Json ModelConfig::to_json() const {
  Json j;
  j["trigram_embed_dim"] = trigram_embed_dim;
  j["act_embed_dim"] = act_embed_dim;
  j["slot_embed_dim"] = slot_embed_dim;
  j["gru_hidden"] = gru_hidden;
  j["triple_gru_hidden"] = triple_gru_hidden;
  j["frame_gru_hidden"] = frame_gru_hidden;
  j["summary_dim"] = summary_dim;
  j["gate_hidden"] = gate_hidden;
  j["act_head_hidden"] = act_head_hidden;
  j["hidden_activation"] = activation_name(hidden_activation);
  j["act_head_onehots"] = act_head_onehots;
  j["act_head_evidence"] = act_head_evidence;
  j["redistribution"] = redistribution_name(redistribution);
  j["gamma"] = encoding.gamma;
  j["trigram_cap"] = encoding.trigram_cap;
  j["edit_normalization"] = normalization_name(encoding.normalization);
  j["seed"] = seed;
  return j;
}

ModelConfig ModelConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  ModelConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "trigram_embed_dim") c.trigram_embed_dim = v.get<std::size_t>();
      else if (key == "act_embed_dim") c.act_embed_dim = v.get<std::size_t>();
      else if (key == "slot_embed_dim") c.slot_embed_dim = v.get<std::size_t>();
      else if (key == "gru_hidden") c.gru_hidden = v.get<std::size_t>();
      else if (key == "triple_gru_hidden") c.triple_gru_hidden = v.get<std::size_t>();
      else if (key == "frame_gru_hidden") c.frame_gru_hidden = v.get<std::size_t>();
      else if (key == "summary_dim") c.summary_dim = v.get<std::size_t>();
      else if (key == "gate_hidden") c.gate_hidden = v.get<std::size_t>();
      else if (key == "act_head_hidden") c.act_head_hidden = v.get<std::size_t>();
      else if (key == "hidden_activation") c.hidden_activation = parse_activation(v.get<std::string>());
      else if (key == "act_head_onehots") c.act_head_onehots = v.get<bool>();
      else if (key == "act_head_evidence") c.act_head_evidence = v.get<bool>();
      else if (key == "redistribution") c.redistribution = parse_redistribution(v.get<std::string>());
      else if (key == "gamma") c.encoding.gamma = v.get<double>();
      else if (key == "trigram_cap") c.encoding.trigram_cap = v.get<std::size_t>();
      else if (key == "edit_normalization") c.encoding.normalization = parse_normalization(v.get<std::string>());
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError(fmt::format("unknown model config key '{}'", key));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("model config: {}", e.what()));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Targets, loss, redistribution

std::vector<std::size_t> TripleTarget::pooled() const {
  if (column == 0 && !penalize_active) return {0, active_column};
  return {column};
}

Targets build_targets(const EncodedTurn& turn) {
  const std::size_t F = turn.frame_count();
  const std::size_t new_col = F + 1;
  const std::size_t active_col = std::min<std::size_t>(turn.active_after, new_col);
  Targets tgt;
  for (std::size_t i = 0; i < turn.triples.size(); ++i) {
    const FrameId gold = turn.triple_refs[i];
    if (gold == 0) {
      throw DataError(fmt::format("dialogue '{}' turn {}: triple {} has no gold frame", turn.dialogue_id,
                                  turn.turn_index, i));
    }
    TripleTarget tt;
    tt.active_column = active_col;
    if (gold > F) {
      tt.column = new_col;
      tt.penalize_active = true;
    } else if (gold == turn.active_after) {
      if (turn.act_names[turn.triples[i].act_position] == kSwitchFrame) {
        tt.column = gold;
        tt.penalize_active = true;
      } else {
        tt.column = 0;
      }
    } else {
      tt.column = gold;
    }
    tgt.triples.push_back(tt);
  }
  for (const auto& refs : gold_act_frames(turn)) {
    std::vector<double> labels(F + 1, 0.0);
    for (FrameId id : refs) {
      if (id == 0) throw DataError(fmt::format("dialogue '{}' turn {}: act reference to frame 0", turn.dialogue_id,
                                               turn.turn_index));
      labels[id - 1] = 1.0;
    }
    tgt.act_labels.push_back(std::move(labels));
  }
  return tgt;
}

double triple_loss(std::span<const double> probs, const TripleTarget& tgt) {
  double mass = 0.0;
  for (std::size_t k : tgt.pooled()) mass += probs[k];
  return -std::log(mass);
}

std::vector<std::vector<double>> redistribute(const std::vector<std::vector<double>>& p_asv, FrameId previous_active,
                                              const SwitchInfo& sw, Redistribution mode) {
  std::vector<std::vector<double>> out;
  out.reserve(p_asv.size());
  double switch_total = 0.0;
  if (sw.present) switch_total = sorted_sum(sw.distribution);
  for (const auto& p : p_asv) {
    if (p.size() < 3) throw ShapeError(fmt::format("redistribute: row of {} columns", p.size()));
    const std::size_t F = p.size() - 2;
    if (previous_active == 0 || previous_active > F) {
      throw ShapeError(fmt::format("redistribute: active frame {} outside {} frames", previous_active, F));
    }
    if (sw.present && sw.distribution.size() != F) {
      throw ShapeError(fmt::format("redistribute: switch distribution over {} frames, rows have {}",
                                   sw.distribution.size(), F));
    }
    std::vector<double> q(p.begin() + 1, p.end());
    const double p0 = p[0];
    const double p_new = p[F + 1];
    if (mode == Redistribution::kDisplayed) {
      for (std::size_t f = 0; f < F; ++f) {
        const double share = sw.present ? (switch_total > 0 ? sw.distribution[f] / switch_total : 0.0) : p_new;
        q[f] += p0 * share;
      }
    } else if (sw.present && switch_total > 0.0) {
      for (std::size_t f = 0; f < F; ++f) q[f] += p0 * sw.distribution[f] / switch_total;
    } else if (sw.present) {
      q[previous_active - 1] += p0;
    } else {
      q[F] += p0 * p_new;
      q[previous_active - 1] += p0 * (1.0 - p_new);
    }
    out.push_back(std::move(q));
  }
  return out;
}

SwitchInfo switch_info(const EncodedTurn& turn, const ForwardOutput& out) {
  SwitchInfo sw;
  const std::size_t F = turn.frame_count();
  if (const std::size_t i = first_switch_triple(turn); i != std::string::npos) {
    sw.present = true;
    sw.distribution.assign(out.p_asv[i].begin() + 1, out.p_asv[i].begin() + 1 + static_cast<std::ptrdiff_t>(F));
  } else if (const std::size_t a = first_switch_act(turn); a != std::string::npos) {
    sw.present = true;
    sw.distribution.assign(out.p_aF[a].begin() + 1, out.p_aF[a].begin() + 1 + static_cast<std::ptrdiff_t>(F));
  }
  return sw;
}

// ---------------------------------------------------------------------------
// Model

FrameTracker::FrameTracker(ModelConfig cfg, std::size_t trigram_count, std::size_t slot_count, std::size_t act_count)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t U = 2 * cfg_.gru_hidden;
  trigram_emb_ = &ad::add_embedding(params_, "emb.trigram", trigram_count, cfg_.trigram_embed_dim, rng);
  slot_emb_ = &ad::add_embedding(params_, "emb.slot", slot_count, cfg_.slot_embed_dim, rng);
  act_emb_ = &ad::add_embedding(params_, "emb.act", act_count, cfg_.act_embed_dim, rng);
  r_t_ = ad::BiGruLayer::create(params_, "r_t", cfg_.trigram_embed_dim, cfg_.gru_hidden, rng);
  r_asv_ = ad::BiGruLayer::create(params_, "r_asv", cfg_.act_embed_dim + cfg_.slot_embed_dim + U,
                                  cfg_.triple_gru_hidden, rng);
  proj_asv_ = ad::DenseLayer::create(params_, "proj_asv", 2 * cfg_.triple_gru_hidden + U, cfg_.summary_dim, rng);
  r_F_ = ad::BiGruLayer::create(params_, "r_F", cfg_.slot_embed_dim + U, cfg_.frame_gru_hidden, rng);
  proj_F_ = ad::DenseLayer::create(params_, "proj_F", 2 * cfg_.frame_gru_hidden, cfg_.summary_dim, rng);
  w_M_ = &params_.add("fuse.w_M", Tensor::scalar(1.0 / static_cast<double>(cfg_.summary_dim)));
  w_L_ = &params_.add("fuse.w_L", Tensor::scalar(1.0));
  fuse_b_ = &params_.add("fuse.b", Tensor::scalar(0.0));
  gate1_ = ad::DenseLayer::create(params_, "gate.1", 2 + U, cfg_.gate_hidden, rng);
  gate2_ = ad::DenseLayer::create(params_, "gate.2", cfg_.gate_hidden, 2, rng);
  act_shared_ = ad::DenseLayer::create(params_, "act_head.shared", cfg_.act_embed_dim + U, cfg_.act_head_hidden, rng);
  const std::size_t nf = act_feature_count();
  act_frame_w_ = &params_.add(
      "act_head.frame.W",
      ad::uniform_tensor({cfg_.act_head_hidden, nf}, 1.0 / std::sqrt(static_cast<double>(nf)), rng));
  act_out_ = ad::DenseLayer::create(params_, "act_head.out", cfg_.act_head_hidden, 1, rng);
}

std::size_t FrameTracker::act_feature_count() const {
  return 2 + (cfg_.act_head_onehots ? 2 : 0) + (cfg_.act_head_evidence ? 2 : 0);
}

ForwardOutput FrameTracker::forward(const EncodedTurn& turn) {
  Tape t;
  return forward(t, turn);
}

ForwardOutput FrameTracker::forward(Tape& t, const EncodedTurn& turn, ForwardVars* vars) {
  const std::size_t F = turn.frame_count();
  const std::size_t N = turn.triples.size();
  const std::size_t A = turn.acts.size();
  if (F == 0) throw ShapeError("forward: turn has no frames");
  if (turn.active == 0 || turn.active > F) {
    throw ShapeError(fmt::format("forward: active frame {} outside {} frames", turn.active, F));
  }
  if (turn.similarity.size() != N * F) throw ShapeError("forward: similarity matrix does not match N x |F|");
  const auto act = cfg_.hidden_activation;

  const Var trigrams = t.param(*trigram_emb_);
  const Var slots = t.param(*slot_emb_);
  const Var acts = t.param(*act_emb_);
  const ad::GruWeights rt_f = r_t_.fwd.bind(t), rt_b = r_t_.bwd.bind(t);

  // Token sequences are summarised once per distinct sequence.
  std::map<TokenSeq, Var> summaries;
  auto summarize = [&](const TokenSeq& seq) {
    if (auto it = summaries.find(seq); it != summaries.end()) return it->second;
    std::vector<Var> tokens;
    tokens.reserve(seq.size());
    for (const auto& tok : seq) tokens.push_back(ad::embedding_sum(t, trigrams, tok));
    const Var s = ad::bigru_encode(t, tokens, rt_f, rt_b);
    summaries.emplace(seq, s);
    return s;
  };
  const Var u = summarize(turn.utterance);

  ForwardOutput out;
  out.frame_count = F;

  // Triple summaries m_asv.
  std::vector<Var> m_asv;
  if (N > 0) {
    std::vector<Index> act_idx, slot_idx;
    for (const auto& tr : turn.triples) {
      act_idx.push_back(tr.act);
      slot_idx.push_back(tr.slot);
    }
    const Var act_rows = ad::embedding_lookup(t, acts, act_idx);
    const Var slot_rows = ad::embedding_lookup(t, slots, slot_idx);
    std::vector<Var> seq;
    for (std::size_t i = 0; i < N; ++i) {
      const Var parts[] = {ad::row(t, act_rows, i), ad::row(t, slot_rows, i), summarize(turn.triples[i].value)};
      seq.push_back(ad::concat(t, parts));
    }
    const auto states = r_asv_.states(t, seq);
    for (std::size_t i = 0; i < N; ++i) {
      const Var parts[] = {states[i], u};
      m_asv.push_back(proj_asv_(t, ad::concat(t, parts), ad::Activation::kTanh));
    }
  }

  // Frame summaries m_F.
  std::vector<Var> m_F;
  const ad::GruWeights rf_f = r_F_.fwd.bind(t), rf_b = r_F_.bwd.bind(t);
  for (const auto& frame : turn.frames) {
    std::vector<Var> seq;
    if (!frame.empty()) {
      std::vector<Index> slot_idx;
      for (const auto& pair : frame) slot_idx.push_back(pair.slot);
      const Var slot_rows = ad::embedding_lookup(t, slots, slot_idx);
      for (std::size_t k = 0; k < frame.size(); ++k) {
        const Var parts[] = {ad::row(t, slot_rows, k), summarize(frame[k].value)};
        seq.push_back(ad::concat(t, parts));
      }
    }
    m_F.push_back(proj_F_(t, ad::bigru_encode(t, seq, rf_f, rf_b), ad::Activation::kTanh));
  }
  out.m_asv = rows_of(t, m_asv);
  out.m_F = rows_of(t, m_F);

  // Fused similarity, gates and slot-based distributions.
  std::vector<Var> probs;
  std::vector<Var> logits;
  if (N > 0) {
    const Var SM = ad::matmul_nt(t, ad::stack(t, m_asv), ad::stack(t, m_F));
    const Var SL = t.constant(Tensor({N, F}, turn.similarity));
    Var S = ad::add(t, ad::scale_by(t, SM, t.param(*w_M_)), ad::scale_by(t, SL, t.param(*w_L_)));
    S = ad::add_scalar_var(t, S, t.param(*fuse_b_));
    out.S_M = values_of(t, SM);
    out.S = values_of(t, S);
    for (std::size_t i = 0; i < N; ++i) {
      const Var Si = ad::row(t, S, i);
      const Var gate_in[] = {ad::max_element(t, Si), ad::element(t, Si, turn.active - 1), u};
      const Var g = gate2_(t, gate1_(t, ad::concat(t, gate_in), act));
      const Var gc = ad::element(t, g, 0), gn = ad::element(t, g, 1);
      const Var z_parts[] = {gc, Si, gn};
      const Var z = ad::concat(t, z_parts);
      logits.push_back(z);
      probs.push_back(ad::softmax(t, z));
      out.g_c.push_back(t.value(gc)[0]);
      out.g_n.push_back(t.value(gn)[0]);
    }
  }
  out.p_asv = rows_of(t, probs);

  // Act head. Candidates are frames 1..|F| and the new frame.
  const std::size_t K = F + 1;
  std::vector<std::vector<std::size_t>> act_triples(A);
  for (std::size_t i = 0; i < N; ++i) act_triples[turn.triples[i].act_position].push_back(i);

  const Var zero = t.constant(Tensor::scalar(0.0));
  std::vector<Var> turn_evidence(K, zero);
  if (cfg_.act_head_evidence && N > 0) {
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<Var> col;
      for (std::size_t i = 0; i < N; ++i) col.push_back(ad::element(t, probs[i], k + 1));
      turn_evidence[k] = col.size() == 1 ? col[0] : ad::max_element(t, ad::concat(t, col));
    }
  }

  std::vector<std::vector<double>> fixed(K);
  for (std::size_t k = 0; k < K; ++k) {
    const bool frame = k < F;
    fixed[k] = {frame ? turn.recency.active[k] : 0.0, frame ? turn.recency.created[k] : 0.0};
    if (cfg_.act_head_onehots) {
      fixed[k].push_back(turn.onehots.active[k]);
      fixed[k].push_back(turn.onehots.new_frame[k]);
    }
  }

  Var act_rows{};
  if (A > 0) act_rows = ad::embedding_lookup(t, acts, turn.acts);
  const Var Wf = t.param(*act_frame_w_);
  std::vector<Var> act_logits(A);
  auto run_act_head = [&](std::size_t a, const std::vector<Var>& act_evidence) {
    const Var x_parts[] = {ad::row(t, act_rows, a), u};
    const Var shared = act_shared_(t, ad::concat(t, x_parts));
    std::vector<Var> ls;
    ls.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
      Var feat = t.constant(Tensor::vector(fixed[k]));
      if (cfg_.act_head_evidence) {
        const Var parts[] = {feat, act_evidence[k], turn_evidence[k]};
        feat = ad::concat(t, parts);
      }
      const Var h = ad::activate(t, ad::add(t, shared, ad::matvec(t, Wf, feat)), act);
      ls.push_back(act_out_(t, h));
    }
    act_logits[a] = ad::concat(t, ls);
  };

  // Acts without arguments first: a bare switch_frame supplies p_switch.
  const std::vector<Var> no_evidence(K, zero);
  for (std::size_t a = 0; a < A; ++a) {
    if (act_triples[a].empty()) run_act_head(a, no_evidence);
  }

  if (N > 0 && cfg_.act_head_evidence) {
    // Differentiable conserving redistribution feeding the per-act evidence.
    const std::size_t sw_triple = first_switch_triple(turn);
    const std::size_t sw_act = first_switch_act(turn);
    const bool switching = sw_act != std::string::npos;
    std::vector<double> e_prev(K, 0.0), e_delta(K, 0.0);
    e_prev[turn.active - 1] = 1.0;
    e_delta[F] = 1.0;
    e_delta[turn.active - 1] -= 1.0;
    Var share{};
    if (switching) {
      const Var ps = sw_triple != std::string::npos ? ad::slice(t, probs[sw_triple], 1, F)
                                                    : ad::slice(t, ad::sigmoid(t, act_logits[sw_act]), 0, F);
      const Var total = ad::sum(t, ps);
      if (t.value(total)[0] > 0.0) {
        const Var parts[] = {ad::divide_by(t, ps, total), zero};
        share = ad::concat(t, parts);
      } else {
        share = t.constant(Tensor::vector(e_prev));
      }
    }
    const Var prev_c = t.constant(Tensor::vector(e_prev));
    const Var delta_c = t.constant(Tensor::vector(e_delta));
    std::vector<Var> q(N);
    for (std::size_t i = 0; i < N; ++i) {
      Var w = share;
      if (!switching) w = ad::add(t, ad::scale_by(t, delta_c, ad::element(t, probs[i], F + 1)), prev_c);
      q[i] = ad::add(t, ad::slice(t, probs[i], 1, K), ad::scale_by(t, w, ad::element(t, probs[i], 0)));
    }
    for (std::size_t a = 0; a < A; ++a) {
      if (act_triples[a].empty()) continue;
      std::vector<Var> ev(K);
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<Var> col;
        for (std::size_t i : act_triples[a]) col.push_back(ad::element(t, q[i], k));
        ev[k] = col.size() == 1 ? col[0] : ad::max_element(t, ad::concat(t, col));
      }
      run_act_head(a, ev);
    }
  } else {
    for (std::size_t a = 0; a < A; ++a) {
      if (!act_triples[a].empty()) run_act_head(a, no_evidence);
    }
  }

  for (std::size_t a = 0; a < A; ++a) {
    const Tensor& z = t.value(act_logits[a]);
    std::vector<double> row(K + 1);
    double mx = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = 1.0 / (1.0 + std::exp(-z[k]));
      row[k + 1] = p;
      mx = std::max(mx, p);
    }
    row[0] = 1.0 - mx;
    out.p_aF.push_back(std::move(row));
  }

  if (vars != nullptr) {
    vars->triple_logits = std::move(logits);
    vars->act_logits = std::move(act_logits);
  }
  return out;
}

Var FrameTracker::loss(Tape& t, const ForwardVars& vars, const Targets& tgt) const {
  if (vars.triple_logits.size() != tgt.triples.size() || vars.act_logits.size() != tgt.act_labels.size()) {
    throw ShapeError("loss: targets do not match the forward pass");
  }
  std::vector<Var> terms;
  for (std::size_t i = 0; i < tgt.triples.size(); ++i) {
    const auto pooled = tgt.triples[i].pooled();
    terms.push_back(ad::pooled_softmax_ce(t, vars.triple_logits[i], pooled));
  }
  for (std::size_t a = 0; a < tgt.act_labels.size(); ++a) {
    terms.push_back(ad::bce_with_logits(t, vars.act_logits[a], tgt.act_labels[a]));
  }
  if (terms.empty()) return t.constant(Tensor::scalar(0.0));
  return terms.size() == 1 ? terms[0] : ad::add_n(t, terms);
}

ReferencePrediction FrameTracker::predict(const EncodedTurn& turn) { return predict(turn, forward(turn)); }

ReferencePrediction FrameTracker::predict(const EncodedTurn& turn, const ForwardOutput& out) const {
  ReferencePrediction p;
  const std::size_t F = turn.frame_count();
  p.triple_distributions = redistribute(out.p_asv, turn.active, switch_info(turn, out), cfg_.redistribution);
  for (const auto& q : p.triple_distributions) p.triple_frames.push_back(static_cast<FrameId>(first_argmax(q) + 1));
  for (const auto& row : out.p_aF) {
    std::vector<FrameId> set;
    for (std::size_t k = 1; k <= F + 1; ++k) {
      if (row[k] >= 0.5) set.push_back(static_cast<FrameId>(k));
    }
    if (set.empty()) set.push_back(turn.active);
    p.act_frames.push_back(std::move(set));
  }
  p.act_probabilities = out.p_aF;
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints

void FrameTracker::save(const std::filesystem::path& path, const std::string& dictionary_hash) const {
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["dictionary_hash"] = dictionary_hash;
  j["config"] = cfg_.to_json();
  j["parameters"] = params_.to_json();
  std::ofstream os(path);
  if (!os) throw LoadError(fmt::format("cannot write checkpoint '{}'", path.string()));
  os << j.dump() << '\n';
}

namespace {

Json read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError(fmt::format("cannot open checkpoint '{}'", path.string()));
  Json j;
  try {
    j = Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("checkpoint '{}': {}", path.string(), e.what()));
  }
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw CheckpointMismatch(fmt::format("'{}' is not a checkpoint", path.string()));
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw CheckpointMismatch(fmt::format("checkpoint '{}' has unsupported version", path.string()));
  }
  return j;
}

}  // namespace

std::string FrameTracker::checkpoint_dictionary_hash(const std::filesystem::path& path) {
  return read_checkpoint(path).value("dictionary_hash", "");
}

FrameTracker FrameTracker::load(const std::filesystem::path& path, const Dictionaries& dict) {
  const Json j = read_checkpoint(path);
  const std::string want = j.value("dictionary_hash", "");
  if (want != dict.hash()) {
    throw CheckpointMismatch(fmt::format("checkpoint '{}' was trained with dictionaries {}, given {}", path.string(),
                                         want, dict.hash()));
  }
  FrameTracker m(ModelConfig::from_json(j.at("config")), dict);
  m.params_.load_json(j.at("parameters"));
  return m;
}

}  // namespace ftrack
