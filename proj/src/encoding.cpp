#include "ftrack/encoding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>

#include <fmt/format.h>

#include "ftrack/error.hpp"

namespace ftrack {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_emoticon(const std::string& chunk) {
  static const std::regex pattern(
      R"(^(?:[:;=8][\-o'^]?[)(\]\[dpDP/\\|*3oO]+|[)(\]\[/\\|]+[\-o'^]?[:;=8]|<3+|\^_*\^|-_+-)$)");
  return std::regex_match(chunk, pattern);
}

// Splits a run of punctuation into runs of identical characters.
void push_punct_runs(std::string_view run, std::vector<std::string>& out) {
  std::size_t i = 0;
  while (i < run.size()) {
    std::size_t j = i + 1;
    while (j < run.size() && run[j] == run[i]) ++j;
    out.emplace_back(run.substr(i, j - i));
    i = j;
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string chunk = lower(text.substr(i, j - i));
    i = j;

    if (is_emoticon(chunk)) {
      out.push_back(std::move(chunk));
      continue;
    }
    std::size_t b = 0;
    while (b < chunk.size() && is_punct(static_cast<unsigned char>(chunk[b]))) ++b;
    if (b == chunk.size()) {
      push_punct_runs(chunk, out);
      continue;
    }
    std::size_t e = chunk.size();
    while (e > b && is_punct(static_cast<unsigned char>(chunk[e - 1]))) --e;
    std::string_view view(chunk);
    push_punct_runs(view.substr(0, b), out);
    out.emplace_back(view.substr(b, e - b));
    push_punct_runs(view.substr(e), out);
  }
  return out;
}

std::vector<std::string> letter_trigrams(std::string_view token) {
  std::vector<std::string> out;
  if (token.empty()) return out;
  std::string padded;
  padded.reserve(token.size() + 2);
  padded.push_back('#');
  padded.append(token);
  padded.push_back('#');
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) out.push_back(padded.substr(i, 3));
  return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

double value_similarity(std::string_view a, std::string_view b, EditNormalization norm) {
  if (a.empty() || b.empty()) return 0.0;
  const std::string la = lower(a), lb = lower(b);
  const double d = static_cast<double>(levenshtein(la, lb));
  const double denom = norm == EditNormalization::kMaxLength ? static_cast<double>(std::max(la.size(), lb.size()))
                                                             : static_cast<double>(la.size() + lb.size());
  return 1.0 - d / denom;
}

// ---------------------------------------------------------------------------

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

Index Dictionaries::lookup(const Map& m, std::string_view key) {
  auto it = m.find(std::string(key));
  return it == m.end() ? kUnknown : it->second;
}

void Dictionaries::reindex() {
  auto fill = [](const std::vector<std::string>& entries, Map& m) {
    m.clear();
    for (std::size_t i = 0; i < entries.size(); ++i) m.emplace(entries[i], static_cast<Index>(i + 1));
  };
  fill(trigrams_, trigram_index_);
  fill(slots_, slot_index_);
  fill(acts_, act_index_);
}

Dictionaries Dictionaries::build(std::span<const Dialogue* const> dialogues, std::size_t trigram_cap) {
  std::map<std::string, std::size_t> trigram_counts;
  std::map<std::string, std::size_t> slot_set, act_set;
  auto count_text = [&](std::string_view text) {
    for (const auto& tok : tokenize(text)) {
      for (auto& tri : letter_trigrams(tok)) ++trigram_counts[tri];
    }
  };
  for (const Dialogue* d : dialogues) {
    for (const auto& turn : d->turns) {
      if (!turn.is_user()) continue;
      count_text(turn.text);
      for (const auto& act : turn.acts) {
        ++act_set[act.name];
        for (const auto& a : act.args) {
          ++slot_set[a.value.slot];
          count_text(a.value.value);
        }
      }
      for (const auto& f : frames_before_turn(*d, turn.index)) {
        for (const auto& c : f.constraints) {
          ++slot_set[c.slot];
          if (const auto* v = f.current_value(c.slot)) count_text(v->value);
        }
      }
    }
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(trigram_counts.begin(), trigram_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > trigram_cap) ranked.resize(trigram_cap);

  Dictionaries dict;
  for (auto& [t, n] : ranked) dict.trigrams_.push_back(t);
  for (auto& [s, n] : slot_set) dict.slots_.push_back(s);
  for (auto& [a, n] : act_set) dict.acts_.push_back(a);
  dict.reindex();
  return dict;
}

Json Dictionaries::to_json() const {
  Json j;
  j["format"] = "ftrack-dictionaries";
  j["version"] = kVersion;
  j["trigrams"] = trigrams_;
  j["slots"] = slots_;
  j["acts"] = acts_;
  return j;
}

Dictionaries Dictionaries::from_json(const Json& j) {
  if (j.value("format", std::string{}) != "ftrack-dictionaries" || j.value("version", 0) != kVersion) {
    throw LoadError("dictionary file has an unknown format or version");
  }
  Dictionaries d;
  d.trigrams_ = j.at("trigrams").get<std::vector<std::string>>();
  d.slots_ = j.at("slots").get<std::vector<std::string>>();
  d.acts_ = j.at("acts").get<std::vector<std::string>>();
  d.reindex();
  return d;
}

void Dictionaries::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << to_json().dump() << '\n';
}

Dictionaries Dictionaries::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("cannot open dictionary file '{}'", path.string()));
  try {
    return from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw LoadError(fmt::format("dictionary file '{}': {}", path.string(), e.what()));
  }
}

std::string Dictionaries::hash() const { return fnv1a_hex(to_json().dump()); }

// ---------------------------------------------------------------------------

TokenSeq encode_text(std::string_view text, const Dictionaries& dict) {
  TokenSeq seq;
  for (const auto& tok : tokenize(text)) {
    TokenTrigrams ids;
    for (const auto& tri : letter_trigrams(tok)) ids.push_back(dict.trigram(tri));
    seq.push_back(std::move(ids));
  }
  return seq;
}

std::vector<EncodedPair> encode_frame(const Frame& f, const Dictionaries& dict) {
  std::vector<EncodedPair> out;
  for (const auto& c : f.constraints) {
    const SlotValue* v = f.current_value(c.slot);
    if (v == nullptr) continue;
    out.push_back(EncodedPair{dict.slot(c.slot), encode_text(v->value, dict)});
  }
  return out;
}

std::vector<double> similarity_matrix(std::span<const SlotValue> triples, std::span<const Frame> frames,
                                      EditNormalization norm) {
  std::vector<double> s(triples.size() * frames.size(), 0.0);
  for (std::size_t i = 0; i < triples.size(); ++i) {
    for (std::size_t j = 0; j < frames.size(); ++j) {
      const SlotValue* v = frames[j].current_value(triples[i].slot);
      if (v != nullptr) s[i * frames.size() + j] = value_similarity(triples[i].value, v->value, norm);
    }
  }
  return s;
}

RecencyVectors recency_vectors(const Dialogue& d, std::size_t index, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError(fmt::format("recency discount must lie in (0, 1), got {}", gamma));
  if (index > d.turns.size()) {
    throw std::out_of_range(fmt::format("dialogue '{}': turn {} out of range [0, {}]", d.id, index, d.turns.size()));
  }
  RecencyVectors rv;
  rv.active.assign(d.frames.size(), 0.0);
  rv.created.assign(d.frames.size(), 0.0);
  auto decay = [&](std::size_t since) { return std::pow(gamma, static_cast<double>(index - since)); };
  for (std::size_t k = 0; k < d.frames.size(); ++k) {
    const Frame& f = d.frames[k];
    if (f.created_at_turn <= index) rv.created[k] = decay(f.created_at_turn);
    std::optional<std::size_t> last;
    if (f.id == 1) last = 0;  // the seed frame is active when the dialogue starts
    for (std::size_t t = 1; t <= index; ++t) {
      if (d.turns[t - 1].active_after == f.id) last = t;
    }
    if (last) rv.active[k] = decay(*last);
  }
  return rv;
}

FrameOnehots frame_onehots(std::size_t frame_count, FrameId active) {
  if (active < 1 || active > frame_count) {
    throw std::out_of_range(fmt::format("active frame {} is not among {} frames", active, frame_count));
  }
  FrameOnehots oh;
  oh.active.assign(frame_count + 1, 0.0);
  oh.new_frame.assign(frame_count + 1, 0.0);
  oh.active[active - 1] = 1.0;
  oh.new_frame[frame_count] = 1.0;
  return oh;
}

std::string_view input_key(Input in) {
  switch (in) {
    case Input::kFullActs: return "full_acts";
    case Input::kOnlyActs: return "only_acts";
    case Input::kFrames: return "frames";
    case Input::kText: return "text";
    case Input::kRecentActive: return "h_c";
    case Input::kRecentCreated: return "h_d";
    case Input::kNewFrameOnehot: return "f_n";
    case Input::kStringSimilarity: return "S_L";
    case Input::kActiveOnehot: return "f_c";
  }
  return "";
}

std::string_view input_label(Input in) {
  switch (in) {
    case Input::kFullActs: return "Full Acts";
    case Input::kOnlyActs: return "Only Acts";
    case Input::kFrames: return "Frames";
    case Input::kText: return "Text";
    default: return input_key(in);
  }
}

std::optional<Input> parse_input(std::string_view key) {
  for (Input in : kAllInputs) {
    if (input_key(in) == key || input_label(in) == key) return in;
  }
  return std::nullopt;
}

EncodedTurn encode_turn(const Dialogue& d, std::size_t index, const Dictionaries& dict, const EncodingConfig& cfg,
                        InputMask mask) {
  const Turn& turn = d.turn(index);
  EncodedTurn et;
  et.dialogue_id = d.id;
  et.turn_index = index;
  et.active = turn.active_before;
  et.active_after = turn.active_after;

  std::vector<Frame> frames = frames_before_turn(d, index);
  if (mask.removed(Input::kFrames)) {
    for (auto& f : frames) f.constraints.clear();
  }
  for (const auto& f : frames) et.frames.push_back(encode_frame(f, dict));

  const bool drop_acts = mask.removed(Input::kFullActs) || mask.removed(Input::kOnlyActs);
  const bool drop_args = mask.removed(Input::kFullActs);
  for (std::size_t p = 0; p < turn.acts.size(); ++p) {
    const auto& act = turn.acts[p];
    const Index act_idx = drop_acts ? kMasked : dict.act(act.name);
    et.acts.push_back(act_idx);
    et.act_names.push_back(act.name);
    et.act_refs.push_back(act.refs);
    for (const auto& a : act.args) {
      EncodedTriple tr;
      tr.act = act_idx;
      tr.slot = drop_args ? kMasked : dict.slot(a.value.slot);
      if (!drop_args) tr.value = encode_text(a.value.value, dict);
      tr.act_position = p;
      et.triples.push_back(std::move(tr));
      et.triple_values.push_back(a.value);
      et.triple_refs.push_back(a.ref);
    }
  }

  if (!mask.removed(Input::kText)) et.utterance = encode_text(turn.text, dict);

  if (mask.removed(Input::kStringSimilarity)) {
    et.similarity.assign(et.triples.size() * frames.size(), 0.0);
  } else {
    et.similarity = similarity_matrix(et.triple_values, frames, cfg.normalization);
  }

  et.recency = recency_vectors(d, index - 1, cfg.gamma);
  et.recency.active.resize(frames.size());
  et.recency.created.resize(frames.size());
  if (mask.removed(Input::kRecentActive)) std::fill(et.recency.active.begin(), et.recency.active.end(), 0.0);
  if (mask.removed(Input::kRecentCreated)) std::fill(et.recency.created.begin(), et.recency.created.end(), 0.0);

  et.onehots = frame_onehots(frames.size(), turn.active_before);
  if (mask.removed(Input::kActiveOnehot)) std::fill(et.onehots.active.begin(), et.onehots.active.end(), 0.0);
  if (mask.removed(Input::kNewFrameOnehot)) std::fill(et.onehots.new_frame.begin(), et.onehots.new_frame.end(), 0.0);
  return et;
}

std::vector<EncodedTurn> encode_user_turns(std::span<const Dialogue* const> dialogues, const Dictionaries& dict,
                                           const EncodingConfig& cfg, InputMask mask) {
  std::vector<EncodedTurn> out;
  for (const Dialogue* d : dialogues) {
    for (const auto& t : d->turns) {
      if (t.is_user()) out.push_back(encode_turn(*d, t.index, dict, cfg, mask));
    }
  }
  return out;
}

}  // namespace ftrack
