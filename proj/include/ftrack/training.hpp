#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ftrack/adam.hpp"
#include "ftrack/baseline.hpp"
#include "ftrack/model.hpp"

namespace ftrack {

// ---------------------------------------------------------------------------
// Folds

struct FoldSpec {
  std::size_t index = 0;
  std::vector<std::string> train;       // excludes validation
  std::vector<std::string> validation;  // held out from training for early stopping
  std::vector<std::string> test;

  Json to_json() const;
  static FoldSpec from_json(const Json& j);
  bool operator==(const FoldSpec&) const = default;
};

// Seeded split into `k` test folds; `validation_fraction` of each fold's
// training dialogues is withheld for early stopping.
std::vector<FoldSpec> make_folds(const Corpus& corpus, std::size_t k, double validation_fraction, std::uint64_t seed);

// Test folds from a file holding {"folds": [[dialogue ids], ...]}; every
// dialogue must appear exactly once. Validation is drawn as in make_folds.
std::vector<FoldSpec> load_folds(const std::filesystem::path& path, const Corpus& corpus, double validation_fraction,
                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

enum class StopMetric { kValidationLoss, kValidationAccuracy };

struct TrainConfig {
  std::size_t folds = 10;
  double validation_fraction = 0.2;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  ad::AdamConfig adam;
  StopMetric stop_metric = StopMetric::kValidationLoss;
  bool shuffle_constraints = true;
  std::size_t jobs = 1;  // folds trained concurrently
  std::uint64_t seed = 1;

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;       // mean per turn
  double validation_loss = 0.0;  // mean per turn; training loss when there is no validation set
  double validation_slot_accuracy = 0.0;
  double validation_act_accuracy = 0.0;
};

struct TrainResult {
  Dictionaries dictionaries;
  FrameTracker model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;

  Json history_json() const;
};

using EpochCallback = std::function<void(std::size_t fold, const EpochRecord&)>;

// Trains on fold.train, stopping on fold.validation. Throws TrainingDiverged
// on a non-finite loss. The returned model holds the best-validation weights.
TrainResult train_fold(const Corpus& corpus, const FoldSpec& fold, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, InputMask mask = {}, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Evaluation

// Partition of user turns used for the per-class breakdown. Frame changes are
// split by how the new active frame is reached, the rest by what the turn refers to.
enum class TurnClass : std::uint8_t {
  kOpening,               // first user turn, no frame change
  kFrameChangeNewValue,   // switch to a frame created in this turn
  kSwitchWithoutValues,   // switch to an existing frame by a bare switch_frame
  kFrameChangeOffer,      // other switch right after a wizard offer
  kFrameChangeNoOffer,    // other switch without a preceding offer
  kRequestCompare,        // no change, request_compare present
  kOtherFrameReference,   // no change, yet some reference leaves the active frame
  kNoChangeNewValue,      // no change, the user informs a value
  kNoChangeAfterOffer,    // no change right after a wizard offer
  kNoChangeRequest,       // no change, requests only
  kOther,
};

inline constexpr std::size_t kTurnClassCount = 11;

std::string_view turn_class_key(TurnClass c);
TurnClass classify_turn(const Dialogue& d, std::size_t index);

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  void add(bool ok) {
    correct += ok ? 1 : 0;
    ++total;
  }
  void add(const Tally& o) {
    correct += o.correct;
    total += o.total;
  }
  // Percentage; 0 for an empty tally.
  double accuracy() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total); }
  bool operator==(const Tally&) const = default;
};

struct TurnEval {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  TurnClass turn_class = TurnClass::kOther;
  std::vector<std::pair<std::string, std::string>> triple_keys;  // (act, slot)
  std::vector<bool> triple_correct;
  std::vector<bool> act_correct;
};

struct FoldEval {
  std::size_t fold = 0;
  Tally slot, act;
  std::vector<TurnEval> turns;
};

using Predictor = std::function<ReferencePrediction(const Dialogue&, const EncodedTurn&)>;

// Scores `predict` on every user turn of the listed dialogues. Slot-based:
// triple frame equals gold; act-based: predicted set equals gold set.
FoldEval evaluate_fold(const Corpus& corpus, const std::vector<std::string>& dialogue_ids, const Dictionaries& dict,
                       const EncodingConfig& enc, InputMask mask, const Predictor& predict, std::size_t fold = 0);

FoldEval evaluate_model(FrameTracker& model, const Dictionaries& dict, const Corpus& corpus, const FoldSpec& fold,
                        InputMask mask = {});
FoldEval evaluate_baseline(const Corpus& corpus, const FoldSpec& fold, const BaselineRules& rules,
                           const EncodingConfig& enc = {});

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single fold
};

MeanStd mean_std(const std::vector<double>& xs);

struct ClassRow {
  TurnClass turn_class = TurnClass::kOther;
  std::size_t turns = 0;
  Tally slot, act;
};

struct ActSlotRow {
  std::string act, slot;
  Tally slot_accuracy;
};

struct MetricsReport {
  std::string system;
  std::vector<std::size_t> folds;
  std::vector<double> fold_slot_accuracy, fold_act_accuracy;
  MeanStd slot, act;
  std::size_t turns = 0;
  std::array<ClassRow, kTurnClassCount> classes{};
  std::vector<ActSlotRow> act_slots;  // pairs with more than min_count triples, sorted by (act, slot)
  std::size_t act_slot_min_count = 10;

  Json to_json() const;
  std::string to_csv() const;
};

// Accuracy mean and std over folds; class and act-slot tables pool all folds.
MetricsReport summarize(std::string system, const std::vector<FoldEval>& folds, std::size_t act_slot_min_count = 10);

std::string format_report(const MetricsReport& r);

// ---------------------------------------------------------------------------
// Lesion study

struct LesionColumn {
  Input input = Input::kFullActs;
  MeanStd slot, act;
};

struct LesionTable {
  MeanStd reference_slot, reference_act;  // nothing removed
  std::vector<LesionColumn> columns;      // one per removed input, in the order requested

  Json to_json() const;
  std::string to_csv() const;
  std::string format() const;
};

// Retrains every fold once per removed input (plus once with nothing removed)
// and reports mean accuracies over folds.
LesionTable lesion_study(const Corpus& corpus, const std::vector<FoldSpec>& folds, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, const std::vector<Input>& inputs = {kAllInputs.begin(), kAllInputs.end()});

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ftrack
