#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "supcon_asr/corpus.hpp"
#include "supcon_asr/model.hpp"

namespace supcon_asr {

enum class TrainMode { kCtcOnly, kCtcPlusSupCon };
enum class LrSchedule { kConstant, kWarmupCosine };
enum class AnchorMode { kAll, kOnePerTranscript };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  double lambda_max = 0.1;
  double ramp_ratio = 0.1;
  double temperature = 0.1;
  int t_max = 0;  // 0: max_epochs * batches per epoch
  int m_transcripts = 8;
  int k_utterances = 4;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double lr_warmup_ratio = 0.1;  // fraction of t_max, warmup_cosine only
  int warmup_epochs = 1;
  int warmup_batch_size = 4;
  int patience = 5;
  int max_epochs = 40;  // phase-2 epochs; 0 trains the head only
  TrainMode mode = TrainMode::kCtcPlusSupCon;
  AnchorMode anchors = AnchorMode::kAll;
  std::uint64_t seed = 1;
  ModelShape model;

  void validate() const;
};

// lambda * min(1, t / (r * T_max))
double ramp_weight(const TrainConfig& cfg, long long t);

double learning_rate_at(const TrainConfig& cfg, long long t, long long t_max);

using Rng = std::mt19937_64;

// Groups training utterances by transcript and draws M transcripts x K
// utterances from distinct speakers.
class BalancedSampler {
 public:
  explicit BalancedSampler(std::span<const Utterance* const> utterances);

  std::vector<const Utterance*> sample(int m_transcripts, int k_utterances,
                                       Rng& rng) const;

 private:
  struct Group {
    std::string transcript_id;
    // utterances of each distinct speaker, speakers in sorted order
    std::vector<std::vector<const Utterance*>> by_speaker;
  };
  std::vector<Group> groups_;
};

std::vector<std::string> sample_balanced_batch(
    std::span<const Utterance* const> train, int m_transcripts, int k_utterances,
    Rng& rng);

struct ObjectiveOptions {
  double ctc_weight = 1.0;
  double supcon_weight = 0.0;  // lambda_t
  bool with_supcon = false;
  double temperature = 0.1;
  AnchorMode anchors = AnchorMode::kAll;
};

struct ObjectiveResult {
  double loss = 0.0;
  double ctc_loss = 0.0;
  double supcon_loss = 0.0;
  ModelParams grad;
};

// ctc_weight * mean CTC loss + supcon_weight * SupCon loss, and its exact
// gradient with respect to every parameter.
ObjectiveResult compute_objective(const ModelParams& params,
                                  std::span<const Utterance* const> batch,
                                  const ObjectiveOptions& opts);

double mean_ctc_loss(const ModelParams& params,
                     std::span<const Utterance* const> utterances);

struct AdamState {
  ModelParams first;
  ModelParams second;
  long long updates[3] = {0, 0, 0};  // per parameter group
};

struct TrainState {
  long long step = 0;
  int epoch = 0;
  ModelParams params;
  AdamState adam;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  static TrainState fresh(ModelParams params);
};

// Decoupled-weight-decay Adam on the groups flagged in update_group.
void adamw_update(TrainState& state, const ModelParams& grad, double lr,
                  const TrainConfig& cfg, const bool update_group[3]);

struct StepResult {
  double loss = 0.0;
  double ctc_loss = 0.0;
  double supcon_loss = 0.0;
  double lambda_t = 0.0;
};

// One optimizer step on the combined objective. t_max is the resolved
// total step budget used by the ramp and learning-rate schedules.
StepResult combined_step(TrainState& state, std::span<const Utterance* const> batch,
                         const TrainConfig& cfg, long long t_max);

struct HistoryRow {
  long long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double ctc_loss = 0.0;
  double supcon_loss = 0.0;
  double lambda_t = 0.0;
  double val_loss = 0.0;
};

void write_history(std::span<const HistoryRow> history,
                   const std::filesystem::path& path);

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Returns true when val_loss is a new best.
  bool observe(double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  int epochs_since_improvement() const { return since_best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
};

struct TrainOutput {
  ModelParams params;  // best validation epoch
  std::vector<HistoryRow> history;
  int best_epoch = 0;
  long long steps = 0;
  long long t_max = 0;
};

TrainOutput train(const Corpus& corpus, const SplitPlan& split, const TrainConfig& cfg);

std::vector<const Utterance*> select_utterances(const Corpus& corpus,
                                                std::span<const std::string> ids);

}  // namespace supcon_asr
