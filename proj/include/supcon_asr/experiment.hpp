#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "supcon_asr/analysis.hpp"
#include "supcon_asr/corpus.hpp"
#include "supcon_asr/ctc.hpp"
#include "supcon_asr/lm.hpp"
#include "supcon_asr/trainer.hpp"

namespace supcon_asr {

struct DecodeConfig {
  int beam_width = 16;
  int lm_order = 4;
  double lm_smoothing_k = 0.1;
  double lm_weight = 0.5;
  double word_bonus = 0.0;
  bool use_lm = true;
};

enum class ProtocolChoice { kUnseenTranscript, kUnseenAccent, kBoth };

struct ExperimentConfig {
  CorpusSpec corpus;
  TrainConfig train;
  DecodeConfig decode;
  ProtocolChoice protocol = ProtocolChoice::kBoth;
  int ut_folds = 0;                     // 0: speakers per accent
  std::vector<std::string> ua_accents;  // empty: every accent
  int num_seeds = 3;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::filesystem::path output_dir = "out";
};

// JSON mirrors the struct field names; unknown keys are rejected.
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Applies "key=value" where key is e.g. "train.lambda_max",
// "corpus.noise_scale" or a bare "lambda_max". Bare keys are looked up in
// corpus, train, train.model, decode and the top level, in that order.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

// Root seed expanded per (seed index) so that runs are reproducible and
// independent of scheduling.
std::uint64_t run_seed(std::uint64_t root, int seed_index);

std::vector<SplitProtocol> protocols_for(const ExperimentConfig& cfg,
                                         const Corpus& corpus);

struct UtteranceHypothesis {
  std::string id;
  TokenSeq greedy;
  double greedy_score = 0.0;
  TokenSeq beam;
  double beam_score = 0.0;
};

struct Evaluation {
  WerStats greedy;
  WerStats beam;  // beam search, fused with the LM when enabled
  std::vector<UtteranceHypothesis> hypotheses;
};

// LM over the distinct transcripts of the training split.
NGramModel train_split_lm(const Corpus& corpus, const SplitPlan& split,
                          const DecodeConfig& decode);

Evaluation evaluate(const ModelParams& params,
                    std::span<const Utterance* const> utterances,
                    const DecodeConfig& decode, const NGramModel* lm);

void write_hypotheses_tsv(const Evaluation& eval, const Vocabulary& vocab,
                          const std::filesystem::path& path);

std::string evaluation_json(const Evaluation& eval);

struct RunResult {
  std::string protocol;   // "ut" or "ua"
  std::string condition;  // fold or held-out accent
  int seed_index = 0;
  TrainMode mode = TrainMode::kCtcOnly;
  double greedy_wer = 0.0;
  double lm_wer = 0.0;
  int best_epoch = 0;
  long long steps = 0;
  DispersionReport dispersion;
};

struct ConditionComparison {
  std::string protocol;
  std::string condition;
  int seed_index = 0;
  DispersionComparison dispersion;  // a = CTC, b = SupCon
};

struct ExperimentResult {
  std::vector<RunResult> runs;
  std::vector<ConditionComparison> comparisons;
};

// Mean WER of one protocol/objective across every run.
struct ProtocolSummary {
  double greedy_wer = 0.0;
  double lm_wer = 0.0;
  double dispersion_mean = 0.0;
  int runs = 0;
};

ProtocolSummary summarize(const ExperimentResult& result, const std::string& protocol,
                          TrainMode mode);

struct DispersionAggregate {
  double ctc_mean = 0.0;
  double supcon_mean = 0.0;
  double relative_reduction = 0.0;
  double fraction_reduced = 0.0;  // pooled over every (run, transcript)
  int transcripts = 0;
};

DispersionAggregate aggregate_dispersion(const ExperimentResult& result,
                                         const std::string& protocol);

// Trains CTC-only and CTC+SupCon for every protocol condition and seed,
// evaluates both decoders and compares dispersion. Writes runs.csv,
// conditions.csv, table.csv and dispersion.json into output_dir when
// write_files is set.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_files = true,
                                bool verbose = false);

}  // namespace supcon_asr
