#pragma once

#include <filesystem>
#include <map>
#include <span>

#include "supcon_asr/common.hpp"

namespace supcon_asr {

// Count-based n-gram model over non-blank token ids 1..num_tokens plus an
// end-of-sentence event. Contexts are left-padded with kStart.
class NGramModel {
 public:
  static constexpr int kStart = -1;
  static constexpr int kEnd = -2;
  static constexpr double kBackoffFactor = 0.4;

  NGramModel() = default;
  NGramModel(int order, double smoothing_k, int num_tokens);

  int order() const { return order_; }
  double smoothing_k() const { return smoothing_k_; }
  int num_tokens() const { return num_tokens_; }
  // Tokens plus the end marker.
  int vocab_size() const { return num_tokens_ + 1; }

  void add_sentence(std::span<const int> tokens);

  // token is in 1..num_tokens or kEnd. With k > 0: add-k over the full
  // (n-1)-token context. With k == 0: stupid backoff to the longest
  // context in which the token was observed.
  double next_token_logprob(std::span<const int> context, int token) const;

  double score_sequence(std::span<const int> tokens) const;

  int count(const TokenSeq& context, int token) const;
  int context_total(const TokenSeq& context) const;

  void save(const std::filesystem::path& path) const;
  static NGramModel load(const std::filesystem::path& path);

  bool operator==(const NGramModel&) const = default;

 private:
  struct Table {
    std::map<int, int> counts;
    int total = 0;
    bool operator==(const Table&) const = default;
  };

  TokenSeq padded_context(std::span<const int> context) const;
  void check_token(int token) const;

  int order_ = 1;
  double smoothing_k_ = 0.0;
  int num_tokens_ = 0;
  std::map<TokenSeq, Table> tables_;
};

NGramModel train_lm(std::span<const TokenSeq> transcripts, int order,
                    double smoothing_k, int num_tokens);

}  // namespace supcon_asr
