#pragma once

#include <cstdint>
#include <span>

#include "supcon_asr/common.hpp"
#include "supcon_asr/encoder.hpp"
#include "supcon_asr/lm.hpp"

namespace supcon_asr {

// Linear classification head over encoder frames.
struct CtcHead {
  Matrix weight;  // V x D
  Vector bias;    // V

  int vocab_size() const { return static_cast<int>(weight.rows()); }
  CtcHead zeros_like() const;
  bool operator==(const CtcHead& o) const {
    return weight == o.weight && bias == o.bias;
  }
};

CtcHead init_ctc_head(int vocab_size, int hidden_dim, std::uint64_t seed);

struct Posteriorgram {
  Matrix log_probs;  // T~ x V

  int frames() const { return static_cast<int>(log_probs.rows()); }
  int vocab_size() const { return static_cast<int>(log_probs.cols()); }
};

// Log-softmax of the head applied to the valid rows of frames.
Posteriorgram ctc_logits(const CtcHead& head, const FrameRepresentation& frames);

struct CtcResult {
  double loss = 0.0;
  Matrix grad_logits;  // T~ x V, gradient w.r.t. pre-softmax logits
};

// Minimum number of frames needed to emit target (repeats need a blank).
int ctc_min_frames(std::span<const int> target);

CtcResult ctc_loss_and_grad(const Posteriorgram& post, std::span<const int> target);

// Exhaustive path enumeration; testing oracle for ctc_loss_and_grad.
double brute_force_ctc(const Posteriorgram& post, std::span<const int> target);

// Back-propagates per-frame logit gradients through the head.
// Returns the gradient w.r.t. the padded frame matrix.
Matrix ctc_head_backward(const CtcHead& head, const FrameRepresentation& frames,
                         const Matrix& grad_logits, CtcHead& head_grad);

struct DecodeResult {
  TokenSeq tokens;
  double score = 0.0;
};

DecodeResult greedy_decode(const Posteriorgram& post);

struct BeamOptions {
  int beam_width = 16;
  const NGramModel* lm = nullptr;
  double lm_weight = 0.5;
  double word_bonus = 0.0;
};

// Prefix beam search. Hypotheses are pruned by their best single-path
// score (plus fusion terms) and the survivor with the highest summed
// probability is returned; ties go to the lexicographically smaller prefix.
DecodeResult beam_search_decode(const Posteriorgram& post, const BeamOptions& opts);

struct WerStats {
  std::int64_t edits = 0;
  std::int64_t ref_len = 0;
  std::int64_t n_utt = 0;

  double wer() const {
    return ref_len == 0 ? 0.0 : static_cast<double>(edits) / ref_len;
  }
};

int edit_distance(std::span<const int> ref, std::span<const int> hyp);

WerStats wer_stats(std::span<const TokenSeq> refs, std::span<const TokenSeq> hyps);

double word_error_rate(std::span<const TokenSeq> refs, std::span<const TokenSeq> hyps);

}  // namespace supcon_asr
