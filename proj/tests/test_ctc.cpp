#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "supcon_asr/ctc.hpp"
#include "supcon_asr/lm.hpp"

using namespace supcon_asr;

namespace {

Posteriorgram uniform(int frames, int vocab) {
  return {Matrix::Constant(frames, vocab, -std::log(static_cast<double>(vocab)))};
}

// Posteriorgram whose per-frame argmax follows `path`.
Posteriorgram peaked(const std::vector<int>& path, int vocab) {
  Matrix logits = Matrix::Zero(static_cast<Eigen::Index>(path.size()), vocab);
  for (std::size_t t = 0; t < path.size(); ++t) logits(t, path[t]) = 3.0;
  return {log_softmax_rows(logits)};
}

TokenSeq random_target(int max_len, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, max_len), tok(1, vocab - 1);
  TokenSeq y(len(rng));
  for (auto& v : y) v = tok(rng);
  return y;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kInvalidArgument;
}

}  // namespace

TEST(CtcLogits, ZeroHeadIsUniform) {
  CtcHead head{Matrix::Zero(3, 4), Vector::Zero(3)};
  FrameRepresentation frames{Matrix::Random(5, 4), 5};
  const Posteriorgram post = ctc_logits(head, frames);
  EXPECT_EQ(post.frames(), 5);
  for (int t = 0; t < 5; ++t)
    for (int v = 0; v < 3; ++v) EXPECT_NEAR(post.log_probs(t, v), -std::log(3.0), 1e-15);
}

TEST(CtcLogits, BlankBiasSaturates) {
  CtcHead head{Matrix::Zero(4, 2), Vector::Zero(4)};
  head.bias(0) = 10.0;
  FrameRepresentation frames{Matrix::Random(3, 2), 3};
  const Posteriorgram post = ctc_logits(head, frames);
  for (int t = 0; t < 3; ++t) EXPECT_GT(std::exp(post.log_probs(t, 0)), 0.999);
}

TEST(CtcLogits, RowsNormalize) {
  const CtcHead head = init_ctc_head(3, 4, 5);
  FrameRepresentation frames{Matrix::Random(6, 4), 4};
  const Posteriorgram post = ctc_logits(head, frames);
  EXPECT_EQ(post.frames(), 4);  // padded rows dropped
  for (int t = 0; t < post.frames(); ++t)
    EXPECT_NEAR(post.log_probs.row(t).array().exp().sum(), 1.0, 1e-12);
}

TEST(CtcLoss, SingleFrameUniform) {
  const TokenSeq y{1};
  EXPECT_NEAR(ctc_loss_and_grad(uniform(1, 3), y).loss, std::log(3.0), 1e-12);
  EXPECT_NEAR(brute_force_ctc(uniform(1, 3), y), 1.0986123, 1e-7);
}

TEST(CtcLoss, TwoFrameHandEnumeration) {
  Matrix probs(2, 2);
  probs << 0.3, 0.7, 0.6, 0.4;  // columns: blank, a
  const Posteriorgram post{probs.array().log().matrix()};
  const double expected =
      -std::log(0.7 * 0.4 + 0.7 * 0.6 + 0.3 * 0.4);
  const TokenSeq y{1};
  EXPECT_NEAR(ctc_loss_and_grad(post, y).loss, expected, 1e-12);
}

TEST(CtcLoss, RepeatNeedsBlank) {
  const TokenSeq y{1, 1};
  EXPECT_EQ(ctc_min_frames(y), 3);
  EXPECT_EQ(kind_of([&] { ctc_loss_and_grad(uniform(1, 3), y); }), ErrorKind::kInfeasible);
  EXPECT_EQ(kind_of([&] { brute_force_ctc(uniform(1, 3), y); }), ErrorKind::kInfeasible);
  EXPECT_EQ(kind_of([&] { ctc_loss_and_grad(uniform(2, 3), y); }), ErrorKind::kInfeasible);
  EXPECT_NO_THROW(ctc_loss_and_grad(uniform(3, 3), y));
}

TEST(CtcLoss, BruteForceRefusesHugeInstances) {
  const TokenSeq y{1};
  EXPECT_EQ(kind_of([&] { brute_force_ctc(uniform(12, 5), y); }), ErrorKind::kTooLarge);
}

TEST(CtcLoss, MatchesBruteForce) {
  std::mt19937_64 rng(101);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int frames = std::uniform_int_distribution<int>(1, 6)(rng);
    const int vocab = std::uniform_int_distribution<int>(2, 4)(rng);
    const TokenSeq y = random_target(3, vocab, rng);
    if (ctc_min_frames(y) > frames) continue;
    const Posteriorgram post = oracle::random_posteriorgram(frames, vocab, rng);
    EXPECT_NEAR(ctc_loss_and_grad(post, y).loss, brute_force_ctc(post, y), 1e-8);
    ++checked;
  }
  EXPECT_GE(checked, 200);
}

TEST(CtcLoss, GradientRowsSumToZero) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Posteriorgram post = oracle::random_posteriorgram(8, 5, rng);
    const TokenSeq y = random_target(3, 5, rng);
    const CtcResult r = ctc_loss_and_grad(post, y);
    for (int t = 0; t < r.grad_logits.rows(); ++t)
      EXPECT_NEAR(r.grad_logits.row(t).sum(), 0.0, 1e-9);
  }
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(202);
  int checked = 0;
  while (checked < 60) {
    const int frames = std::uniform_int_distribution<int>(1, 6)(rng);
    const int vocab = std::uniform_int_distribution<int>(2, 4)(rng);
    const TokenSeq y = random_target(3, vocab, rng);
    if (ctc_min_frames(y) > frames) continue;
    const Matrix logits = oracle::random_logits(frames, vocab, rng);
    const CtcResult r = ctc_loss_and_grad({log_softmax_rows(logits)}, y);
    auto loss = [&](const Vector& flat) {
      const Matrix l = Eigen::Map<const Matrix>(flat.data(), frames, vocab);
      return ctc_loss_and_grad({log_softmax_rows(l)}, y).loss;
    };
    const Vector flat = Eigen::Map<const Vector>(logits.data(), logits.size());
    const Vector numeric = oracle::numeric_gradient(loss, flat);
    const Vector analytic = Eigen::Map<const Vector>(r.grad_logits.data(), r.grad_logits.size());
    EXPECT_LE(oracle::relative_error(analytic, numeric), 1e-5);
    ++checked;
  }
}

TEST(CtcHead, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const CtcHead head = init_ctc_head(4, 3, 9);
  FrameRepresentation frames{oracle::random_logits(6, 3, rng, 1.0), 5};
  frames.values.row(5).setZero();
  const TokenSeq y{2, 3};
  CtcHead head_grad = head.zeros_like();
  const CtcResult r = ctc_loss_and_grad(ctc_logits(head, frames), y);
  const Matrix grad_frames = ctc_head_backward(head, frames, r.grad_logits, head_grad);
  EXPECT_EQ(grad_frames.rows(), 6);
  EXPECT_EQ(grad_frames.row(5).norm(), 0.0);

  auto by_frames = [&](const Vector& flat) {
    FrameRepresentation f = frames;
    f.values = Eigen::Map<const Matrix>(flat.data(), 6, 3);
    return ctc_loss_and_grad(ctc_logits(head, f), y).loss;
  };
  const Vector x = Eigen::Map<const Vector>(frames.values.data(), frames.values.size());
  EXPECT_LE(oracle::relative_error(
                Eigen::Map<const Vector>(grad_frames.data(), grad_frames.size()),
                oracle::numeric_gradient(by_frames, x)),
            1e-5);

  auto by_weight = [&](const Vector& flat) {
    CtcHead h = head;
    h.weight = Eigen::Map<const Matrix>(flat.data(), 4, 3);
    return ctc_loss_and_grad(ctc_logits(h, frames), y).loss;
  };
  const Vector w = Eigen::Map<const Vector>(head.weight.data(), head.weight.size());
  EXPECT_LE(oracle::relative_error(
                Eigen::Map<const Vector>(head_grad.weight.data(), head_grad.weight.size()),
                oracle::numeric_gradient(by_weight, w)),
            1e-5);

  auto by_bias = [&](const Vector& b) {
    CtcHead h = head;
    h.bias = b;
    return ctc_loss_and_grad(ctc_logits(h, frames), y).loss;
  };
  EXPECT_LE(oracle::relative_error(head_grad.bias, oracle::numeric_gradient(by_bias, head.bias)),
            1e-5);
}

TEST(Greedy, CollapsesRepeatsAndBlanks) {
  EXPECT_EQ(greedy_decode(peaked({0, 1, 1, 0, 2}, 3)).tokens, (TokenSeq{1, 2}));
  EXPECT_TRUE(greedy_decode(peaked({0, 0, 0}, 3)).tokens.empty());
  EXPECT_EQ(greedy_decode(peaked({1, 0, 1}, 3)).tokens, (TokenSeq{1, 1}));
}

TEST(Greedy, ScoreIsBestPathLogProb) {
  const Posteriorgram post = peaked({0, 2, 1}, 3);
  double expected = 0.0;
  for (int t = 0; t < 3; ++t) expected += post.log_probs.row(t).maxCoeff();
  EXPECT_NEAR(greedy_decode(post).score, expected, 1e-12);
}

TEST(Greedy, TiesGoToLowestIndex) {
  const Posteriorgram post = uniform(4, 3);
  EXPECT_TRUE(greedy_decode(post).tokens.empty());
}

TEST(Beam, WidthOneMatchesGreedy) {
  std::mt19937_64 rng(11);
  BeamOptions opts;
  opts.beam_width = 1;
  for (int trial = 0; trial < 100; ++trial) {
    const int frames = std::uniform_int_distribution<int>(1, 12)(rng);
    const int vocab = std::uniform_int_distribution<int>(2, 6)(rng);
    const Posteriorgram post = oracle::random_posteriorgram(frames, vocab, rng);
    EXPECT_EQ(beam_search_decode(post, opts).tokens, greedy_decode(post).tokens);
    EXPECT_EQ(greedy_decode(post).tokens, oracle::naive_greedy(post));
  }
}

TEST(Beam, WideBeamMatchesExhaustiveSearch) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int frames = std::uniform_int_distribution<int>(1, 5)(rng);
    const int vocab = std::uniform_int_distribution<int>(2, 3)(rng);
    const Posteriorgram post = oracle::random_posteriorgram(frames, vocab, rng, 1.0);
    BeamOptions opts;
    opts.beam_width = static_cast<int>(std::pow(vocab, frames));
    const DecodeResult got = beam_search_decode(post, opts);
    const oracle::Decoded want = oracle::exhaustive_decode(post);
    EXPECT_EQ(got.tokens, want.tokens);
    EXPECT_NEAR(got.score, want.score, 1e-9);
  }
}

TEST(Beam, WideBeamWithLmMatchesExhaustiveSearch) {
  std::mt19937_64 rng(13);
  const std::vector<TokenSeq> text{{1, 2}, {2, 1, 2}, {1}};
  const NGramModel lm = train_lm(text, 2, 0.5, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const int frames = std::uniform_int_distribution<int>(1, 5)(rng);
    const Posteriorgram post = oracle::random_posteriorgram(frames, 3, rng, 1.0);
    BeamOptions opts;
    opts.beam_width = static_cast<int>(std::pow(3, frames));
    opts.lm = &lm;
    opts.lm_weight = 0.7;
    opts.word_bonus = 0.2;
    const DecodeResult got = beam_search_decode(post, opts);
    const oracle::Decoded want = oracle::exhaustive_decode(post, &lm, 0.7, 0.2);
    EXPECT_EQ(got.tokens, want.tokens);
    EXPECT_NEAR(got.score, want.score, 1e-9);
  }
}

TEST(Beam, ZeroLmWeightIsNeutral) {
  std::mt19937_64 rng(14);
  const std::vector<TokenSeq> text{{1, 2, 3}, {3, 1}};
  const NGramModel lm = train_lm(text, 3, 0.1, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const Posteriorgram post = oracle::random_posteriorgram(7, 4, rng);
    BeamOptions plain;
    plain.beam_width = 4;
    BeamOptions fused = plain;
    fused.lm = &lm;
    fused.lm_weight = 0.0;
    const DecodeResult a = beam_search_decode(post, plain);
    const DecodeResult b = beam_search_decode(post, fused);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.score, b.score);
  }
}

// Pruned prefix search is not monotone in the width step by step, but no
// width can beat the unpruned search.
TEST(Beam, UnprunedScoreDominatesNarrowerBeams) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const int frames = std::uniform_int_distribution<int>(2, 5)(rng);
    const Posteriorgram post = oracle::random_posteriorgram(frames, 3, rng, 1.0);
    BeamOptions full;
    full.beam_width = static_cast<int>(std::pow(3, frames));
    const double best = beam_search_decode(post, full).score;
    for (int width = 1; width < full.beam_width; ++width) {
      BeamOptions opts;
      opts.beam_width = width;
      EXPECT_LE(beam_search_decode(post, opts).score, best + 1e-12);
    }
  }
}

TEST(Beam, RejectsBadWidth) {
  BeamOptions opts;
  opts.beam_width = 0;
  EXPECT_EQ(kind_of([&] { beam_search_decode(uniform(2, 3), opts); }), ErrorKind::kInvalidBeam);
}

TEST(Wer, HandCases) {
  const std::vector<TokenSeq> ref{{1, 2, 3}};
  EXPECT_DOUBLE_EQ(word_error_rate(ref, ref), 0.0);
  EXPECT_DOUBLE_EQ(word_error_rate(ref, std::vector<TokenSeq>{{1, 3}}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(word_error_rate(ref, std::vector<TokenSeq>{{}}), 1.0);
  EXPECT_EQ(edit_distance(TokenSeq{1, 2}, TokenSeq{2, 1}), 2);
  EXPECT_EQ(edit_distance(TokenSeq{}, TokenSeq{4, 4}), 2);
}

TEST(Wer, PoolsEditsOverUtterances) {
  const std::vector<TokenSeq> refs{{1, 2, 3, 4}, {5}};
  const std::vector<TokenSeq> hyps{{1, 2, 3, 4}, {6}};
  const WerStats s = wer_stats(refs, hyps);
  EXPECT_EQ(s.edits, 1);
  EXPECT_EQ(s.ref_len, 5);
  EXPECT_EQ(s.n_utt, 2);
  EXPECT_DOUBLE_EQ(s.wer(), 0.2);
}

TEST(Wer, ZeroOnlyWhenAllMatch) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenSeq> refs{random_target(5, 4, rng), random_target(5, 4, rng)};
    std::vector<TokenSeq> hyps{random_target(5, 4, rng), random_target(5, 4, rng)};
    const double w = word_error_rate(refs, hyps);
    EXPECT_GE(w, 0.0);
    EXPECT_EQ(w == 0.0, refs == hyps);
  }
}

TEST(Wer, Errors) {
  const std::vector<TokenSeq> one{{1}};
  const std::vector<TokenSeq> two{{1}, {2}};
  EXPECT_EQ(kind_of([&] { wer_stats(one, two); }), ErrorKind::kLengthMismatch);
  const std::vector<TokenSeq> empty_ref{{}};
  EXPECT_EQ(kind_of([&] { wer_stats(empty_ref, one); }), ErrorKind::kEmptyReference);
}
