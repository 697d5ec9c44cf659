#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "supcon_asr/analysis.hpp"

using namespace supcon_asr;

namespace {

double dispersion_of(const std::vector<Vector>& vs) {
  std::vector<const Vector*> ptrs;
  for (const auto& v : vs) ptrs.push_back(&v);
  return cosine_dispersion(ptrs);
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

EmbeddingSet make_set(const std::vector<std::pair<std::string, Vector>>& rows) {
  EmbeddingSet set;
  int i = 0;
  for (const auto& [t, u] : rows)
    set.entries.push_back({"u" + std::to_string(i++), t, "a", "s", u});
  return set;
}

}  // namespace

TEST(Dispersion, HandCase) {
  const double expected = (3.0 - std::sqrt(2.0)) / 3.0;
  EXPECT_NEAR(dispersion_of({vec({1, 0}), vec({0, 1}), vec({1, 1})}), expected, 1e-15);
}

TEST(Dispersion, Extremes) {
  EXPECT_NEAR(dispersion_of({vec({1, 0, 0}), vec({0, 2, 0})}), 1.0, 1e-15);
  EXPECT_NEAR(dispersion_of({vec({1, -1}), vec({-3, 3})}), 2.0, 1e-15);
  EXPECT_NEAR(dispersion_of({vec({1, 2}), vec({1, 2}), vec({2, 4})}), 0.0, 1e-15);
}

TEST(Dispersion, MatchesNaiveOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 9)(rng);
    const int dim = std::uniform_int_distribution<int>(1, 6)(rng);
    std::vector<Vector> vs;
    for (int i = 0; i < n; ++i) vs.push_back(oracle::random_unit(dim, rng) * (0.1 + i));
    const double d = dispersion_of(vs);
    EXPECT_NEAR(d, oracle::naive_dispersion(vs), 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
}

TEST(Dispersion, ScaleAndPermutationInvariant) {
  std::mt19937_64 rng(2);
  std::vector<Vector> vs;
  for (int i = 0; i < 6; ++i) vs.push_back(oracle::random_unit(4, rng));
  const double base = dispersion_of(vs);
  std::vector<Vector> scaled;
  for (std::size_t i = 0; i < vs.size(); ++i) scaled.push_back(vs[i] * (3.0 + i));
  EXPECT_NEAR(dispersion_of(scaled), base, 1e-14);
  std::shuffle(vs.begin(), vs.end(), rng);
  EXPECT_NEAR(dispersion_of(vs), base, 1e-14);
}

TEST(Dispersion, ZeroVectorRejected) {
  try {
    dispersion_of({vec({1, 0}), vec({0, 0})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kZeroVector);
  }
}

TEST(Dispersion, ReportSkipsSingletonsAndSummarizes) {
  const EmbeddingSet set = make_set({{"t0", vec({1, 0})},
                                     {"t0", vec({0, 1})},
                                     {"t1", vec({1, 0})},
                                     {"t1", vec({1, 0})},
                                     {"t2", vec({1, 1})}});
  const DispersionReport r = within_transcript_dispersion(set);
  ASSERT_EQ(r.num_transcripts, 2);
  EXPECT_EQ(r.per_transcript[0].transcript_id, "t0");
  EXPECT_NEAR(r.per_transcript[0].dispersion, 1.0, 1e-15);
  EXPECT_EQ(r.per_transcript[1].dispersion, 0.0);
  EXPECT_NEAR(r.mean, 0.5, 1e-15);
  EXPECT_NEAR(r.median, 0.5, 1e-15);
  EXPECT_NEAR(r.std_dev, 0.5, 1e-15);
}

TEST(Dispersion, NoEligibleTranscripts) {
  try {
    within_transcript_dispersion(make_set({{"t0", vec({1})}, {"t1", vec({1})}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNoEligibleTranscripts);
  }
}

TEST(Comparison, IdenticalReportsGiveZero) {
  const DispersionReport r = within_transcript_dispersion(
      make_set({{"t0", vec({1, 0})}, {"t0", vec({1, 1})}, {"t1", vec({0, 1})},
                {"t1", vec({1, 1})}}));
  const DispersionComparison cmp = compare_dispersion(r, r);
  EXPECT_EQ(cmp.relative_mean_reduction, 0.0);
  EXPECT_EQ(cmp.fraction_reduced, 0.0);
  for (double d : cmp.deltas) EXPECT_EQ(d, 0.0);
}

TEST(Comparison, ReductionAndFraction) {
  const DispersionReport a = within_transcript_dispersion(
      make_set({{"t0", vec({1, 0})}, {"t0", vec({0, 1})}, {"t1", vec({1, 0})},
                {"t1", vec({0, 1})}}));
  const DispersionReport b = within_transcript_dispersion(
      make_set({{"t0", vec({1, 0})}, {"t0", vec({1, 0})}, {"t1", vec({1, 0})},
                {"t1", vec({0, 2})}}));
  const DispersionComparison cmp = compare_dispersion(a, b);
  EXPECT_NEAR(cmp.relative_mean_reduction, 0.5, 1e-15);
  EXPECT_EQ(cmp.fraction_reduced, 0.5);
}

TEST(Comparison, TranscriptSetMismatch) {
  const DispersionReport a = within_transcript_dispersion(
      make_set({{"t0", vec({1, 0})}, {"t0", vec({0, 1})}}));
  const DispersionReport b = within_transcript_dispersion(
      make_set({{"t9", vec({1, 0})}, {"t9", vec({0, 1})}}));
  try {
    compare_dispersion(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTranscriptSetMismatch);
  }
}

TEST(Embeddings, IndependentOfBatchGrouping) {
  CorpusSpec spec;
  spec.num_accents = 2;
  spec.speakers_per_accent = 2;
  spec.num_transcripts = 5;
  const Corpus c = generate_corpus(spec);
  ModelShape shape;
  shape.feature_dim = c.feature_dim;
  shape.vocab_size = c.vocab.size();
  const ModelParams params = init_model(shape, 3);
  std::vector<const Utterance*> utts;
  for (const auto& u : c.utterances) utts.push_back(&u);
  const EmbeddingSet whole = extract_embeddings(params, utts);
  ASSERT_EQ(whole.entries.size(), utts.size());
  for (int bs : {1, 3, 7}) {
    const EmbeddingSet chunked = extract_embeddings(params, utts, bs);
    ASSERT_EQ(chunked.entries.size(), utts.size());
    for (std::size_t i = 0; i < utts.size(); ++i) {
      EXPECT_EQ(chunked.entries[i].utterance_id, utts[i]->id);
      EXPECT_LE((chunked.entries[i].u - whole.entries[i].u).cwiseAbs().maxCoeff(), 1e-14);
    }
  }
}
