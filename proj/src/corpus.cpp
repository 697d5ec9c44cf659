#include "supcon_asr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace supcon_asr {

namespace {

using nlohmann::json;

std::string padded(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, what);
}

// Evenly spaced picks of ceil(n / 10) items out of n.
std::set<int> validation_picks(int n) {
  std::set<int> picks;
  if (n <= 0) return picks;
  const int k = (n + 9) / 10;
  for (int i = 0; i < k; ++i) picks.insert((2 * i + 1) * n / (2 * k));
  return picks;
}

std::vector<std::string> sorted_transcripts(const Corpus& corpus) {
  std::set<std::string> ids;
  for (const auto& u : corpus.utterances) ids.insert(u.transcript_id);
  return {ids.begin(), ids.end()};
}

}  // namespace

Vocabulary Vocabulary::synthetic(int num_tokens) {
  Vocabulary v;
  v.symbols.emplace_back(kBlankSymbol);
  for (int i = 1; i <= num_tokens; ++i) v.symbols.push_back("t" + std::to_string(i));
  return v;
}

void Vocabulary::validate() const {
  require(size() >= 2, "vocabulary needs at least blank and one token");
  require(symbols[kBlankIndex] == kBlankSymbol, "symbol 0 must be <blank>");
  std::set<std::string> seen(symbols.begin(), symbols.end());
  require(seen.size() == symbols.size(), "vocabulary symbols must be unique");
}

const Utterance& Corpus::at(const std::string& id) const {
  for (const auto& u : utterances)
    if (u.id == id) return u;
  throw Error(ErrorKind::kInvalidArgument, "unknown utterance id " + id);
}

void CorpusSpec::validate() const {
  require(num_accents >= 1 && speakers_per_accent >= 1 && num_transcripts >= 1,
          "corpus counts must be >= 1");
  require(vocab_tokens >= 1, "vocab_tokens must be >= 1");
  require(transcript_len_min >= 1 && transcript_len_min <= transcript_len_max,
          "bad transcript_len range");
  require(frames_per_token >= 1 && frame_jitter >= 0 &&
              frame_jitter < frames_per_token,
          "frame_jitter must be smaller than frames_per_token");
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(accent_rank >= 0, "accent_rank must be >= 0");
  require(accent_shift_scale >= 0 && speaker_jitter_scale >= 0 &&
              noise_scale >= 0,
          "scales must be >= 0");
  require(vocab_tokens >= 2 || transcript_len_max == 1,
          "a single-token vocabulary cannot form transcripts without repeats");
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const int dim = spec.feature_dim;
  const int num_tokens = spec.vocab_tokens;

  Corpus corpus;
  corpus.vocab = Vocabulary::synthetic(num_tokens);
  corpus.feature_dim = dim;

  auto gaussian_table = [&](std::uint64_t stream, double scale, int cols) {
    std::mt19937_64 rng(derive_seed(spec.seed, stream));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix table(num_tokens + 1, cols);
    table.row(0).setZero();
    for (int tok = 1; tok <= num_tokens; ++tok)
      for (int d = 0; d < cols; ++d) table(tok, d) = scale * normal(rng);
    return table;
  };

  // Low-rank accents move every token inside one shared subspace; the
  // sqrt(dim / rank) factor keeps the expected shift norm of the full-rank case.
  const bool low_rank = spec.accent_rank > 0 && spec.accent_rank < dim;
  Matrix accent_basis;
  if (low_rank) {
    std::mt19937_64 rng(derive_seed(spec.seed, 900));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(dim, spec.accent_rank);
    for (int c = 0; c < g.cols(); ++c)
      for (int r = 0; r < g.rows(); ++r) g(r, c) = normal(rng);
    accent_basis = Eigen::HouseholderQR<Matrix>(g).householderQ() *
                   Matrix::Identity(dim, spec.accent_rank);
  }
  auto accent_table = [&](int a) -> Matrix {
    if (!low_rank) return gaussian_table(1000 + a, spec.accent_shift_scale, dim);
    const double scale =
        spec.accent_shift_scale * std::sqrt(static_cast<double>(dim) / spec.accent_rank);
    return gaussian_table(1000 + a, scale, spec.accent_rank) * accent_basis.transpose();
  };

  const Matrix prototypes = gaussian_table(1, 1.0, dim);

  // Transcripts: unique token sequences with no adjacent repeats, so that
  // every transcript is acoustically recoverable from its frames.
  std::vector<TokenSeq> transcripts;
  {
    std::mt19937_64 rng(derive_seed(spec.seed, 2));
    std::uniform_int_distribution<int> len_dist(spec.transcript_len_min,
                                                spec.transcript_len_max);
    std::uniform_int_distribution<int> tok_dist(1, num_tokens);
    std::set<TokenSeq> seen;
    const int max_attempts = 1000 * spec.num_transcripts + 1000;
    for (int attempt = 0;
         static_cast<int>(transcripts.size()) < spec.num_transcripts;
         ++attempt) {
      require(attempt < max_attempts,
              "cannot draw enough distinct transcripts for this vocabulary");
      TokenSeq seq(len_dist(rng));
      for (std::size_t i = 0; i < seq.size(); ++i) {
        do {
          seq[i] = tok_dist(rng);
        } while (i > 0 && seq[i] == seq[i - 1]);
      }
      if (seen.insert(seq).second) transcripts.push_back(seq);
    }
  }

  std::uint64_t utt_counter = 0;
  for (int a = 0; a < spec.num_accents; ++a) {
    const std::string accent = "accent_" + std::to_string(a);
    const Matrix accent_shift = accent_table(a);
    for (int s = 0; s < spec.speakers_per_accent; ++s) {
      const std::string speaker = accent + "_spk_" + std::to_string(s);
      const Matrix speaker_jitter = gaussian_table(
          100000 + static_cast<std::uint64_t>(a) * 1000 + s,
          spec.speaker_jitter_scale, dim);
      const Matrix centers = prototypes + accent_shift + speaker_jitter;
      for (int c = 0; c < spec.num_transcripts; ++c) {
        std::mt19937_64 rng(derive_seed(spec.seed, 1u << 30 | utt_counter++));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_int_distribution<int> jitter(-spec.frame_jitter,
                                                  spec.frame_jitter);
        const TokenSeq& seq = transcripts[c];
        std::vector<int> durations(seq.size());
        int total = 0;
        for (auto& d : durations) {
          d = spec.frames_per_token + (spec.frame_jitter > 0 ? jitter(rng) : 0);
          total += d;
        }
        Utterance utt;
        utt.transcript_id = "tr_" + padded(c, 4);
        utt.accent_id = accent;
        utt.speaker_id = speaker;
        utt.id = speaker + "_" + utt.transcript_id;
        utt.tokens = seq;
        utt.features.resize(total, dim);
        int row = 0;
        for (std::size_t i = 0; i < seq.size(); ++i) {
          for (int f = 0; f < durations[i]; ++f, ++row) {
            utt.features.row(row) = centers.row(seq[i]);
            if (spec.noise_scale > 0)
              for (int d = 0; d < dim; ++d)
                utt.features(row, d) += spec.noise_scale * normal(rng);
          }
        }
        corpus.utterances.push_back(std::move(utt));
      }
    }
  }
  return corpus;
}

std::string SplitProtocol::name() const {
  if (kind == ProtocolKind::kUnseenAccent) return "ua_" + held_out_accent;
  return "ut_fold" + std::to_string(fold_index);
}

std::vector<std::string> accents_of(const Corpus& corpus) {
  std::set<std::string> s;
  for (const auto& u : corpus.utterances) s.insert(u.accent_id);
  return {s.begin(), s.end()};
}

std::vector<std::string> speakers_of(const Corpus& corpus,
                                     const std::string& accent) {
  std::set<std::string> s;
  for (const auto& u : corpus.utterances)
    if (u.accent_id == accent) s.insert(u.speaker_id);
  return {s.begin(), s.end()};
}

SplitPlan make_split(const Corpus& corpus, const SplitProtocol& protocol) {
  SplitPlan plan;
  plan.protocol = protocol;
  const auto accents = accents_of(corpus);
  const auto transcripts = sorted_transcripts(corpus);

  if (protocol.kind == ProtocolKind::kUnseenAccent) {
    if (accents.size() < 2)
      throw Error(ErrorKind::kInsufficientData,
                  "unseen-accent split needs at least 2 accents");
    if (std::find(accents.begin(), accents.end(), protocol.held_out_accent) ==
        accents.end())
      throw Error(ErrorKind::kInsufficientData,
                  "held-out accent not in corpus: " + protocol.held_out_accent);
    const auto picks = validation_picks(static_cast<int>(transcripts.size()));
    std::set<std::string> val_transcripts;
    for (int i : picks) val_transcripts.insert(transcripts[i]);
    if (val_transcripts.size() == transcripts.size())
      throw Error(ErrorKind::kInsufficientData,
                  "too few transcripts to carve a validation set");
    for (const auto& u : corpus.utterances) {
      if (u.accent_id == protocol.held_out_accent)
        plan.test_ids.push_back(u.id);
      else if (val_transcripts.count(u.transcript_id))
        plan.val_ids.push_back(u.id);
      else
        plan.train_ids.push_back(u.id);
    }
    return plan;
  }

  int min_speakers = std::numeric_limits<int>::max();
  std::map<std::string, std::string> held_out_speaker;
  const int fold_count_hint = protocol.num_folds;
  for (const auto& accent : accents) {
    const auto speakers = speakers_of(corpus, accent);
    min_speakers = std::min(min_speakers, static_cast<int>(speakers.size()));
  }
  if (accents.empty() || min_speakers < 2)
    throw Error(ErrorKind::kInsufficientData,
                "unseen-transcript split needs >= 2 speakers per accent");
  const int num_folds = fold_count_hint > 0 ? fold_count_hint : min_speakers;
  if (protocol.fold_index < 0 || protocol.fold_index >= num_folds)
    throw Error(ErrorKind::kInvalidArgument, "fold index out of range");
  for (const auto& accent : accents) {
    const auto speakers = speakers_of(corpus, accent);
    held_out_speaker[accent] = speakers[protocol.fold_index % speakers.size()];
  }
  plan.protocol.num_folds = num_folds;

  std::set<std::string> test_transcripts;
  std::vector<std::string> train_transcripts;
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    if (static_cast<int>(i % num_folds) == protocol.fold_index)
      test_transcripts.insert(transcripts[i]);
    else
      train_transcripts.push_back(transcripts[i]);
  }
  std::set<std::string> val_transcripts;
  for (int i : validation_picks(static_cast<int>(train_transcripts.size())))
    val_transcripts.insert(train_transcripts[i]);
  if (test_transcripts.empty() ||
      val_transcripts.size() >= train_transcripts.size())
    throw Error(ErrorKind::kInsufficientData,
                "too few transcripts for an unseen-transcript fold");

  for (const auto& u : corpus.utterances) {
    const bool held_out = held_out_speaker[u.accent_id] == u.speaker_id;
    const bool test_tr = test_transcripts.count(u.transcript_id) > 0;
    if (held_out && test_tr)
      plan.test_ids.push_back(u.id);
    else if (held_out || test_tr)
      plan.unused_ids.push_back(u.id);
    else if (val_transcripts.count(u.transcript_id))
      plan.val_ids.push_back(u.id);
    else
      plan.train_ids.push_back(u.id);
  }
  return plan;
}

std::string check_split(const Corpus& corpus, const SplitPlan& plan) {
  std::unordered_map<std::string, const Utterance*> by_id;
  for (const auto& u : corpus.utterances) by_id[u.id] = &u;

  std::unordered_map<std::string, int> owner;
  const std::vector<const std::vector<std::string>*> sets = {
      &plan.train_ids, &plan.val_ids, &plan.test_ids, &plan.unused_ids};
  for (int s = 0; s < 4; ++s) {
    for (const auto& id : *sets[s]) {
      if (!by_id.count(id)) return "unknown id " + id;
      if (!owner.emplace(id, s).second) return "id in two sets: " + id;
    }
  }
  if (owner.size() != corpus.utterances.size())
    return "split does not cover the corpus";

  auto collect = [&](const std::vector<std::string>& ids, auto field) {
    std::set<std::string> out;
    for (const auto& id : ids) out.insert(by_id[id]->*field);
    return out;
  };
  const auto train_acc = collect(plan.train_ids, &Utterance::accent_id);
  const auto val_acc = collect(plan.val_ids, &Utterance::accent_id);
  const auto test_acc = collect(plan.test_ids, &Utterance::accent_id);

  if (plan.protocol.kind == ProtocolKind::kUnseenAccent) {
    for (const auto& a : test_acc) {
      if (a != plan.protocol.held_out_accent)
        return "test contains non-held-out accent " + a;
      if (train_acc.count(a) || val_acc.count(a))
        return "test accent also in train/val: " + a;
    }
    return {};
  }

  if (train_acc != test_acc) return "UT: accents differ between train and test";
  const auto train_tr = collect(plan.train_ids, &Utterance::transcript_id);
  for (const auto& t : collect(plan.test_ids, &Utterance::transcript_id))
    if (train_tr.count(t)) return "UT: transcript in train and test: " + t;
  const auto test_spk = collect(plan.test_ids, &Utterance::speaker_id);
  auto seen_outside = collect(plan.train_ids, &Utterance::speaker_id);
  for (const auto& s : collect(plan.val_ids, &Utterance::speaker_id))
    seen_outside.insert(s);
  std::map<std::string, int> held_per_accent;
  for (const auto& s : test_spk) {
    if (seen_outside.count(s)) return "UT: test speaker also trained on: " + s;
  }
  std::map<std::string, std::string> accent_of_speaker;
  for (const auto& u : corpus.utterances)
    accent_of_speaker[u.speaker_id] = u.accent_id;
  for (const auto& s : test_spk) ++held_per_accent[accent_of_speaker[s]];
  for (const auto& a : test_acc)
    if (held_per_accent[a] != 1)
      return "UT: accent " + a + " must hold out exactly one speaker";
  return {};
}

SplitStats split_stats(const Corpus& corpus,
                       const std::vector<std::string>& ids) {
  std::set<std::string> wanted(ids.begin(), ids.end());
  std::set<std::string> accents, speakers, transcripts;
  SplitStats stats;
  for (const auto& u : corpus.utterances) {
    if (!wanted.count(u.id)) continue;
    ++stats.utterances;
    accents.insert(u.accent_id);
    speakers.insert(u.speaker_id);
    transcripts.insert(u.transcript_id);
  }
  stats.accents = static_cast<int>(accents.size());
  stats.speakers = static_cast<int>(speakers.size());
  stats.transcripts = static_cast<int>(transcripts.size());
  return stats;
}

// --- serialization -----------------------------------------------------

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open for writing: " + path.string());
  json header = {{"version", 1},
                 {"vocab", corpus.vocab.symbols},
                 {"feature_dim", corpus.feature_dim}};
  out << header.dump() << '\n';
  for (const auto& u : corpus.utterances) {
    json features = json::array();
    for (Eigen::Index r = 0; r < u.features.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < u.features.cols(); ++c)
        row.push_back(u.features(r, c));
      features.push_back(std::move(row));
    }
    json rec = {{"id", u.id},
                {"speaker", u.speaker_id},
                {"accent", u.accent_id},
                {"transcript_id", u.transcript_id},
                {"tokens", u.tokens},
                {"features", std::move(features)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open for reading: " + path.string());

  auto malformed = [&](int line_no, const std::string& why) {
    return Error(ErrorKind::kMalformedRecord,
                 path.string() + ":" + std::to_string(line_no) + ": " + why);
  };

  Corpus corpus;
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw malformed(1, "missing header line");
  ++line_no;
  try {
    const json header = json::parse(line);
    if (header.at("version").get<int>() != 1)
      throw malformed(line_no, "unsupported version");
    corpus.vocab.symbols = header.at("vocab").get<std::vector<std::string>>();
    corpus.feature_dim = header.at("feature_dim").get<int>();
    corpus.vocab.validate();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw malformed(line_no, e.what());
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Utterance u;
    try {
      const json rec = json::parse(line);
      u.id = rec.at("id").get<std::string>();
      u.speaker_id = rec.at("speaker").get<std::string>();
      u.accent_id = rec.at("accent").get<std::string>();
      u.transcript_id = rec.at("transcript_id").get<std::string>();
      u.tokens = rec.at("tokens").get<TokenSeq>();
      const auto& rows = rec.at("features");
      u.features.resize(static_cast<Eigen::Index>(rows.size()), corpus.feature_dim);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(corpus.feature_dim))
          throw malformed(line_no, "feature row has wrong dimension");
        for (int c = 0; c < corpus.feature_dim; ++c)
          u.features(static_cast<Eigen::Index>(r), c) = rows[r][c].get<double>();
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw malformed(line_no, e.what());
    }
    if (u.tokens.empty()) throw malformed(line_no, "empty token sequence");
    for (int t : u.tokens)
      if (t <= 0 || t >= corpus.vocab.size())
        throw malformed(line_no, "token index out of range");
    if (u.features.rows() < 1) throw malformed(line_no, "no feature frames");
    if (!u.features.allFinite()) throw malformed(line_no, "non-finite feature");
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

void write_split(const SplitPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open for writing: " + path.string());
  json j = {
      {"protocol", plan.protocol.kind == ProtocolKind::kUnseenAccent ? "ua" : "ut"},
      {"fold_index", plan.protocol.fold_index},
      {"num_folds", plan.protocol.num_folds},
      {"held_out_accent", plan.protocol.held_out_accent},
      {"train_ids", plan.train_ids},
      {"val_ids", plan.val_ids},
      {"test_ids", plan.test_ids},
      {"unused_ids", plan.unused_ids}};
  out << j.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

SplitPlan read_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open for reading: " + path.string());
  try {
    const json j = json::parse(in);
    SplitPlan plan;
    const auto kind = j.at("protocol").get<std::string>();
    if (kind != "ua" && kind != "ut")
      throw Error(ErrorKind::kMalformedRecord, "unknown protocol " + kind);
    plan.protocol.kind = kind == "ua" ? ProtocolKind::kUnseenAccent
                                      : ProtocolKind::kUnseenTranscript;
    plan.protocol.fold_index = j.at("fold_index").get<int>();
    plan.protocol.num_folds = j.at("num_folds").get<int>();
    plan.protocol.held_out_accent = j.at("held_out_accent").get<std::string>();
    plan.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    plan.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    plan.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    plan.unused_ids = j.value("unused_ids", std::vector<std::string>{});
    return plan;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kMalformedRecord, path.string() + ": " + e.what());
  }
}

}  // namespace supcon_asr
