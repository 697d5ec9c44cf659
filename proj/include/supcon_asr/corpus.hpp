#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "supcon_asr/common.hpp"

namespace supcon_asr {

struct Vocabulary {
  static constexpr int kBlankIndex = 0;
  static constexpr const char* kBlankSymbol = "<blank>";

  std::vector<std::string> symbols;

  int size() const { return static_cast<int>(symbols.size()); }

  // "<blank>" followed by t1..tN.
  static Vocabulary synthetic(int num_tokens);

  // Throws kInvalidArgument when the blank/uniqueness invariants fail.
  void validate() const;

  bool operator==(const Vocabulary&) const = default;
};

struct Utterance {
  std::string id;
  std::string speaker_id;
  std::string accent_id;
  std::string transcript_id;
  TokenSeq tokens;
  Matrix features;  // raw_frames x feature_dim

  int raw_frames() const { return static_cast<int>(features.rows()); }

  bool operator==(const Utterance& o) const {
    return id == o.id && speaker_id == o.speaker_id &&
           accent_id == o.accent_id && transcript_id == o.transcript_id &&
           tokens == o.tokens && features.rows() == o.features.rows() &&
           features.cols() == o.features.cols() && features == o.features;
  }
};

struct Corpus {
  Vocabulary vocab;
  int feature_dim = 0;
  std::vector<Utterance> utterances;

  bool operator==(const Corpus&) const = default;

  const Utterance& at(const std::string& id) const;
};

struct CorpusSpec {
  int num_accents = 6;
  int speakers_per_accent = 4;
  int num_transcripts = 60;
  int vocab_tokens = 10;  // non-blank symbols
  int transcript_len_min = 3;
  int transcript_len_max = 6;
  int frames_per_token = 4;
  int frame_jitter = 1;
  int feature_dim = 8;
  double accent_shift_scale = 0.5;
  // 0 (or >= feature_dim): each accent shift is isotropic. Otherwise every
  // accent shifts tokens within one shared accent_rank-dimensional subspace.
  int accent_rank = 0;
  double speaker_jitter_scale = 0.3;
  double noise_scale = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

Corpus generate_corpus(const CorpusSpec& spec);

enum class ProtocolKind { kUnseenTranscript, kUnseenAccent };

struct SplitProtocol {
  ProtocolKind kind = ProtocolKind::kUnseenAccent;
  int fold_index = 0;
  int num_folds = 0;  // UT only; 0 means speakers_per_accent
  std::string held_out_accent;

  static SplitProtocol unseen_transcript(int fold, int num_folds = 0) {
    return {ProtocolKind::kUnseenTranscript, fold, num_folds, {}};
  }
  static SplitProtocol unseen_accent(std::string accent) {
    return {ProtocolKind::kUnseenAccent, 0, 0, std::move(accent)};
  }

  std::string name() const;
};

// Ids are kept in corpus order. UT plans cannot cover the whole corpus
// without leaking either speakers or transcripts into test, so the
// leftovers are listed in unused_ids.
struct SplitPlan {
  SplitProtocol protocol;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::vector<std::string> unused_ids;

  bool operator==(const SplitPlan& o) const {
    return protocol.kind == o.protocol.kind &&
           protocol.fold_index == o.protocol.fold_index &&
           protocol.num_folds == o.protocol.num_folds &&
           protocol.held_out_accent == o.protocol.held_out_accent &&
           train_ids == o.train_ids && val_ids == o.val_ids &&
           test_ids == o.test_ids && unused_ids == o.unused_ids;
  }
};

SplitPlan make_split(const Corpus& corpus, const SplitProtocol& protocol);

// Checks every SplitPlan invariant; returns an empty string when sound,
// otherwise a description of the first violation.
std::string check_split(const Corpus& corpus, const SplitPlan& plan);

std::vector<std::string> accents_of(const Corpus& corpus);
std::vector<std::string> speakers_of(const Corpus& corpus,
                                     const std::string& accent);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

void write_split(const SplitPlan& plan, const std::filesystem::path& path);
SplitPlan read_split(const std::filesystem::path& path);

struct SplitStats {
  int accents = 0;
  int speakers = 0;
  int utterances = 0;
  int transcripts = 0;
};

SplitStats split_stats(const Corpus& corpus,
                       const std::vector<std::string>& ids);

}  // namespace supcon_asr
