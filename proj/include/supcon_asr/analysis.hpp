#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "supcon_asr/corpus.hpp"
#include "supcon_asr/model.hpp"

namespace supcon_asr {

struct EmbeddingEntry {
  std::string utterance_id;
  std::string transcript_id;
  std::string accent_id;
  std::string speaker_id;
  Vector u;
};

struct EmbeddingSet {
  std::vector<EmbeddingEntry> entries;
};

// Masked mean of the encoder output; the projection head is not applied.
EmbeddingSet extract_embeddings(const ModelParams& params,
                                std::span<const Utterance* const> utterances,
                                int batch_size = 0);

struct TranscriptDispersion {
  std::string transcript_id;
  int count = 0;
  double dispersion = 0.0;
};

struct DispersionReport {
  std::vector<TranscriptDispersion> per_transcript;  // sorted by transcript id
  double mean = 0.0;
  double median = 0.0;
  double std_dev = 0.0;  // population
  int num_transcripts = 0;
};

double cosine_dispersion(std::span<const Vector* const> vectors);

DispersionReport within_transcript_dispersion(const EmbeddingSet& set);

struct DispersionComparison {
  std::vector<std::string> transcripts;
  std::vector<double> deltas;  // b - a per transcript
  double relative_mean_reduction = 0.0;
  double fraction_reduced = 0.0;
  DispersionReport a;
  DispersionReport b;
};

DispersionComparison compare_dispersion(const DispersionReport& a,
                                        const DispersionReport& b);

void write_embeddings_csv(const EmbeddingSet& set, const std::filesystem::path& path);
void write_dispersion_csv(const DispersionReport& report,
                          const std::filesystem::path& path);
std::string dispersion_summary_json(const DispersionReport& report);
std::string comparison_json(const DispersionComparison& cmp);

}  // namespace supcon_asr
