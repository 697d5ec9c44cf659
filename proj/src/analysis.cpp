#include "supcon_asr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "supcon_asr/supcon.hpp"

namespace supcon_asr {

EmbeddingSet extract_embeddings(const ModelParams& params,
                                std::span<const Utterance* const> utterances,
                                int batch_size) {
  EmbeddingSet set;
  const std::size_t step =
      batch_size > 0 ? static_cast<std::size_t>(batch_size) : std::max<std::size_t>(1, utterances.size());
  for (std::size_t start = 0; start < utterances.size(); start += step) {
    const auto chunk = utterances.subspan(start, std::min(step, utterances.size() - start));
    const EncodedBatch encoded = encode_batch(params.encoder, chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const Utterance& u = *chunk[i];
      set.entries.push_back({u.id, u.transcript_id, u.accent_id, u.speaker_id,
                             masked_mean_pool(encoded.outputs[i])});
    }
  }
  return set;
}

double cosine_dispersion(std::span<const Vector* const> vectors) {
  const std::size_t n = vectors.size();
  std::vector<Vector> unit;
  unit.reserve(n);
  for (const Vector* v : vectors) {
    const double norm = v->norm();
    if (!(norm > 0.0))
      throw Error(ErrorKind::kZeroVector, "cosine distance undefined for a zero vector");
    unit.push_back(*v / norm);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sum += 1.0 - unit[i].dot(unit[j]);
  const double d = 2.0 * sum / (static_cast<double>(n) * static_cast<double>(n - 1));
  return std::clamp(d, 0.0, 2.0);
}

DispersionReport within_transcript_dispersion(const EmbeddingSet& set) {
  std::map<std::string, std::vector<const Vector*>> groups;
  for (const auto& e : set.entries) groups[e.transcript_id].push_back(&e.u);

  DispersionReport report;
  for (auto& [transcript, vectors] : groups) {
    if (vectors.size() < 2) continue;
    try {
      report.per_transcript.push_back(
          {transcript, static_cast<int>(vectors.size()), cosine_dispersion(vectors)});
    } catch (const Error& e) {
      throw Error(e.kind(), e.message() + " (transcript " + transcript + ")");
    }
  }
  if (report.per_transcript.empty())
    throw Error(ErrorKind::kNoEligibleTranscripts,
                "no transcript has at least two embeddings");

  const auto n = static_cast<double>(report.per_transcript.size());
  std::vector<double> values;
  for (const auto& t : report.per_transcript) values.push_back(t.dispersion);
  double sum = 0.0;
  for (double v : values) sum += v;
  report.mean = sum / n;
  double sq = 0.0;
  for (double v : values) sq += (v - report.mean) * (v - report.mean);
  report.std_dev = std::sqrt(sq / n);
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  report.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  report.num_transcripts = static_cast<int>(values.size());
  return report;
}

DispersionComparison compare_dispersion(const DispersionReport& a,
                                        const DispersionReport& b) {
  if (a.per_transcript.size() != b.per_transcript.size())
    throw Error(ErrorKind::kTranscriptSetMismatch, "reports cover different transcript counts");
  DispersionComparison cmp;
  int reduced = 0;
  for (std::size_t i = 0; i < a.per_transcript.size(); ++i) {
    const auto& ta = a.per_transcript[i];
    const auto& tb = b.per_transcript[i];
    if (ta.transcript_id != tb.transcript_id)
      throw Error(ErrorKind::kTranscriptSetMismatch,
                  "transcript " + ta.transcript_id + " vs " + tb.transcript_id);
    cmp.transcripts.push_back(ta.transcript_id);
    cmp.deltas.push_back(tb.dispersion - ta.dispersion);
    if (tb.dispersion < ta.dispersion) ++reduced;
  }
  cmp.relative_mean_reduction = a.mean > 0 ? (a.mean - b.mean) / a.mean : 0.0;
  cmp.fraction_reduced =
      cmp.transcripts.empty() ? 0.0 : static_cast<double>(reduced) / cmp.transcripts.size();
  cmp.a = a;
  cmp.b = b;
  return cmp;
}

void write_embeddings_csv(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "utt_id,transcript_id,accent_id,speaker_id";
  const Eigen::Index dim = set.entries.empty() ? 0 : set.entries.front().u.size();
  for (Eigen::Index d = 0; d < dim; ++d) out << ",u_" << d;
  out << '\n';
  char buf[64];
  for (const auto& e : set.entries) {
    out << e.utterance_id << ',' << e.transcript_id << ',' << e.accent_id << ','
        << e.speaker_id;
    for (Eigen::Index d = 0; d < e.u.size(); ++d) {
      std::snprintf(buf, sizeof(buf), ",%.17g", e.u(d));
      out << buf;
    }
    out << '\n';
  }
}

void write_dispersion_csv(const DispersionReport& report,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "transcript_id,n,dispersion\n";
  char buf[64];
  for (const auto& t : report.per_transcript) {
    std::snprintf(buf, sizeof(buf), "%.10g", t.dispersion);
    out << t.transcript_id << ',' << t.count << ',' << buf << '\n';
  }
}

std::string dispersion_summary_json(const DispersionReport& report) {
  const nlohmann::json j = {{"mean", report.mean},
                            {"median", report.median},
                            {"std", report.std_dev},
                            {"n", report.num_transcripts}};
  return j.dump();
}

std::string comparison_json(const DispersionComparison& cmp) {
  const nlohmann::json j = {
      {"a", nlohmann::json::parse(dispersion_summary_json(cmp.a))},
      {"b", nlohmann::json::parse(dispersion_summary_json(cmp.b))},
      {"relative_mean_reduction", cmp.relative_mean_reduction},
      {"fraction_reduced", cmp.fraction_reduced},
      {"n", static_cast<int>(cmp.transcripts.size())}};
  return j.dump(2);
}

}  // namespace supcon_asr
