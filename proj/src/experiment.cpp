#include "supcon_asr/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace supcon_asr {

namespace {

using nlohmann::json;

struct Field {
  std::string section;  // "", "corpus", "train", "train.model", "decode"
  std::string name;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <typename T, typename Access>
Field plain(std::string section, std::string name, Access access) {
  return {std::move(section), std::move(name),
          [access](const ExperimentConfig& c) {
            return json(access(const_cast<ExperimentConfig&>(c)));
          },
          [access](ExperimentConfig& c, const json& j) { access(c) = j.get<T>(); }};
}

template <typename Enum, typename Access>
Field enumerated(std::string section, std::string name, Access access,
                 std::vector<std::pair<Enum, std::string>> names) {
  return {std::move(section), std::move(name),
          [access, names](const ExperimentConfig& c) {
            const Enum v = access(const_cast<ExperimentConfig&>(c));
            for (const auto& [e, s] : names)
              if (e == v) return json(s);
            return json(nullptr);
          },
          [access, names](ExperimentConfig& c, const json& j) {
            const auto s = j.get<std::string>();
            for (const auto& [e, n] : names)
              if (n == s) {
                access(c) = e;
                return;
              }
            throw Error(ErrorKind::kInvalidArgument, "bad enum value: " + s);
          }};
}

#define SCA_FIELD(T, section, path, name) \
  plain<T>(section, #name, [](ExperimentConfig& c) -> T& { return c.path name; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(SCA_FIELD(int, "corpus", corpus., num_accents));
    f.push_back(SCA_FIELD(int, "corpus", corpus., speakers_per_accent));
    f.push_back(SCA_FIELD(int, "corpus", corpus., num_transcripts));
    f.push_back(SCA_FIELD(int, "corpus", corpus., vocab_tokens));
    f.push_back(SCA_FIELD(int, "corpus", corpus., transcript_len_min));
    f.push_back(SCA_FIELD(int, "corpus", corpus., transcript_len_max));
    f.push_back(SCA_FIELD(int, "corpus", corpus., frames_per_token));
    f.push_back(SCA_FIELD(int, "corpus", corpus., frame_jitter));
    f.push_back(SCA_FIELD(int, "corpus", corpus., feature_dim));
    f.push_back(SCA_FIELD(double, "corpus", corpus., accent_shift_scale));
    f.push_back(SCA_FIELD(int, "corpus", corpus., accent_rank));
    f.push_back(SCA_FIELD(double, "corpus", corpus., speaker_jitter_scale));
    f.push_back(SCA_FIELD(double, "corpus", corpus., noise_scale));
    f.push_back(SCA_FIELD(std::uint64_t, "corpus", corpus., seed));

    f.push_back(SCA_FIELD(double, "train", train., lambda_max));
    f.push_back(SCA_FIELD(double, "train", train., ramp_ratio));
    f.push_back(SCA_FIELD(double, "train", train., temperature));
    f.push_back(SCA_FIELD(int, "train", train., t_max));
    f.push_back(SCA_FIELD(int, "train", train., m_transcripts));
    f.push_back(SCA_FIELD(int, "train", train., k_utterances));
    f.push_back(SCA_FIELD(double, "train", train., learning_rate));
    f.push_back(SCA_FIELD(double, "train", train., weight_decay));
    f.push_back(SCA_FIELD(double, "train", train., adam_beta1));
    f.push_back(SCA_FIELD(double, "train", train., adam_beta2));
    f.push_back(SCA_FIELD(double, "train", train., adam_eps));
    f.push_back(enumerated<LrSchedule>(
        "train", "lr_schedule", [](ExperimentConfig& c) -> LrSchedule& { return c.train.lr_schedule; },
        {{LrSchedule::kConstant, "constant"}, {LrSchedule::kWarmupCosine, "warmup_cosine"}}));
    f.push_back(SCA_FIELD(double, "train", train., lr_warmup_ratio));
    f.push_back(SCA_FIELD(int, "train", train., warmup_epochs));
    f.push_back(SCA_FIELD(int, "train", train., warmup_batch_size));
    f.push_back(SCA_FIELD(int, "train", train., patience));
    f.push_back(SCA_FIELD(int, "train", train., max_epochs));
    f.push_back(enumerated<TrainMode>(
        "train", "mode", [](ExperimentConfig& c) -> TrainMode& { return c.train.mode; },
        {{TrainMode::kCtcOnly, "ctc"}, {TrainMode::kCtcPlusSupCon, "supcon"}}));
    f.push_back(enumerated<AnchorMode>(
        "train", "anchors", [](ExperimentConfig& c) -> AnchorMode& { return c.train.anchors; },
        {{AnchorMode::kAll, "all"}, {AnchorMode::kOnePerTranscript, "one_per_transcript"}}));
    f.push_back(SCA_FIELD(std::uint64_t, "train", train., seed));

    f.push_back(SCA_FIELD(int, "train.model", train.model., hidden_dim));
    f.push_back(SCA_FIELD(int, "train.model", train.model., conv_width));
    f.push_back(SCA_FIELD(int, "train.model", train.model., conv_stride));
    f.push_back(SCA_FIELD(int, "train.model", train.model., num_layers));
    f.push_back(SCA_FIELD(int, "train.model", train.model., proj_hidden_dim));
    f.push_back(SCA_FIELD(int, "train.model", train.model., proj_dim));

    f.push_back(SCA_FIELD(int, "decode", decode., beam_width));
    f.push_back(SCA_FIELD(int, "decode", decode., lm_order));
    f.push_back(SCA_FIELD(double, "decode", decode., lm_smoothing_k));
    f.push_back(SCA_FIELD(double, "decode", decode., lm_weight));
    f.push_back(SCA_FIELD(double, "decode", decode., word_bonus));
    f.push_back(SCA_FIELD(bool, "decode", decode., use_lm));

    f.push_back(enumerated<ProtocolChoice>(
        "", "protocol", [](ExperimentConfig& c) -> ProtocolChoice& { return c.protocol; },
        {{ProtocolChoice::kUnseenTranscript, "ut"},
         {ProtocolChoice::kUnseenAccent, "ua"},
         {ProtocolChoice::kBoth, "both"}}));
    f.push_back(SCA_FIELD(int, "", , ut_folds));
    f.push_back(SCA_FIELD(std::vector<std::string>, "", , ua_accents));
    f.push_back(SCA_FIELD(int, "", , num_seeds));
    f.push_back(SCA_FIELD(std::uint64_t, "", , seed));
    f.push_back(SCA_FIELD(int, "", , jobs));
    f.push_back({"", "output_dir",
                 [](const ExperimentConfig& c) { return json(c.output_dir.string()); },
                 [](ExperimentConfig& c, const json& j) { c.output_dir = j.get<std::string>(); }});
    return f;
  }();
  return all;
}

#undef SCA_FIELD

json& section_of(json& root, const std::string& section) {
  if (section.empty()) return root;
  if (section == "train.model") return root["train"]["model"];
  return root[section];
}

const json* find_section(const json& root, const std::string& section) {
  if (section.empty()) return &root;
  if (section == "train.model") {
    auto t = root.find("train");
    if (t == root.end()) return nullptr;
    auto m = t->find("model");
    return m == t->end() ? nullptr : &*m;
  }
  auto it = root.find(section);
  return it == root.end() ? nullptr : &*it;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  json root = json::object();
  for (const auto& f : fields()) section_of(root, f.section)[f.name] = f.get(cfg);
  return root;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  std::set<std::string> known_sections = {"corpus", "train", "decode"};
  std::map<std::string, std::set<std::string>> known;
  for (const auto& f : fields()) known[f.section].insert(f.name);
  known["train"].insert("model");
  for (const auto& section : known_sections) known[""].insert(section);

  for (const auto& [section, names] : known) {
    const json* node = find_section(j, section);
    if (!node) continue;
    if (!node->is_object())
      throw Error(ErrorKind::kInvalidArgument, "config section is not an object: " + section);
    for (const auto& [key, value] : node->items())
      if (!names.count(key))
        throw Error(ErrorKind::kInvalidArgument,
                    "unknown config key: " + (section.empty() ? key : section + "." + key));
  }
  for (const auto& f : fields()) {
    const json* node = find_section(j, f.section);
    if (!node) continue;
    auto it = node->find(f.name);
    if (it == node->end()) continue;
    try {
      f.set(cfg, *it);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kInvalidArgument, "config key " + f.name + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kMalformedRecord, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorKind::kInvalidArgument, "override must be key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const std::exception&) {
    value = raw;  // bare strings such as mode=ctc_only
  }

  std::string section, name = key;
  const auto dot = key.rfind('.');
  if (dot != std::string::npos) {
    section = key.substr(0, dot);
    name = key.substr(dot + 1);
  }
  static const std::vector<std::string> order = {"corpus", "train", "train.model", "decode", ""};
  for (const auto& candidate : order) {
    if (dot != std::string::npos && candidate != section) continue;
    for (const auto& f : fields()) {
      if (f.section != candidate || f.name != name) continue;
      try {
        f.set(cfg, value);
      } catch (const Error&) {
        throw;
      } catch (const std::exception& e) {
        throw Error(ErrorKind::kInvalidArgument, "override " + key + ": " + e.what());
      }
      return;
    }
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown config key: " + key);
}

std::uint64_t run_seed(std::uint64_t root, int seed_index) {
  return derive_seed(root, 0x5eed0000ULL + static_cast<std::uint64_t>(seed_index));
}

std::vector<SplitProtocol> protocols_for(const ExperimentConfig& cfg, const Corpus& corpus) {
  std::vector<SplitProtocol> out;
  if (cfg.protocol != ProtocolChoice::kUnseenAccent) {
    const int folds = cfg.ut_folds > 0 ? cfg.ut_folds : cfg.corpus.speakers_per_accent;
    for (int f = 0; f < folds; ++f) out.push_back(SplitProtocol::unseen_transcript(f, folds));
  }
  if (cfg.protocol != ProtocolChoice::kUnseenTranscript) {
    const auto accents = cfg.ua_accents.empty() ? accents_of(corpus) : cfg.ua_accents;
    for (const auto& a : accents) out.push_back(SplitProtocol::unseen_accent(a));
  }
  return out;
}

NGramModel train_split_lm(const Corpus& corpus, const SplitPlan& split,
                          const DecodeConfig& decode) {
  std::set<TokenSeq> unique;
  for (const Utterance* u : select_utterances(corpus, split.train_ids)) unique.insert(u->tokens);
  const std::vector<TokenSeq> transcripts(unique.begin(), unique.end());
  return train_lm(transcripts, decode.lm_order, decode.lm_smoothing_k,
                  corpus.vocab.size() - 1);
}

Evaluation evaluate(const ModelParams& params, std::span<const Utterance* const> utterances,
                    const DecodeConfig& decode, const NGramModel* lm) {
  Evaluation eval;
  BeamOptions beam;
  beam.beam_width = decode.beam_width;
  beam.lm = decode.use_lm ? lm : nullptr;
  beam.lm_weight = decode.use_lm ? decode.lm_weight : 0.0;
  beam.word_bonus = decode.word_bonus;
  std::vector<TokenSeq> refs, greedy, fused;
  for (const Utterance* u : utterances) {
    if (u->features.cols() != params.encoder.feature_dim)
      throw Error(ErrorKind::kShapeMismatch, "utterance " + u->id + " feature_dim differs from model");
    const Posteriorgram post = ctc_logits(params.ctc, encode_one(params.encoder, *u));
    if (post.vocab_size() <= *std::max_element(u->tokens.begin(), u->tokens.end()))
      throw Error(ErrorKind::kShapeMismatch, "model vocabulary smaller than corpus tokens");
    const DecodeResult g = greedy_decode(post);
    const DecodeResult b = beam_search_decode(post, beam);
    eval.hypotheses.push_back({u->id, g.tokens, g.score, b.tokens, b.score});
    refs.push_back(u->tokens);
    greedy.push_back(g.tokens);
    fused.push_back(b.tokens);
  }
  if (!refs.empty()) {
    eval.greedy = wer_stats(refs, greedy);
    eval.beam = wer_stats(refs, fused);
  }
  return eval;
}

void write_hypotheses_tsv(const Evaluation& eval, const Vocabulary& vocab,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  char buf[64];
  for (const auto& h : eval.hypotheses) {
    out << h.id << '\t';
    for (std::size_t i = 0; i < h.beam.size(); ++i)
      out << (i ? " " : "") << vocab.symbols.at(h.beam[i]);
    std::snprintf(buf, sizeof(buf), "%.6f", h.beam_score);
    out << '\t' << buf << '\n';
  }
}

std::string evaluation_json(const Evaluation& eval) {
  auto stats = [](const WerStats& s) {
    return json{{"wer", s.wer()}, {"n_utt", s.n_utt}, {"edits", s.edits}, {"ref_len", s.ref_len}};
  };
  const json j = {{"greedy_wer", eval.greedy.wer()},
                  {"lm_wer", eval.beam.wer()},
                  {"greedy", stats(eval.greedy)},
                  {"lm", stats(eval.beam)}};
  return j.dump(2);
}

ProtocolSummary summarize(const ExperimentResult& result, const std::string& protocol,
                          TrainMode mode) {
  ProtocolSummary s;
  for (const auto& r : result.runs) {
    if (r.protocol != protocol || r.mode != mode) continue;
    s.greedy_wer += r.greedy_wer;
    s.lm_wer += r.lm_wer;
    s.dispersion_mean += r.dispersion.mean;
    ++s.runs;
  }
  if (s.runs > 0) {
    s.greedy_wer /= s.runs;
    s.lm_wer /= s.runs;
    s.dispersion_mean /= s.runs;
  }
  return s;
}

DispersionAggregate aggregate_dispersion(const ExperimentResult& result,
                                         const std::string& protocol) {
  DispersionAggregate agg;
  int reduced = 0, runs = 0;
  for (const auto& c : result.comparisons) {
    if (c.protocol != protocol) continue;
    agg.ctc_mean += c.dispersion.a.mean;
    agg.supcon_mean += c.dispersion.b.mean;
    for (double d : c.dispersion.deltas) reduced += d < 0 ? 1 : 0;
    agg.transcripts += static_cast<int>(c.dispersion.deltas.size());
    ++runs;
  }
  if (runs == 0) return agg;
  agg.ctc_mean /= runs;
  agg.supcon_mean /= runs;
  agg.relative_reduction =
      agg.ctc_mean > 0 ? (agg.ctc_mean - agg.supcon_mean) / agg.ctc_mean : 0.0;
  agg.fraction_reduced = agg.transcripts ? static_cast<double>(reduced) / agg.transcripts : 0.0;
  return agg;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_files, bool verbose) {
  cfg.train.validate();
  const Corpus corpus = generate_corpus(cfg.corpus);
  const auto protocols = protocols_for(cfg, corpus);
  if (cfg.num_seeds < 1) throw Error(ErrorKind::kInvalidArgument, "num_seeds must be >= 1");

  struct Task {
    std::size_t protocol;
    int seed_index;
    TrainMode mode;
  };
  std::vector<Task> tasks;
  for (std::size_t p = 0; p < protocols.size(); ++p)
    for (int s = 0; s < cfg.num_seeds; ++s)
      for (TrainMode m : {TrainMode::kCtcOnly, TrainMode::kCtcPlusSupCon})
        tasks.push_back({p, s, m});

  std::vector<SplitPlan> splits;
  for (const auto& p : protocols) splits.push_back(make_split(corpus, p));

  std::vector<RunResult> results(tasks.size());
  std::vector<EmbeddingSet> embeddings(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        const Task& task = tasks[i];
        const SplitPlan& split = splits[task.protocol];
        TrainConfig tc = cfg.train;
        tc.mode = task.mode;
        // Both objectives of one seed share initialization and sampling.
        tc.seed = run_seed(cfg.train.seed, task.seed_index);
        const TrainOutput trained = train(corpus, split, tc);
        const NGramModel lm = train_split_lm(corpus, split, cfg.decode);
        const auto test = select_utterances(corpus, split.test_ids);
        const Evaluation eval = evaluate(trained.params, test, cfg.decode, &lm);

        RunResult& r = results[i];
        const auto& proto = protocols[task.protocol];
        r.protocol = proto.kind == ProtocolKind::kUnseenAccent ? "ua" : "ut";
        r.condition = proto.kind == ProtocolKind::kUnseenAccent
                          ? proto.held_out_accent
                          : "fold" + std::to_string(proto.fold_index);
        r.seed_index = task.seed_index;
        r.mode = task.mode;
        r.greedy_wer = eval.greedy.wer();
        r.lm_wer = eval.beam.wer();
        r.best_epoch = trained.best_epoch;
        r.steps = trained.steps;
        embeddings[i] = extract_embeddings(trained.params, test);
        r.dispersion = within_transcript_dispersion(embeddings[i]);
        if (verbose) {
          std::lock_guard<std::mutex> lock(log_mutex);
          std::cerr << r.protocol << " " << r.condition << " seed" << r.seed_index << " "
                    << to_string(r.mode) << ": greedy " << fmt(r.greedy_wer) << " lm "
                    << fmt(r.lm_wer) << " disp " << fmt(r.dispersion.mean) << " epoch "
                    << r.best_epoch << "\n";
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = tasks.size();
      }
    }
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  ExperimentResult out;
  out.runs = results;
  // Tasks come in (ctc, supcon) pairs.
  for (std::size_t i = 0; i + 1 < tasks.size(); i += 2) {
    ConditionComparison c;
    c.protocol = results[i].protocol;
    c.condition = results[i].condition;
    c.seed_index = results[i].seed_index;
    c.dispersion = compare_dispersion(results[i].dispersion, results[i + 1].dispersion);
    out.comparisons.push_back(std::move(c));
  }

  if (!write_files) return out;
  std::filesystem::create_directories(cfg.output_dir);
  {
    std::ofstream f(cfg.output_dir / "runs.csv");
    f << "protocol,condition,seed_index,objective,greedy_wer,lm_wer,dispersion_mean,"
         "dispersion_median,dispersion_std,best_epoch,steps\n";
    for (const auto& r : out.runs)
      f << r.protocol << ',' << r.condition << ',' << r.seed_index << ','
        << (r.mode == TrainMode::kCtcOnly ? "CTC" : "SupCon") << ',' << fmt(r.greedy_wer)
        << ',' << fmt(r.lm_wer) << ',' << fmt(r.dispersion.mean) << ','
        << fmt(r.dispersion.median) << ',' << fmt(r.dispersion.std_dev) << ','
        << r.best_epoch << ',' << r.steps << '\n';
  }
  {
    std::ofstream f(cfg.output_dir / "conditions.csv");
    f << "protocol,condition,objective,greedy_wer,lm_wer,dispersion_mean,seeds\n";
    for (const auto& proto : protocols) {
      const std::string pname = proto.kind == ProtocolKind::kUnseenAccent ? "ua" : "ut";
      const std::string cname = proto.kind == ProtocolKind::kUnseenAccent
                                    ? proto.held_out_accent
                                    : "fold" + std::to_string(proto.fold_index);
      for (TrainMode m : {TrainMode::kCtcOnly, TrainMode::kCtcPlusSupCon}) {
        double g = 0, l = 0, d = 0;
        int n = 0;
        for (const auto& r : out.runs)
          if (r.protocol == pname && r.condition == cname && r.mode == m) {
            g += r.greedy_wer;
            l += r.lm_wer;
            d += r.dispersion.mean;
            ++n;
          }
        f << pname << ',' << cname << ',' << (m == TrainMode::kCtcOnly ? "CTC" : "SupCon")
          << ',' << fmt(g / n) << ',' << fmt(l / n) << ',' << fmt(d / n) << ',' << n << '\n';
      }
    }
  }
  {
    std::ofstream f(cfg.output_dir / "table.csv");
    f << "model,objective,ut_gdy_wer,ut_lm_wer,ua_gdy_wer,ua_lm_wer\n";
    for (TrainMode m : {TrainMode::kCtcOnly, TrainMode::kCtcPlusSupCon}) {
      const auto ut = summarize(out, "ut", m);
      const auto ua = summarize(out, "ua", m);
      auto cell = [](const ProtocolSummary& s, bool lm) {
        return s.runs ? fmt(lm ? s.lm_wer : s.greedy_wer) : std::string("NA");
      };
      f << "conv" << cfg.train.model.num_layers << "-d" << cfg.train.model.hidden_dim << ','
        << (m == TrainMode::kCtcOnly ? "CTC" : "SupCon") << ',' << cell(ut, false) << ','
        << cell(ut, true) << ',' << cell(ua, false) << ',' << cell(ua, true) << '\n';
    }
  }
  {
    json j = json::object();
    for (const std::string p : {"ut", "ua"}) {
      const auto agg = aggregate_dispersion(out, p);
      if (agg.transcripts == 0) continue;
      j[p] = {{"ctc_mean", agg.ctc_mean},
              {"supcon_mean", agg.supcon_mean},
              {"relative_mean_reduction", agg.relative_reduction},
              {"fraction_reduced", agg.fraction_reduced},
              {"transcripts", agg.transcripts}};
    }
    std::ofstream f(cfg.output_dir / "dispersion.json");
    f << j.dump(2) << '\n';
  }
  return out;
}

}  // namespace supcon_asr
