// supcon-asr: corpus generation, training, decoding, dispersion analysis and
// the UT/UA comparison experiment behind one binary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "supcon_asr/experiment.hpp"

namespace fs = std::filesystem;
using namespace supcon_asr;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kIoError = 2, kTrainError = 3, kModelMismatch = 4,
                kAnalysisMismatch = 5 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string protocol;
  std::optional<int> jobs;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config");
  cmd->add_option("--seed", f.seed, "root seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--set", f.sets, "override, key=value")->take_all();
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_experiment_config(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.corpus.seed = derive_seed(*f.seed, 1);
    cfg.train.seed = derive_seed(*f.seed, 2);
  }
  for (const auto& s : f.sets) apply_override(cfg, s);
  if (!f.mode.empty()) cfg.train.mode = parse_train_mode(f.mode);
  if (f.protocol == "ut") cfg.protocol = ProtocolChoice::kUnseenTranscript;
  else if (f.protocol == "ua") cfg.protocol = ProtocolChoice::kUnseenAccent;
  else if (f.protocol == "both") cfg.protocol = ProtocolChoice::kBoth;
  else if (!f.protocol.empty())
    throw Error(ErrorKind::kInvalidArgument, "unknown protocol: " + f.protocol);
  if (f.jobs) cfg.jobs = *f.jobs;
  if (!f.out.empty()) cfg.output_dir = f.out;
  cfg.corpus.validate();
  cfg.train.validate();
  return cfg;
}

void make_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorKind::kIo, "cannot create output directory " + dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream p(probe);
    if (!p) throw Error(ErrorKind::kIo, "output directory not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

std::vector<std::string> subset_ids(const SplitPlan& split, const std::string& subset) {
  if (subset == "train") return split.train_ids;
  if (subset == "val") return split.val_ids;
  if (subset == "test") return split.test_ids;
  throw Error(ErrorKind::kInvalidArgument, "subset must be train, val or test");
}

int cmd_generate(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_config(flags);
  make_output_dir(cfg.output_dir);
  const Corpus corpus = generate_corpus(cfg.corpus);
  write_corpus(corpus, cfg.output_dir / "corpus.jsonl");
  make_output_dir(cfg.output_dir / "splits");

  std::printf("%-18s %-6s %8s %9s %11s %12s\n", "split", "subset", "accents", "speakers",
              "utterances", "transcripts");
  for (const auto& protocol : protocols_for(cfg, corpus)) {
    const SplitPlan plan = make_split(corpus, protocol);
    write_split(plan, cfg.output_dir / "splits" / (protocol.name() + ".json"));
    for (const auto& [name, ids] : {std::pair{"train", &plan.train_ids},
                                    std::pair{"val", &plan.val_ids},
                                    std::pair{"test", &plan.test_ids}}) {
      const SplitStats s = split_stats(corpus, *ids);
      std::printf("%-18s %-6s %8d %9d %11d %12d\n", protocol.name().c_str(), name, s.accents,
                  s.speakers, s.utterances, s.transcripts);
    }
  }
  return kOk;
}

int cmd_train(const CommonFlags& flags, const std::string& corpus_path,
              const std::string& split_path) {
  const ExperimentConfig cfg = resolve_config(flags);
  const Corpus corpus = read_corpus(corpus_path);
  const SplitPlan split = read_split(split_path);
  make_output_dir(cfg.output_dir);
  TrainOutput trained;
  try {
    trained = train(corpus, split, cfg.train);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    std::cerr << "training failed: " << e.what() << "\n";
    return kTrainError;
  }
  save_checkpoint(trained.params, cfg.output_dir / "checkpoint.json");
  write_history(trained.history, cfg.output_dir / "history.csv");
  std::printf("best_epoch %d steps %lld\n", trained.best_epoch, trained.steps);
  return kOk;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& checkpoint,
                 const std::string& corpus_path, const std::string& split_path,
                 const std::string& subset) {
  const ExperimentConfig cfg = resolve_config(flags);
  const Corpus corpus = read_corpus(corpus_path);
  const SplitPlan split = read_split(split_path);
  const ModelParams params = load_checkpoint(checkpoint);
  make_output_dir(cfg.output_dir);
  if (params.encoder.feature_dim != corpus.feature_dim ||
      params.ctc.weight.rows() != corpus.vocab.size()) {
    std::cerr << "checkpoint dimensions do not match the corpus\n";
    return kModelMismatch;
  }
  const NGramModel lm = train_split_lm(corpus, split, cfg.decode);
  const auto ids = subset_ids(split, subset);
  const auto utts = select_utterances(corpus, ids);
  Evaluation eval;
  try {
    eval = evaluate(params, utts, cfg.decode, &lm);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kShapeMismatch && e.kind() != ErrorKind::kTooShort) throw;
    std::cerr << e.what() << "\n";
    return kModelMismatch;
  }
  write_hypotheses_tsv(eval, corpus.vocab, cfg.output_dir / "hypotheses.tsv");
  const std::string summary = evaluation_json(eval);
  write_text(cfg.output_dir / "evaluation.json", summary + "\n");
  std::cout << summary << "\n";
  return kOk;
}

int cmd_analyze(const CommonFlags& flags, const std::string& checkpoint_a,
                const std::string& checkpoint_b, const std::string& corpus_path,
                const std::string& split_a, std::string split_b) {
  const ExperimentConfig cfg = resolve_config(flags);
  const Corpus corpus = read_corpus(corpus_path);
  if (split_b.empty()) split_b = split_a;
  const SplitPlan plan_a = read_split(split_a);
  const SplitPlan plan_b = read_split(split_b);
  const ModelParams a = load_checkpoint(checkpoint_a);
  const ModelParams b = load_checkpoint(checkpoint_b);
  make_output_dir(cfg.output_dir);

  DispersionReport ra, rb;
  DispersionComparison cmp;
  try {
    const EmbeddingSet ea = extract_embeddings(a, select_utterances(corpus, plan_a.test_ids));
    const EmbeddingSet eb = extract_embeddings(b, select_utterances(corpus, plan_b.test_ids));
    write_embeddings_csv(ea, cfg.output_dir / "embeddings_a.csv");
    write_embeddings_csv(eb, cfg.output_dir / "embeddings_b.csv");
    ra = within_transcript_dispersion(ea);
    rb = within_transcript_dispersion(eb);
    cmp = compare_dispersion(ra, rb);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kShapeMismatch || e.kind() == ErrorKind::kTooShort) {
      std::cerr << e.what() << "\n";
      return kModelMismatch;
    }
    if (e.kind() == ErrorKind::kIo) throw;
    std::cerr << e.what() << "\n";
    return kAnalysisMismatch;
  }
  write_dispersion_csv(ra, cfg.output_dir / "dispersion_a.csv");
  write_dispersion_csv(rb, cfg.output_dir / "dispersion_b.csv");
  write_text(cfg.output_dir / "summary_a.json", dispersion_summary_json(ra) + "\n");
  write_text(cfg.output_dir / "summary_b.json", dispersion_summary_json(rb) + "\n");
  const std::string summary = comparison_json(cmp);
  write_text(cfg.output_dir / "comparison.json", summary + "\n");
  std::cout << summary << "\n";
  return kOk;
}

int cmd_experiment(const CommonFlags& flags, bool quiet) {
  const ExperimentConfig cfg = resolve_config(flags);
  make_output_dir(cfg.output_dir);
  write_text(cfg.output_dir / "config.json", to_json(cfg).dump(2) + "\n");
  ExperimentResult result;
  try {
    result = run_experiment(cfg, true, !quiet);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    std::cerr << "experiment failed: " << e.what() << "\n";
    return e.kind() == ErrorKind::kTranscriptSetMismatch ? kAnalysisMismatch : kTrainError;
  }
  std::ifstream table(cfg.output_dir / "table.csv");
  std::cout << table.rdbuf();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic accented ASR with CTC and supervised contrastive training"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string corpus_path, split_path, split_b, checkpoint, checkpoint_b, subset = "test";
  bool quiet = false;

  auto* gen = app.add_subcommand("generate", "generate a corpus and its split files");
  add_common(gen, flags);
  gen->add_option("--protocol", flags.protocol, "ut, ua or both");

  auto* tr = app.add_subcommand("train", "train one model on one split");
  add_common(tr, flags);
  tr->add_option("--mode", flags.mode, "ctc or supcon");
  tr->add_option("--corpus", corpus_path, "corpus file")->required();
  tr->add_option("--split", split_path, "split file")->required();

  auto* ev = app.add_subcommand("evaluate", "greedy and LM-fused WER of a checkpoint");
  add_common(ev, flags);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--corpus", corpus_path, "corpus file")->required();
  ev->add_option("--split", split_path, "split file")->required();
  ev->add_option("--subset", subset, "train, val or test");

  auto* an = app.add_subcommand("analyze", "compare dispersion of two checkpoints");
  add_common(an, flags);
  an->add_option("--checkpoint-a", checkpoint, "baseline checkpoint")->required();
  an->add_option("--checkpoint-b", checkpoint_b, "second checkpoint")->required();
  an->add_option("--corpus", corpus_path, "corpus file")->required();
  an->add_option("--split", split_path, "split file")->required();
  an->add_option("--split-b", split_b, "split for the second checkpoint");

  auto* ex = app.add_subcommand("experiment", "full UT/UA comparison");
  add_common(ex, flags);
  ex->add_option("--protocol", flags.protocol, "ut, ua or both");
  ex->add_option("--jobs", flags.jobs, "worker threads");
  ex->add_flag("--quiet", quiet, "no per-run progress");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(flags);
    if (tr->parsed()) return cmd_train(flags, corpus_path, split_path);
    if (ev->parsed()) return cmd_evaluate(flags, checkpoint, corpus_path, split_path, subset);
    if (an->parsed())
      return cmd_analyze(flags, checkpoint, checkpoint_b, corpus_path, split_path, split_b);
    if (ex->parsed()) return cmd_experiment(flags, quiet);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kIo:
      case ErrorKind::kMalformedRecord:
        return kIoError;
      case ErrorKind::kShapeMismatch:
        return kModelMismatch;
      case ErrorKind::kTranscriptSetMismatch:
        return kAnalysisMismatch;
      default:
        return kUsage;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  }
  return kUsage;
}
