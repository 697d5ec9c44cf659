// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "supcon_asr/analysis.hpp"
#include "supcon_asr/ctc.hpp"
#include "supcon_asr/experiment.hpp"
#include "supcon_asr/supcon.hpp"
#include "supcon_asr/trainer.hpp"

using namespace supcon_asr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("CRITERION %2d %-28s %s  %s\n", id, name, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

TokenSeq random_target(int max_len, int vocab, std::mt19937_64& rng) {
  const int len = std::uniform_int_distribution<int>(1, max_len)(rng);
  TokenSeq y(len);
  for (auto& t : y) t = std::uniform_int_distribution<int>(1, vocab - 1)(rng);
  return y;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ctc_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1001);
  int checked = 0;
  double worst = 0.0, worst_independent = 0.0;
  while (checked < 600) {
    const int frames = std::uniform_int_distribution<int>(1, 6)(rng);
    const int vocab = std::uniform_int_distribution<int>(2, 4)(rng);
    const TokenSeq y = random_target(3, vocab, rng);
    if (ctc_min_frames(y) > frames) continue;
    const Posteriorgram post = oracle::random_posteriorgram(frames, vocab, rng);
    const double loss = ctc_loss_and_grad(post, y).loss;
    worst = std::max(worst, std::abs(loss - brute_force_ctc(post, y)));
    const double mass = oracle::labeling_probabilities(post)[y];
    worst_independent = std::max(worst_independent, std::abs(loss + std::log(mass)));
    ++checked;
  }
  const double secs = seconds_since(start);
  report(1, "ctc-oracle", worst <= 1e-8 && worst_independent <= 1e-8 && secs < 10,
         fmt("%.0f instances, max |diff| %.2e (enumeration oracle %.2e), %.2fs", checked, worst,
             worst_independent, secs));
}

ModelShape small_shape(std::mt19937_64& rng) {
  ModelShape s;
  s.feature_dim = std::uniform_int_distribution<int>(2, 3)(rng);
  s.vocab_size = std::uniform_int_distribution<int>(3, 4)(rng);
  s.hidden_dim = std::uniform_int_distribution<int>(2, 4)(rng);
  s.conv_width = std::uniform_int_distribution<int>(1, 3)(rng);
  s.conv_stride = std::uniform_int_distribution<int>(1, 2)(rng);
  s.num_layers = std::uniform_int_distribution<int>(0, 2)(rng);
  s.proj_hidden_dim = std::uniform_int_distribution<int>(3, 6)(rng);
  s.proj_dim = std::uniform_int_distribution<int>(2, 3)(rng);
  return s;
}

// B = 4 utterances: two transcripts x two "speakers".
std::vector<Utterance> small_batch(const ModelShape& s, std::mt19937_64& rng) {
  std::vector<Utterance> utts;
  for (int i = 0; i < 4; ++i) {
    Utterance u;
    u.id = "u" + std::to_string(i);
    u.transcript_id = i < 2 ? "ta" : "tb";
    u.tokens = i < 2 ? TokenSeq{1} : TokenSeq{2, 1};
    const int frames_needed = ctc_min_frames(u.tokens) + 1;
    const int raw = s.conv_width + (frames_needed - 1 + i % 2) * s.conv_stride;
    u.features = oracle::random_logits(raw, s.feature_dim, rng, 1.0);
    utts.push_back(std::move(u));
  }
  return utts;
}

void gradient_checks() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2002);

  double worst_ctc = 0.0;
  int ctc_cases = 0;
  while (ctc_cases < 100) {
    const int frames = std::uniform_int_distribution<int>(1, 6)(rng);
    const int vocab = std::uniform_int_distribution<int>(2, 4)(rng);
    const TokenSeq y = random_target(3, vocab, rng);
    if (ctc_min_frames(y) > frames) continue;
    const Matrix logits = oracle::random_logits(frames, vocab, rng);
    const CtcResult r = ctc_loss_and_grad({log_softmax_rows(logits)}, y);
    auto loss = [&](const Vector& flat) {
      return ctc_loss_and_grad({log_softmax_rows(Eigen::Map<const Matrix>(flat.data(), frames, vocab))}, y)
          .loss;
    };
    const Vector numeric =
        oracle::numeric_gradient(loss, Eigen::Map<const Vector>(logits.data(), logits.size()));
    worst_ctc = std::max(worst_ctc, oracle::relative_error(
        Eigen::Map<const Vector>(r.grad_logits.data(), r.grad_logits.size()), numeric));
    ++ctc_cases;
  }

  // SupCon only: gradient w.r.t. projection head and encoder, through
  // pooling, the MLP and the l2 normalization.
  double worst_supcon = 0.0, worst_combined = 0.0;
  int dead = 0;
  for (int trial = 0, live = 0; live < 100; ++trial) {
    const ModelShape shape = small_shape(rng);
    // Random parameter point rather than the small-scale init: at init the
    // SupCon gradient is often ~1e-6 or exactly zero (all ReLUs dead), where
    // central differences are dominated by rounding.
    ModelParams params = init_model(shape, 5000 + trial);
    Vector flat = flatten(params);
    std::normal_distribution<double> normal(0.0, 0.7);
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = normal(rng);
    unflatten(flat, params);
    const std::vector<Utterance> utts = small_batch(shape, rng);
    std::vector<const Utterance*> batch;
    for (const auto& u : utts) batch.push_back(&u);

    // A sample whose projection ReLUs are all off makes the loss locally
    // constant in the encoder; redraw such instances.
    bool degenerate = false;
    for (const auto& e : extract_embeddings(params, batch).entries)
      degenerate |= project_and_normalize(params.projection, e.u).hidden.isZero(0.0);
    if (degenerate) {
      ++dead;
      continue;
    }
    ++live;

    ObjectiveOptions supcon_only;
    supcon_only.with_supcon = true;
    supcon_only.ctc_weight = 0.0;
    supcon_only.supcon_weight = 1.0;
    supcon_only.temperature = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    ObjectiveOptions combined = supcon_only;
    combined.ctc_weight = 1.0;
    combined.supcon_weight = std::uniform_real_distribution<double>(0.05, 2.0)(rng);

    for (const ObjectiveOptions* opts : {&supcon_only, &combined}) {
      const Vector analytic = flatten(compute_objective(params, batch, *opts).grad);
      const Vector numeric = oracle::numeric_gradient(
          [&](const Vector& x) {
            ModelParams p = params;
            unflatten(x, p);
            return compute_objective(p, batch, *opts).loss;
          },
          flatten(params));
      double& worst = opts == &supcon_only ? worst_supcon : worst_combined;
      worst = std::max(worst, oracle::relative_error(analytic, numeric));
    }
  }
  const double secs = seconds_since(start);
  const bool pass = worst_ctc <= 1e-5 && worst_supcon <= 1e-5 && worst_combined <= 1e-5 &&
                    secs < 60;
  report(2, "gradient-checks", pass,
         fmt("max rel err ctc %.1e, supcon %.1e, combined %.1e (100 each), %.1fs", worst_ctc,
             worst_supcon, worst_combined, secs) +
             fmt(", %.0f dead-projection draws skipped", dead));
}

void supcon_oracle() {
  std::mt19937_64 rng(3003);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 8)(rng);
    const int dim = std::uniform_int_distribution<int>(2, 8)(rng);
    const double tau = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    ContrastBatch b;
    for (int i = 0; i < n; ++i) {
      b.projections.push_back(oracle::random_unit(dim, rng));
      b.labels.push_back("c" + std::to_string(std::uniform_int_distribution<int>(0, n / 2)(rng)));
    }
    b.labels[1] = b.labels[0];
    b.anchors = all_anchors(n);
    const double got = supcon_loss_and_grad(b, tau).loss;
    worst = std::max(worst, std::abs(got - oracle::supcon_direct(b.projections, b.labels,
                                                                 b.anchors, tau)));
  }
  ContrastBatch pair;
  pair.projections = {oracle::random_unit(4, rng), oracle::random_unit(4, rng)};
  pair.labels = {"same", "same"};
  pair.anchors = all_anchors(2);
  const double zero = supcon_loss_and_grad(pair, 0.1).loss;
  report(3, "supcon-oracle", worst <= 1e-10 && zero == 0.0,
         fmt("200 batches, max |diff| %.2e; B=2 same-label loss %.1f", worst, zero));
}

void ramp_schedule() {
  TrainConfig cfg;
  cfg.lambda_max = 0.1;
  cfg.ramp_ratio = 0.1;
  cfg.t_max = 5000;
  double worst = std::abs(ramp_weight(cfg, 0));
  for (long long t = 0; t <= 2 * cfg.t_max; ++t) {
    const double expected = t >= 500 ? 0.1 : 0.1 * static_cast<double>(t) / 500.0;
    worst = std::max(worst, std::abs(ramp_weight(cfg, t) - expected));
  }
  report(4, "ramp-schedule", worst <= 1e-15 && ramp_weight(cfg, 0) == 0.0,
         fmt("lambda 0.1, r 0.1, T_max 5000: max |diff| %.1e", worst));
}

void decoding() {
  std::mt19937_64 rng(4004);
  int greedy_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int frames = std::uniform_int_distribution<int>(1, 12)(rng);
    const int vocab = std::uniform_int_distribution<int>(2, 6)(rng);
    const Posteriorgram post = oracle::random_posteriorgram(frames, vocab, rng);
    BeamOptions opts;
    opts.beam_width = 1;
    const TokenSeq beam = beam_search_decode(post, opts).tokens;
    if (beam != greedy_decode(post).tokens || beam != oracle::naive_greedy(post))
      ++greedy_mismatch;
  }
  int exhaustive_mismatch = 0, cases = 0;
  for (int frames = 1; frames <= 5; ++frames)
    for (int vocab = 2; vocab <= 3; ++vocab)
      for (int trial = 0; trial < 10; ++trial) {
        const Posteriorgram post = oracle::random_posteriorgram(frames, vocab, rng, 1.0);
        BeamOptions opts;
        opts.beam_width = static_cast<int>(std::pow(vocab, frames));
        const DecodeResult got = beam_search_decode(post, opts);
        const oracle::Decoded want = oracle::exhaustive_decode(post);
        if (got.tokens != want.tokens || std::abs(got.score - want.score) > 1e-9)
          ++exhaustive_mismatch;
        ++cases;
      }
  report(5, "decoding", greedy_mismatch == 0 && exhaustive_mismatch == 0,
         fmt("width-1 vs greedy mismatches %.0f/100; wide beam vs exhaustive %.0f/%.0f",
             greedy_mismatch, exhaustive_mismatch, cases));
}

void dispersion_oracle() {
  std::mt19937_64 rng(5005);
  double worst = 0.0, worst_scale = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 10)(rng);
    const int dim = std::uniform_int_distribution<int>(1, 8)(rng);
    std::vector<Vector> vs, scaled;
    for (int i = 0; i < n; ++i) {
      vs.push_back(oracle::random_unit(dim, rng) *
                   std::uniform_real_distribution<double>(0.1, 5.0)(rng));
      scaled.push_back(vs.back() * std::uniform_real_distribution<double>(0.01, 100.0)(rng));
    }
    std::vector<const Vector*> p, q;
    for (int i = 0; i < n; ++i) {
      p.push_back(&vs[i]);
      q.push_back(&scaled[i]);
    }
    const double d = cosine_dispersion(p);
    worst = std::max(worst, std::abs(d - oracle::naive_dispersion(vs)));
    worst_scale = std::max(worst_scale, std::abs(d - cosine_dispersion(q)));
  }
  const Vector a = Vector::Unit(2, 0), b = Vector::Unit(2, 1);
  const Vector c = Vector::Constant(2, 1.0 / std::sqrt(2.0));
  const std::vector<const Vector*> hand{&a, &b, &c};
  const double hand_err = std::abs(cosine_dispersion(hand) - (3.0 - std::sqrt(2.0)) / 3.0);
  report(6, "dispersion-oracle", worst <= 1e-12 && worst_scale <= 1e-12 && hand_err <= 1e-12,
         fmt("naive max |diff| %.1e, scale %.1e, hand case %.1e", worst, worst_scale,
             hand_err));
}

void experiment_criteria() {
  ExperimentConfig cfg = load_experiment_config(fs::path(SOURCE_DIR) / "configs" / "acceptance.json");
  const fs::path root = fs::temp_directory_path() / "supcon_asr_acceptance";
  fs::remove_all(root);
  cfg.output_dir = root / "run1";
  cfg.jobs = 1;

  const auto start = Clock::now();
  const ExperimentResult result = run_experiment(cfg);
  const double secs = seconds_since(start);
  std::printf("experiment: %zu runs in %.1fs, results in %s\n", result.runs.size(), secs,
              cfg.output_dir.c_str());

  const ProtocolSummary ua_ctc = summarize(result, "ua", TrainMode::kCtcOnly);
  const ProtocolSummary ua_sc = summarize(result, "ua", TrainMode::kCtcPlusSupCon);
  const double ua_gain = (ua_ctc.greedy_wer - ua_sc.greedy_wer) / ua_ctc.greedy_wer;
  const bool baseline_in_band = ua_ctc.greedy_wer >= 0.10 && ua_ctc.greedy_wer <= 0.40;
  report(7, "ua-wer-direction",
         ua_sc.greedy_wer < ua_ctc.greedy_wer && ua_gain >= 0.05 && baseline_in_band,
         fmt("greedy WER ctc %.4f -> supcon %.4f (rel %.2f%%) over %.0f runs each", ua_ctc.greedy_wer,
             ua_sc.greedy_wer, 100 * ua_gain, ua_ctc.runs) +
             fmt("; LM %.4f -> %.4f", ua_ctc.lm_wer, ua_sc.lm_wer));

  const DispersionAggregate ua_disp = aggregate_dispersion(result, "ua");
  report(8, "ua-dispersion-direction",
         ua_disp.supcon_mean < ua_disp.ctc_mean && ua_disp.relative_reduction >= 0.10 &&
             ua_disp.fraction_reduced > 0.5,
         fmt("mean %.5f -> %.5f (rel %.2f%%), fraction reduced %.3f", ua_disp.ctc_mean,
             ua_disp.supcon_mean, 100 * ua_disp.relative_reduction, ua_disp.fraction_reduced));

  const ProtocolSummary ut_ctc = summarize(result, "ut", TrainMode::kCtcOnly);
  const ProtocolSummary ut_sc = summarize(result, "ut", TrainMode::kCtcPlusSupCon);
  report(9, "ut-wer-direction", ut_sc.greedy_wer <= ut_ctc.greedy_wer,
         fmt("greedy WER ctc %.4f -> supcon %.4f over %.0f runs each", ut_ctc.greedy_wer,
             ut_sc.greedy_wer, ut_ctc.runs) +
             fmt("; LM %.4f -> %.4f", ut_ctc.lm_wer, ut_sc.lm_wer));

  ExperimentConfig again = cfg;
  again.output_dir = root / "run2";
  again.jobs = 2;
  run_experiment(again);
  int differing = 0;
  for (const char* name : {"runs.csv", "conditions.csv", "table.csv", "dispersion.json"}) {
    const std::string a = slurp(cfg.output_dir / name);
    if (a.empty() || a != slurp(again.output_dir / name)) ++differing;
  }
  report(10, "determinism", differing == 0,
         fmt("second run (jobs 2): %.0f of 4 result files differ", differing));
}

}  // namespace

int main() {
  try {
    ctc_oracle();
    gradient_checks();
    supcon_oracle();
    ramp_schedule();
    decoding();
    dispersion_oracle();
    experiment_criteria();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
