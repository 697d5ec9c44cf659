#include "supcon_asr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <unordered_map>

namespace supcon_asr {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, "train config: " + what);
}

std::string ids_of(std::span<const Utterance* const> batch) {
  std::string out;
  for (const Utterance* u : batch) {
    if (!out.empty()) out += ',';
    out += u->id;
  }
  return out;
}

}  // namespace

std::string to_string(TrainMode mode) {
  return mode == TrainMode::kCtcOnly ? "ctc" : "supcon";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "ctc" || s == "ctc_only") return TrainMode::kCtcOnly;
  if (s == "supcon" || s == "ctc_plus_supcon") return TrainMode::kCtcPlusSupCon;
  throw Error(ErrorKind::kInvalidArgument, "unknown train mode: " + s);
}

void TrainConfig::validate() const {
  require(ramp_ratio > 0 && ramp_ratio <= 1, "ramp_ratio must be in (0, 1]");
  require(lambda_max >= 0, "lambda_max must be >= 0");
  require(temperature > 0, "temperature must be > 0");
  require(m_transcripts >= 1 && k_utterances >= 1, "M and K must be >= 1");
  require(patience >= 1, "patience must be >= 1");
  require(t_max >= 0, "t_max must be >= 0");
  require(learning_rate > 0, "learning_rate must be > 0");
  require(warmup_epochs >= 0 && warmup_batch_size >= 1, "bad warm-up settings");
  require(max_epochs >= 0 && warmup_epochs + max_epochs >= 1,
          "need at least one warm-up or training epoch");
}

double ramp_weight(const TrainConfig& cfg, long long t) {
  const double ramp_steps = cfg.ramp_ratio * static_cast<double>(cfg.t_max);
  if (ramp_steps <= 0) return cfg.lambda_max;
  return cfg.lambda_max * std::min(1.0, static_cast<double>(t) / ramp_steps);
}

double learning_rate_at(const TrainConfig& cfg, long long t, long long t_max) {
  if (cfg.lr_schedule == LrSchedule::kConstant || t_max <= 0) return cfg.learning_rate;
  const double warm = cfg.lr_warmup_ratio * static_cast<double>(t_max);
  const double step = static_cast<double>(t) + 1.0;
  if (step <= warm) return cfg.learning_rate * step / warm;
  const double progress =
      std::min(1.0, (step - warm) / std::max(1.0, static_cast<double>(t_max) - warm));
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// --- sampling ------------------------------------------------------------

BalancedSampler::BalancedSampler(std::span<const Utterance* const> utterances) {
  std::map<std::string, std::map<std::string, std::vector<const Utterance*>>> grouped;
  for (const Utterance* u : utterances) grouped[u->transcript_id][u->speaker_id].push_back(u);
  for (auto& [transcript, speakers] : grouped) {
    Group g;
    g.transcript_id = transcript;
    for (auto& [speaker, utts] : speakers) g.by_speaker.push_back(std::move(utts));
    groups_.push_back(std::move(g));
  }
}

std::vector<const Utterance*> BalancedSampler::sample(int m_transcripts,
                                                      int k_utterances,
                                                      Rng& rng) const {
  std::vector<const Group*> eligible;
  for (const auto& g : groups_)
    if (static_cast<int>(g.by_speaker.size()) >= k_utterances) eligible.push_back(&g);
  if (static_cast<int>(eligible.size()) < m_transcripts)
    throw Error(ErrorKind::kInsufficientTranscripts,
                "only " + std::to_string(eligible.size()) + " transcripts have " +
                    std::to_string(k_utterances) + " distinct speakers, need " +
                    std::to_string(m_transcripts));

  // Partial Fisher-Yates with explicit uniform draws keeps sampling
  // independent of the standard library's shuffle implementation.
  auto draw = [&rng](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };
  std::vector<const Utterance*> batch;
  batch.reserve(static_cast<std::size_t>(m_transcripts) * k_utterances);
  for (int m = 0; m < m_transcripts; ++m) {
    std::swap(eligible[m], eligible[m + draw(eligible.size() - m)]);
    const Group& g = *eligible[m];
    std::vector<std::size_t> speakers(g.by_speaker.size());
    for (std::size_t i = 0; i < speakers.size(); ++i) speakers[i] = i;
    for (int k = 0; k < k_utterances; ++k) {
      std::swap(speakers[k], speakers[k + draw(speakers.size() - k)]);
      const auto& utts = g.by_speaker[speakers[k]];
      batch.push_back(utts[draw(utts.size())]);
    }
  }
  return batch;
}

std::vector<std::string> sample_balanced_batch(std::span<const Utterance* const> train,
                                               int m_transcripts, int k_utterances,
                                               Rng& rng) {
  if (k_utterances == 1)
    std::cerr << "warning: K=1 gives every SupCon anchor an empty positive set\n";
  std::vector<std::string> ids;
  for (const Utterance* u : BalancedSampler(train).sample(m_transcripts, k_utterances, rng))
    ids.push_back(u->id);
  return ids;
}

// --- objective -------------------------------------------------------------

ObjectiveResult compute_objective(const ModelParams& params,
                                  std::span<const Utterance* const> batch,
                                  const ObjectiveOptions& opts) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  ObjectiveResult out;
  out.grad = params.zeros_like();
  EncodedBatch encoded = encode_batch(params.encoder, batch);
  const int n = static_cast<int>(batch.size());
  std::vector<Matrix> grad_frames(n);

  for (int i = 0; i < n; ++i) {
    const auto& frames = encoded.outputs[i];
    const Posteriorgram post = ctc_logits(params.ctc, frames);
    CtcResult ctc;
    try {
      ctc = ctc_loss_and_grad(post, batch[i]->tokens);
    } catch (const Error& e) {
      throw Error(e.kind(), e.message() + " [utterance " + batch[i]->id + "]");
    }
    out.ctc_loss += ctc.loss / n;
    const Matrix g_logits = ctc.grad_logits * (opts.ctc_weight / n);
    grad_frames[i] = ctc_head_backward(params.ctc, frames, g_logits, out.grad.ctc);
  }

  if (opts.with_supcon) {
    ContrastBatch contrast;
    std::vector<Projection> proj(n);
    for (int i = 0; i < n; ++i) {
      proj[i] = project_and_normalize(params.projection,
                                      masked_mean_pool(encoded.outputs[i]));
      contrast.projections.push_back(proj[i].z);
      contrast.labels.push_back(batch[i]->transcript_id);
    }
    contrast.anchors = opts.anchors == AnchorMode::kAll
                           ? all_anchors(n)
                           : one_anchor_per_label(contrast.labels);
    SupConResult sc;
    try {
      sc = supcon_loss_and_grad(contrast, opts.temperature);
    } catch (const Error& e) {
      throw Error(e.kind(), e.message() + " [batch " + ids_of(batch) + "]");
    }
    out.supcon_loss = sc.loss;
    for (int i = 0; i < n; ++i) {
      const Vector gz = sc.grad_z[i] * opts.supcon_weight;
      const Vector gu = projection_backward(params.projection, proj[i], gz,
                                            out.grad.projection);
      grad_frames[i] += masked_mean_pool_backward(encoded.outputs[i], gu);
    }
  }

  out.grad.encoder = encoder_backward(params.encoder, encoded.cache, grad_frames);
  out.loss = opts.ctc_weight * out.ctc_loss + opts.supcon_weight * out.supcon_loss;
  return out;
}

double mean_ctc_loss(const ModelParams& params,
                     std::span<const Utterance* const> utterances) {
  if (utterances.empty()) return 0.0;
  double total = 0.0;
  for (const Utterance* u : utterances) {
    const auto frames = encode_one(params.encoder, *u);
    try {
      total += ctc_loss_and_grad(ctc_logits(params.ctc, frames), u->tokens).loss;
    } catch (const Error& e) {
      throw Error(e.kind(), e.message() + " [utterance " + u->id + "]");
    }
  }
  return total / static_cast<double>(utterances.size());
}

// --- optimizer -------------------------------------------------------------

TrainState TrainState::fresh(ModelParams params) {
  TrainState s;
  s.adam.first = params.zeros_like();
  s.adam.second = params.zeros_like();
  s.params = std::move(params);
  return s;
}

void adamw_update(TrainState& state, const ModelParams& grad, double lr,
                  const TrainConfig& cfg, const bool update_group[3]) {
  for (int g = 0; g < 3; ++g)
    if (update_group[g]) ++state.adam.updates[g];

  std::vector<Eigen::Map<Vector>> params, first, second;
  std::vector<Eigen::Map<const Vector>> grads;
  std::vector<int> groups;
  for_each_block(state.params, [&](auto b, int g) { params.push_back(b); groups.push_back(g); });
  for_each_block(state.adam.first, [&](auto b, int) { first.push_back(b); });
  for_each_block(state.adam.second, [&](auto b, int) { second.push_back(b); });
  for_each_block(grad, [&](auto b, int) { grads.push_back(b); });

  for (std::size_t i = 0; i < params.size(); ++i) {
    const int g = groups[i];
    if (!update_group[g]) continue;
    const double t = static_cast<double>(state.adam.updates[g]);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
    first[i] = cfg.adam_beta1 * first[i] + (1.0 - cfg.adam_beta1) * grads[i];
    second[i] = cfg.adam_beta2 * second[i] +
                (1.0 - cfg.adam_beta2) * grads[i].cwiseAbs2();
    params[i] -= lr * cfg.weight_decay * params[i];
    params[i].array() -= lr * (first[i].array() / c1) /
                         ((second[i].array() / c2).sqrt() + cfg.adam_eps);
  }
}

StepResult combined_step(TrainState& state, std::span<const Utterance* const> batch,
                         const TrainConfig& cfg, long long t_max) {
  TrainConfig resolved = cfg;
  resolved.t_max = static_cast<int>(t_max);
  const bool supcon = cfg.mode == TrainMode::kCtcPlusSupCon;

  StepResult r;
  r.lambda_t = supcon ? ramp_weight(resolved, state.step) : 0.0;
  ObjectiveOptions opts;
  opts.with_supcon = supcon;
  opts.supcon_weight = r.lambda_t;
  opts.temperature = cfg.temperature;
  opts.anchors = cfg.anchors;
  const ObjectiveResult obj = compute_objective(state.params, batch, opts);
  r.loss = obj.loss;
  r.ctc_loss = obj.ctc_loss;
  r.supcon_loss = obj.supcon_loss;

  const bool groups[3] = {true, true, supcon};
  adamw_update(state, obj.grad, learning_rate_at(cfg, state.step, t_max), cfg, groups);
  ++state.step;
  return r;
}

void write_history(std::span<const HistoryRow> history,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write history " + path.string());
  out << "step,epoch,loss,ctc_loss,supcon_loss,lambda_t,val_loss\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  h.step, h.epoch, h.loss, h.ctc_loss, h.supcon_loss, h.lambda_t,
                  h.val_loss);
    out << buf;
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

bool EarlyStopping::observe(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::vector<const Utterance*> select_utterances(const Corpus& corpus,
                                                std::span<const std::string> ids) {
  std::unordered_map<std::string, const Utterance*> by_id;
  for (const auto& u : corpus.utterances) by_id.emplace(u.id, &u);
  std::vector<const Utterance*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw Error(ErrorKind::kInvalidArgument, "split references unknown utterance " + id);
    out.push_back(it->second);
  }
  return out;
}

// --- training loop ---------------------------------------------------------

TrainOutput train(const Corpus& corpus, const SplitPlan& split, const TrainConfig& cfg) {
  cfg.validate();
  const auto train_utts = select_utterances(corpus, split.train_ids);
  const auto val_utts = select_utterances(corpus, split.val_ids);
  if (val_utts.empty())
    throw Error(ErrorKind::kEmptyValidation, "split has no validation utterances");
  if (train_utts.empty())
    throw Error(ErrorKind::kInsufficientData, "split has no training utterances");

  ModelShape shape = cfg.model;
  shape.feature_dim = corpus.feature_dim;
  shape.vocab_size = corpus.vocab.size();
  TrainState state = TrainState::fresh(init_model(shape, derive_seed(cfg.seed, 1)));
  Rng rng(derive_seed(cfg.seed, 2));

  const int batch_size = cfg.m_transcripts * cfg.k_utterances;
  const long long batches_per_epoch =
      (static_cast<long long>(train_utts.size()) + batch_size - 1) / batch_size;
  const long long t_max =
      cfg.t_max > 0 ? cfg.t_max : batches_per_epoch * cfg.max_epochs;

  TrainOutput out;
  out.t_max = t_max;
  out.params = state.params;
  EarlyStopping stopper(cfg.patience);
  int epoch = 0;

  auto end_epoch = [&](double loss, double ctc, double sc, double lambda_t, int batches) {
    ++epoch;
    const double val = mean_ctc_loss(state.params, val_utts);
    const double denom = std::max(1, batches);
    out.history.push_back({state.step, epoch, loss / denom, ctc / denom, sc / denom,
                           lambda_t, val});
    if (stopper.observe(val)) {
      out.params = state.params;
      out.best_epoch = epoch;
    }
    state.epoch = epoch;
    state.best_val_loss = stopper.best();
    state.epochs_since_improvement = stopper.epochs_since_improvement();
  };

  // Phase 1: head-only CTC warm-up with the encoder frozen.
  const bool head_only[3] = {false, true, false};
  for (int w = 0; w < cfg.warmup_epochs; ++w) {
    std::vector<const Utterance*> order = train_utts;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.warmup_batch_size) {
      const std::size_t len =
          std::min<std::size_t>(cfg.warmup_batch_size, order.size() - start);
      const std::span<const Utterance* const> batch(order.data() + start, len);
      const ObjectiveResult obj = compute_objective(state.params, batch, {});
      adamw_update(state, obj.grad, cfg.learning_rate, cfg, head_only);
      sum += obj.ctc_loss;
      ++batches;
    }
    end_epoch(sum, sum, 0.0, 0.0, batches);
  }

  // Phase 2: combined objective on transcript-balanced batches.
  const BalancedSampler sampler(train_utts);
  for (int e = 0; e < cfg.max_epochs && state.step < t_max; ++e) {
    double loss = 0, ctc = 0, sc = 0, lambda_t = 0;
    int batches = 0;
    for (long long b = 0; b < batches_per_epoch && state.step < t_max; ++b) {
      const auto batch = sampler.sample(cfg.m_transcripts, cfg.k_utterances, rng);
      const StepResult r = combined_step(state, batch, cfg, t_max);
      loss += r.loss;
      ctc += r.ctc_loss;
      sc += r.supcon_loss;
      lambda_t = r.lambda_t;
      ++batches;
    }
    end_epoch(loss, ctc, sc, lambda_t, batches);
    if (stopper.should_stop()) break;
  }
  out.steps = state.step;
  return out;
}

}  // namespace supcon_asr
