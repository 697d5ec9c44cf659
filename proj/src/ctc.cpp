#include "supcon_asr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

namespace supcon_asr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kBlank = 0;

void check_target(const Posteriorgram& post, std::span<const int> target) {
  if (target.empty())
    throw Error(ErrorKind::kInvalidArgument, "CTC target must be non-empty");
  for (int tok : target)
    if (tok <= kBlank || tok >= post.vocab_size())
      throw Error(ErrorKind::kInvalidArgument,
                  "CTC target token out of range: " + std::to_string(tok));
}

}  // namespace

CtcHead CtcHead::zeros_like() const {
  return {Matrix::Zero(weight.rows(), weight.cols()), Vector::Zero(bias.size())};
}

CtcHead init_ctc_head(int vocab_size, int hidden_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  CtcHead head{Matrix(vocab_size, hidden_dim), Vector::Zero(vocab_size)};
  for (int v = 0; v < vocab_size; ++v)
    for (int d = 0; d < hidden_dim; ++d) head.weight(v, d) = scale * dist(rng);
  return head;
}

Posteriorgram ctc_logits(const CtcHead& head, const FrameRepresentation& frames) {
  if (head.weight.cols() != frames.values.cols() ||
      head.bias.size() != head.weight.rows())
    throw Error(ErrorKind::kShapeMismatch, "CTC head does not match frame dimension");
  Matrix logits = frames.values.topRows(frames.valid_len) * head.weight.transpose();
  logits.rowwise() += head.bias.transpose();
  return {log_softmax_rows(logits)};
}

int ctc_min_frames(std::span<const int> target) {
  int need = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

CtcResult ctc_loss_and_grad(const Posteriorgram& post, std::span<const int> target) {
  check_target(post, target);
  const int num_frames = post.frames();
  const int vocab = post.vocab_size();
  if (num_frames < ctc_min_frames(target))
    throw Error(ErrorKind::kInfeasible,
                "target of length " + std::to_string(target.size()) +
                    " cannot be aligned in " + std::to_string(num_frames) +
                    " frames");

  // Blank-augmented label sequence: blank, y1, blank, y2, ..., blank.
  const int num_states = 2 * static_cast<int>(target.size()) + 1;
  std::vector<int> labels(num_states, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) labels[2 * i + 1] = target[i];
  auto can_skip = [&](int s) {
    return labels[s] != kBlank && s >= 2 && labels[s - 2] != labels[s];
  };

  const Matrix& lp = post.log_probs;
  Matrix alpha = Matrix::Constant(num_frames, num_states, kNegInf);
  Matrix beta = Matrix::Constant(num_frames, num_states, kNegInf);

  alpha(0, 0) = lp(0, labels[0]);
  if (num_states > 1) alpha(0, 1) = lp(0, labels[1]);
  for (int t = 1; t < num_frames; ++t) {
    for (int s = 0; s < num_states; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, labels[s]);
    }
  }

  // beta(t, s) includes the emission at t.
  const int last = num_frames - 1;
  beta(last, num_states - 1) = lp(last, labels[num_states - 1]);
  if (num_states > 1) beta(last, num_states - 2) = lp(last, labels[num_states - 2]);
  for (int t = last - 1; t >= 0; --t) {
    for (int s = 0; s < num_states; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < num_states) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < num_states && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + lp(t, labels[s]);
    }
  }

  double log_likelihood = alpha(last, num_states - 1);
  if (num_states > 1)
    log_likelihood = log_add(log_likelihood, alpha(last, num_states - 2));
  if (log_likelihood == kNegInf)
    throw Error(ErrorKind::kInfeasible, "target has zero probability");

  CtcResult result;
  result.loss = -log_likelihood;
  result.grad_logits = lp.array().exp().matrix();
  for (int t = 0; t < num_frames; ++t) {
    std::vector<double> occupancy(vocab, kNegInf);
    for (int s = 0; s < num_states; ++s) {
      const double ab = alpha(t, s) + beta(t, s);
      if (ab == kNegInf) continue;
      occupancy[labels[s]] =
          log_add(occupancy[labels[s]], ab - lp(t, labels[s]));
    }
    for (int v = 0; v < vocab; ++v)
      if (occupancy[v] != kNegInf)
        result.grad_logits(t, v) -= std::exp(occupancy[v] - log_likelihood);
  }
  return result;
}

double brute_force_ctc(const Posteriorgram& post, std::span<const int> target) {
  check_target(post, target);
  const int num_frames = post.frames();
  const int vocab = post.vocab_size();
  double paths = 1.0;
  for (int t = 0; t < num_frames; ++t) paths *= vocab;
  if (paths > 1e7)
    throw Error(ErrorKind::kTooLarge, "V^T exceeds the enumeration limit");

  const TokenSeq want(target.begin(), target.end());
  std::vector<int> path(num_frames, 0);
  double total = kNegInf;
  TokenSeq collapsed;
  while (true) {
    collapsed.clear();
    int prev = -1;
    double logp = 0.0;
    for (int t = 0; t < num_frames; ++t) {
      logp += post.log_probs(t, path[t]);
      if (path[t] != prev && path[t] != kBlank) collapsed.push_back(path[t]);
      prev = path[t];
    }
    if (collapsed == want) total = log_add(total, logp);

    int t = num_frames - 1;
    while (t >= 0 && ++path[t] == vocab) path[t--] = 0;
    if (t < 0) break;
  }
  if (total == kNegInf)
    throw Error(ErrorKind::kInfeasible, "no alignment collapses to the target");
  return -total;
}

Matrix ctc_head_backward(const CtcHead& head, const FrameRepresentation& frames,
                         const Matrix& grad_logits, CtcHead& head_grad) {
  const int len = frames.valid_len;
  if (grad_logits.rows() != len || grad_logits.cols() != head.vocab_size())
    throw Error(ErrorKind::kShapeMismatch, "CTC gradient shape");
  head_grad.weight.noalias() += grad_logits.transpose() * frames.values.topRows(len);
  head_grad.bias += grad_logits.colwise().sum().transpose();
  Matrix grad_frames = Matrix::Zero(frames.values.rows(), frames.values.cols());
  grad_frames.topRows(len) = grad_logits * head.weight;
  return grad_frames;
}

DecodeResult greedy_decode(const Posteriorgram& post) {
  DecodeResult out;
  int prev = -1;
  for (int t = 0; t < post.frames(); ++t) {
    int best = 0;
    for (int v = 1; v < post.vocab_size(); ++v)
      if (post.log_probs(t, v) > post.log_probs(t, best)) best = v;
    out.score += post.log_probs(t, best);
    if (best != prev && best != kBlank) out.tokens.push_back(best);
    prev = best;
  }
  return out;
}

namespace {

struct BeamEntry {
  double blank = kNegInf;     // summed, path ends in blank
  double nonblank = kNegInf;  // summed, path ends in last token
  double vit_blank = kNegInf;
  double vit_nonblank = kNegInf;
  double fusion = 0.0;  // accumulated lm_weight * log p_LM + word_bonus

  double total() const { return log_add(blank, nonblank) + fusion; }
  double prune_key() const { return std::max(vit_blank, vit_nonblank) + fusion; }
};

}  // namespace

DecodeResult beam_search_decode(const Posteriorgram& post, const BeamOptions& opts) {
  if (opts.beam_width < 1)
    throw Error(ErrorKind::kInvalidBeam, "beam width must be >= 1");
  if (opts.lm_weight < 0)
    throw Error(ErrorKind::kInvalidArgument, "lm_weight must be >= 0");
  const bool use_lm = opts.lm != nullptr && opts.lm_weight > 0;
  const int vocab = post.vocab_size();

  // std::map keeps prefixes in lexicographic order for tie-breaking.
  std::map<TokenSeq, BeamEntry> beams;
  beams[{}] = BeamEntry{0.0, kNegInf, 0.0, kNegInf, 0.0};

  for (int t = 0; t < post.frames(); ++t) {
    std::map<TokenSeq, BeamEntry> next;
    for (const auto& [prefix, entry] : beams) {
      const double summed = log_add(entry.blank, entry.nonblank);
      const double vit = std::max(entry.vit_blank, entry.vit_nonblank);

      {
        BeamEntry& same = next.try_emplace(prefix).first->second;
        same.fusion = entry.fusion;
        const double pb = post.log_probs(t, kBlank);
        same.blank = log_add(same.blank, summed + pb);
        same.vit_blank = std::max(same.vit_blank, vit + pb);
        if (!prefix.empty()) {
          const double pl = post.log_probs(t, prefix.back());
          same.nonblank = log_add(same.nonblank, entry.nonblank + pl);
          same.vit_nonblank = std::max(same.vit_nonblank, entry.vit_nonblank + pl);
        }
      }

      for (int v = 1; v < vocab; ++v) {
        const double pv = post.log_probs(t, v);
        const bool repeat = !prefix.empty() && prefix.back() == v;
        // A repeated token only extends from a blank-ending path.
        const double from = repeat ? entry.blank : summed;
        const double from_vit = repeat ? entry.vit_blank : vit;
        if (from == kNegInf) continue;
        TokenSeq extended = prefix;
        extended.push_back(v);
        auto [it, inserted] = next.try_emplace(std::move(extended));
        BeamEntry& ext = it->second;
        if (inserted) {
          ext.fusion = entry.fusion + opts.word_bonus;
          if (use_lm)
            ext.fusion += opts.lm_weight * opts.lm->next_token_logprob(prefix, v);
        }
        ext.nonblank = log_add(ext.nonblank, from + pv);
        ext.vit_nonblank = std::max(ext.vit_nonblank, from_vit + pv);
      }
    }

    std::vector<std::pair<const TokenSeq*, const BeamEntry*>> ranked;
    ranked.reserve(next.size());
    for (const auto& kv : next) ranked.emplace_back(&kv.first, &kv.second);
    // Stable sort over lexicographic order keeps the smaller prefix first on ties.
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second->prune_key() > b.second->prune_key();
    });
    std::map<TokenSeq, BeamEntry> kept;
    const std::size_t keep =
        std::min(ranked.size(), static_cast<std::size_t>(opts.beam_width));
    for (std::size_t i = 0; i < keep; ++i) kept.emplace(*ranked[i].first, *ranked[i].second);
    beams = std::move(kept);
  }

  DecodeResult best;
  best.score = kNegInf;
  bool found = false;
  for (const auto& [prefix, entry] : beams) {
    const double score = entry.total();
    if (!found || score > best.score) {
      best.tokens = prefix;
      best.score = score;
      found = true;
    }
  }
  return best;
}

int edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  std::vector<int> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const int sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

WerStats wer_stats(std::span<const TokenSeq> refs, std::span<const TokenSeq> hyps) {
  if (refs.size() != hyps.size())
    throw Error(ErrorKind::kLengthMismatch,
                std::to_string(refs.size()) + " references vs " +
                    std::to_string(hyps.size()) + " hypotheses");
  WerStats stats;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty())
      throw Error(ErrorKind::kEmptyReference,
                  "reference " + std::to_string(i) + " is empty");
    stats.edits += edit_distance(refs[i], hyps[i]);
    stats.ref_len += static_cast<std::int64_t>(refs[i].size());
    ++stats.n_utt;
  }
  return stats;
}

double word_error_rate(std::span<const TokenSeq> refs, std::span<const TokenSeq> hyps) {
  return wer_stats(refs, hyps).wer();
}

}  // namespace supcon_asr
