#include "supcon_asr/lm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

namespace supcon_asr {

namespace {

std::string context_key(const TokenSeq& ctx) {
  std::string key;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    if (i) key += ' ';
    key += std::to_string(ctx[i]);
  }
  return key;
}

TokenSeq parse_context_key(const std::string& key) {
  TokenSeq ctx;
  std::istringstream in(key);
  int v;
  while (in >> v) ctx.push_back(v);
  return ctx;
}

}  // namespace

NGramModel::NGramModel(int order, double smoothing_k, int num_tokens)
    : order_(order), smoothing_k_(smoothing_k), num_tokens_(num_tokens) {
  if (order < 1) throw Error(ErrorKind::kInvalidArgument, "LM order must be >= 1");
  if (smoothing_k < 0)
    throw Error(ErrorKind::kInvalidArgument, "smoothing_k must be >= 0");
  if (num_tokens < 1)
    throw Error(ErrorKind::kInvalidArgument, "LM needs at least one token");
}

void NGramModel::check_token(int token) const {
  if (token == kEnd) return;
  if (token < 1 || token > num_tokens_)
    throw Error(ErrorKind::kUnknownToken,
                "token " + std::to_string(token) + " not in LM vocabulary");
}

void NGramModel::add_sentence(std::span<const int> tokens) {
  TokenSeq padded(order_ - 1, kStart);
  for (int t : tokens) {
    check_token(t);
    if (t == kEnd) throw Error(ErrorKind::kUnknownToken, "end marker inside sentence");
    padded.push_back(t);
  }
  padded.push_back(kEnd);
  for (std::size_t i = order_ - 1; i < padded.size(); ++i) {
    for (int len = 0; len < order_; ++len) {
      TokenSeq ctx(padded.begin() + (i - len), padded.begin() + i);
      auto& table = tables_[ctx];
      ++table.counts[padded[i]];
      ++table.total;
    }
  }
}

TokenSeq NGramModel::padded_context(std::span<const int> context) const {
  const int keep = order_ - 1;
  TokenSeq ctx(keep, kStart);
  const int have = static_cast<int>(context.size());
  for (int j = 0; j < std::min(keep, have); ++j)
    ctx[keep - 1 - j] = context[have - 1 - j];
  return ctx;
}

int NGramModel::count(const TokenSeq& context, int token) const {
  auto it = tables_.find(context);
  if (it == tables_.end()) return 0;
  auto c = it->second.counts.find(token);
  return c == it->second.counts.end() ? 0 : c->second;
}

int NGramModel::context_total(const TokenSeq& context) const {
  auto it = tables_.find(context);
  return it == tables_.end() ? 0 : it->second.total;
}

double NGramModel::next_token_logprob(std::span<const int> context,
                                      int token) const {
  check_token(token);
  for (int t : context) check_token(t);
  const TokenSeq ctx = padded_context(context);

  if (smoothing_k_ > 0) {
    const double num = count(ctx, token) + smoothing_k_;
    const double den = context_total(ctx) + smoothing_k_ * vocab_size();
    return std::log(num / den);
  }

  double penalty = 0.0;
  for (std::size_t drop = 0; drop <= ctx.size(); ++drop) {
    const TokenSeq suffix(ctx.begin() + drop, ctx.end());
    const int c = count(suffix, token);
    if (c > 0)
      return penalty + std::log(static_cast<double>(c) / context_total(suffix));
    penalty += std::log(kBackoffFactor);
  }
  return -std::numeric_limits<double>::infinity();
}

double NGramModel::score_sequence(std::span<const int> tokens) const {
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == kEnd)
      throw Error(ErrorKind::kUnknownToken, "end marker inside sequence");
    total += next_token_logprob(tokens.first(i), tokens[i]);
  }
  return total + next_token_logprob(tokens, kEnd);
}

void NGramModel::save(const std::filesystem::path& path) const {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [ctx, table] : tables_) {
    nlohmann::json row = nlohmann::json::object();
    for (const auto& [tok, c] : table.counts) row[std::to_string(tok)] = c;
    counts[context_key(ctx)] = std::move(row);
  }
  nlohmann::json vocab = nlohmann::json::array();
  for (int t = 1; t <= num_tokens_; ++t) vocab.push_back(t);
  vocab.push_back(kEnd);
  const nlohmann::json j = {{"order", order_},
                            {"smoothing_k", smoothing_k_},
                            {"vocab", vocab},
                            {"counts", counts}};
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write LM file " + path.string());
  out << j.dump() << '\n';
}

NGramModel NGramModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read LM file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    const auto vocab = j.at("vocab").get<std::vector<int>>();
    NGramModel m(j.at("order").get<int>(), j.at("smoothing_k").get<double>(),
                 static_cast<int>(vocab.size()) - 1);
    for (const auto& [key, row] : j.at("counts").items()) {
      auto& table = m.tables_[parse_context_key(key)];
      for (const auto& [tok, c] : row.items()) {
        table.counts[std::stoi(tok)] = c.get<int>();
        table.total += c.get<int>();
      }
    }
    return m;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kMalformedRecord, path.string() + ": " + e.what());
  }
}

NGramModel train_lm(std::span<const TokenSeq> transcripts, int order,
                    double smoothing_k, int num_tokens) {
  if (transcripts.empty())
    throw Error(ErrorKind::kEmptyCorpus, "cannot train an LM on no transcripts");
  NGramModel model(order, smoothing_k, num_tokens);
  for (const auto& t : transcripts) model.add_sentence(t);
  return model;
}

}  // namespace supcon_asr
