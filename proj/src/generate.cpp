#include "boklm/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "boklm/corpus.hpp"

namespace boklm::generate {

namespace {

using model::ModelParams;
using tokenizer::Specials;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("generate: " + msg);
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

std::vector<int> default_banned_ids() {
  return {Specials::pad, Specials::unk, Specials::bos, Specials::eou,
          Specials::nok};
}

void GenConfig::validate() const {
  if (beam_width < 1) fail("beam_width must be >= 1");
  if (min_len < 1 || min_len > max_len) {
    fail("need 1 <= min_len <= max_len, got min_len=" +
         std::to_string(min_len) + " max_len=" + std::to_string(max_len));
  }
}

double hypothesis_score(const BeamHypothesis& h, double length_penalty) {
  const double len = static_cast<double>(std::max<size_t>(h.ids.size(), 1));
  return h.logprob_sum / std::pow(len, length_penalty);
}

std::vector<double> step_log_probs(const ModelParams& params,
                                   const std::vector<int>& context_ids,
                                   const std::vector<int>& prefix,
                                   const GenConfig& config) {
  if (static_cast<int>(context_ids.size()) + 1 + config.max_len >
      params.config().max_positions) {
    fail("context overflow: " + std::to_string(context_ids.size()) +
         " context tokens leave no room for max_len " +
         std::to_string(config.max_len) + " within max_positions " +
         std::to_string(params.config().max_positions));
  }
  tensor::Tensor logits = model::next_token_logits(params, context_ids, prefix);
  std::vector<double> masked = logits.data();
  for (int id : config.banned_ids) {
    if (id >= 0 && id < static_cast<int>(masked.size())) masked[id] = kNegInf;
  }
  // <eos> stays unavailable until the hypothesis can reach min_len
  if (static_cast<int>(prefix.size()) + 1 < config.min_len) {
    masked[config.eos_id] = kNegInf;
  }

  double max_v = kNegInf;
  for (double v : masked) max_v = std::max(max_v, v);
  if (max_v == kNegInf) fail("all tokens masked");
  double denom = 0.0;
  for (double v : masked) {
    if (v != kNegInf) denom += std::exp(v - max_v);
  }
  const double log_denom = std::log(denom) + max_v;
  for (double& v : masked) {
    if (v != kNegInf) v -= log_denom;
  }
  return masked;
}

BeamResult beam_search_result(const ModelParams& params,
                              const std::vector<int>& context_ids,
                              const GenConfig& config) {
  config.validate();

  std::vector<BeamHypothesis> live = {BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;

  auto best_finished_score = [&] {
    double best = kNegInf;
    for (const auto& h : finished) {
      best = std::max(best, hypothesis_score(h, config.length_penalty));
    }
    return best;
  };

  for (int step = 0; step < config.max_len && !live.empty(); ++step) {
    struct Candidate {
      double logprob_sum;
      int token;
      int beam;
    };
    std::vector<Candidate> candidates;
    for (size_t b = 0; b < live.size(); ++b) {
      const auto logp = step_log_probs(params, context_ids, live[b].ids, config);
      for (int t = 0; t < static_cast<int>(logp.size()); ++t) {
        if (logp[t] == kNegInf) continue;
        candidates.push_back({live[b].logprob_sum + logp[t], t,
                              static_cast<int>(b)});
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) {
                if (a.logprob_sum != b.logprob_sum) {
                  return a.logprob_sum > b.logprob_sum;
                }
                if (a.token != b.token) return a.token < b.token;
                return a.beam < b.beam;
              });

    std::vector<BeamHypothesis> next;
    for (const Candidate& c : candidates) {
      if (static_cast<int>(next.size()) >= config.beam_width) break;
      BeamHypothesis h = live[c.beam];
      h.ids.push_back(c.token);
      h.logprob_sum = c.logprob_sum;
      if (c.token == config.eos_id) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);

    // admissible stop: score can only move toward lp / max_len^penalty
    if (!finished.empty()) {
      const double bar = best_finished_score();
      const double horizon =
          std::pow(static_cast<double>(config.max_len), config.length_penalty);
      bool someone_can_win = false;
      for (const auto& h : live) {
        if (h.logprob_sum / horizon > bar) {
          someone_can_win = true;
          break;
        }
      }
      if (!someone_can_win) break;
    }
  }

  const std::vector<BeamHypothesis>& pool = finished.empty() ? live : finished;
  if (pool.empty()) fail("no hypotheses produced");
  const BeamHypothesis* best = &pool[0];
  double best_score = hypothesis_score(pool[0], config.length_penalty);
  for (const auto& h : pool) {
    const double s = hypothesis_score(h, config.length_penalty);
    if (s > best_score ||
        (s == best_score && h.ids < best->ids)) {
      best = &h;
      best_score = s;
    }
  }
  return {best->ids, best_score, best->finished};
}

std::vector<int> beam_search(const ModelParams& params,
                             const std::vector<int>& context_ids,
                             const GenConfig& config) {
  return beam_search_result(params, context_ids, config).ids;
}

std::vector<int> greedy(const ModelParams& params,
                        const std::vector<int>& context_ids, int max_len,
                        int eos_id, const std::vector<int>& banned_ids) {
  GenConfig cfg;
  cfg.beam_width = 1;
  cfg.max_len = max_len;
  cfg.min_len = 1;
  cfg.eos_id = eos_id;
  cfg.banned_ids = banned_ids;

  std::vector<int> ids;
  for (int step = 0; step < max_len; ++step) {
    const auto logp = step_log_probs(params, context_ids, ids, cfg);
    int best = 0;
    for (int t = 1; t < static_cast<int>(logp.size()); ++t) {
      if (logp[t] > logp[best]) best = t;
    }
    ids.push_back(best);
    if (best == eos_id) break;
  }
  return ids;
}

ChatTurn chat_step(ChatSession& session, const std::string& user_utterance,
                   const ModelParams& params, const tokenizer::Vocab& vocab,
                   const GenConfig& config, int top_k,
                   int max_context_tokens) {
  session.history.push_back(user_utterance);
  ChatTurn turn;
  turn.context_ids = corpus::build_context(session.condition, session.history,
                                           vocab, max_context_tokens);

  GenConfig cfg = config;
  if (cfg.banned_ids.empty()) cfg.banned_ids = default_banned_ids();
  std::vector<int> response_ids = beam_search(params, turn.context_ids, cfg);
  if (!response_ids.empty() && response_ids.back() == cfg.eos_id) {
    response_ids.pop_back();
  }
  turn.response = vocab.decode(response_ids);
  turn.topk = model::top_k_bok(params, turn.context_ids, top_k, &vocab);

  session.history.push_back(turn.response);
  return turn;
}

}  // namespace boklm::generate
