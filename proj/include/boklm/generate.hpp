#pragma once

#include <string>
#include <vector>

#include "boklm/model.hpp"
#include "boklm/tokenizer.hpp"

namespace boklm::generate {

/// Special ids a dialogue model must never emit (<eos> excluded: it
/// terminates generation).
std::vector<int> default_banned_ids();

struct GenConfig {
  int beam_width = 5;
  int max_len = 40;
  int min_len = 11;
  double length_penalty = 0.1;
  int eos_id = tokenizer::Specials::eos;
  std::vector<int> banned_ids;  // masked at every step

  void validate() const;  // 1 <= min_len <= max_len, beam_width >= 1
};

struct BeamHypothesis {
  std::vector<int> ids;
  double logprob_sum = 0.0;
  bool finished = false;
};

/// Length-normalized score: logprob_sum / len^length_penalty.
double hypothesis_score(const BeamHypothesis& h, double length_penalty);

/// Masked, renormalized next-step log-probabilities: banned ids are
/// removed, and <eos> is removed while the resulting length would fall
/// short of min_len.
std::vector<double> step_log_probs(const model::ModelParams& params,
                                   const std::vector<int>& context_ids,
                                   const std::vector<int>& prefix,
                                   const GenConfig& config);

struct BeamResult {
  std::vector<int> ids;
  double score = 0.0;
  bool finished = false;
};

/// Standard beam expansion with a separate finished pool; stops early
/// when no live hypothesis can still beat the best finished score.
/// Deterministic tie-break on (token id, beam index).
BeamResult beam_search_result(const model::ModelParams& params,
                              const std::vector<int>& context_ids,
                              const GenConfig& config);

std::vector<int> beam_search(const model::ModelParams& params,
                             const std::vector<int>& context_ids,
                             const GenConfig& config);

/// Argmax decoding until <eos> or max_len.
std::vector<int> greedy(const model::ModelParams& params,
                        const std::vector<int>& context_ids, int max_len,
                        int eos_id = tokenizer::Specials::eos,
                        const std::vector<int>& banned_ids = {});

// ---- interactive sessions -----------------------------------------------

struct ChatSession {
  std::vector<std::string> condition;  // persona lines, optional
  std::vector<std::string> history;    // alternating user/model turns
};

struct ChatTurn {
  std::string response;
  std::vector<model::TokenProb> topk;
  std::vector<int> context_ids;
};

/// Appends the user turn, builds the context per the corpus layout
/// (oldest turns dropped on overflow), decodes a response, appends it to
/// the history, and reports the top-k keyword panel for the same context.
ChatTurn chat_step(ChatSession& session, const std::string& user_utterance,
                   const model::ModelParams& params,
                   const tokenizer::Vocab& vocab, const GenConfig& config,
                   int top_k, int max_context_tokens);

}  // namespace boklm::generate
