#pragma once

#include <string>
#include <vector>

#include "boklm/keywords.hpp"
#include "boklm/tokenizer.hpp"

namespace boklm::corpus {

/// A multi-turn conversation with an optional condition (persona lines).
struct Dialogue {
  std::string id;
  std::vector<std::string> condition;  // empty when absent
  std::vector<std::string> turns;      // u_1 .. u_T
};

struct LoadResult {
  std::vector<Dialogue> dialogues;
  int rejected = 0;
  std::vector<std::string> warnings;  // one per rejected line, with line number
};

/// Loads dialogue JSONL: one {"id", "condition", "turns"} object per line.
/// Lines with JSON syntax errors abort with the line number; schema
/// violations (missing fields, fewer than two turns) reject the record
/// and append a warning.
LoadResult load_jsonl(const std::string& path);

/// One per-turn training instance: the encoded context and response plus
/// the keyword label K_t for the response.
struct TrainingExample {
  std::vector<int> context_ids;
  std::vector<int> response_ids;   // response tokens, <eos>-terminated
  std::vector<int> bok_label_ids;  // never empty; [<nok>] when no keywords
  int turn_index = 0;              // t, 1-based; targets start at t = 2
};

keywords::ExtractorConfig default_label_extractor();

struct LabelConfig {
  keywords::ExtractorConfig extractor = default_label_extractor();
  int k_max = 8;
  bool dedup_labels = false;  // keep first occurrence of each id
};

/// Extracts keywords from `response` in decreasing relevance, joins the
/// surfaces with single spaces, encodes them, and keeps the first k_max
/// ids. Returns [<nok>] when extraction finds nothing.
std::vector<int> prepare_bok_label(const std::string& response,
                                   const LabelConfig& config,
                                   const tokenizer::Vocab& vocab);

/// Context layout: [condition + <eou>]? u_1 <eos> ... u_k <eos>,
/// left-truncated at whole-utterance boundaries to fit
/// max_context_tokens; the condition is never truncated (an oversized
/// condition is an error).
std::vector<int> build_context(const std::vector<std::string>& condition,
                               const std::vector<std::string>& turns,
                               const tokenizer::Vocab& vocab,
                               int max_context_tokens);

/// Builds one example per target turn t in 2..T using the context layout
/// above over u_1..u_{t-1}.
std::vector<TrainingExample> build_examples(const Dialogue& dialogue,
                                            const tokenizer::Vocab& vocab,
                                            const LabelConfig& label_config,
                                            int max_context_tokens);

/// build_examples over a corpus, ordered by (dialogue order, turn_index).
std::vector<TrainingExample> build_all_examples(
    const std::vector<Dialogue>& dialogues, const tokenizer::Vocab& vocab,
    const LabelConfig& label_config, int max_context_tokens);

struct CorpusStats {
  int num_dialogues = 0;
  int num_turns = 0;
  int t_max = 0;
  int t_min = 0;
  double t_avg = 0.0;
};

CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues);

/// Prepared-example cache (JSONL). Serialization is deterministic:
/// identical examples produce identical bytes.
std::string examples_to_jsonl(const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> examples_from_jsonl(const std::string& text);
void save_examples(const std::string& path,
                   const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> load_examples(const std::string& path);

}  // namespace boklm::corpus
