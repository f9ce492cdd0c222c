#pragma once

#include <array>
#include <string>
#include <vector>

#include "boklm/corpus.hpp"
#include "boklm/model.hpp"
#include "boklm/tokenizer.hpp"

namespace boklm::evalmetrics {

struct EvalInstance {
  std::vector<std::string> context;
  std::vector<std::string> condition;
  std::string hypothesis;
  std::vector<std::string> references;  // nonempty for referenced metrics
};

std::vector<EvalInstance> load_instances(const std::string& path);

/// Metric tokenization: lowercase, punctuation padded with spaces, then
/// whitespace split.
std::vector<std::string> metric_tokenize(const std::string& text);

/// Corpus-level BLEU-n: modified n-gram precision clipped by the per-gram
/// maximum over references, geometric mean of orders 1..n, brevity
/// penalty against the closest reference length (ties -> shorter).
double bleu_n(const std::vector<EvalInstance>& instances, int n);

/// Corpus-level NIST-n: information weights from the pooled reference
/// corpus, co-occurrence sums averaged over orders 1..n, NIST brevity
/// factor (0.5 at a 2/3 length ratio).
double nist_n(const std::vector<EvalInstance>& instances, int n);

/// Distinct n-grams over all hypotheses divided by total n-grams.
double distinct_n(const std::vector<std::string>& hypotheses, int n);

struct EntropyReport {
  std::array<double, 4> h{};  // H_1..H_4, natural log
  double mean = 0.0;
  std::array<bool, 4> empty_order{};  // true where no n-grams existed
};

/// Empirical n-gram entropies H_1..H_4 pooled across hypotheses.
EntropyReport entropy_n(const std::vector<std::string>& hypotheses);

/// BoK-LM reference-free score: builds the example exactly as in
/// training (keyword label extracted from the candidate response), runs a
/// forward pass and returns lm + lambda * bok. Lower is better.
double score_boklm(const model::ModelParams& params,
                   const tokenizer::Vocab& vocab,
                   const std::vector<std::string>& context,
                   const std::vector<std::string>& condition,
                   const std::string& response, double lambda,
                   const corpus::LabelConfig& label_config = {},
                   int max_context_tokens = 256);

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;
  int n = 0;
};

/// Product-moment correlation with a two-sided t-approximation p-value.
Correlation pearson(const std::vector<double>& xs,
                    const std::vector<double>& ys);

/// Rank correlation with average ranks on ties.
Correlation spearman(const std::vector<double>& xs,
                     const std::vector<double>& ys);

struct HumanJudgment {
  std::vector<std::string> context;
  std::vector<std::string> condition;
  std::string response;
  double human_score = 0.0;
};

std::vector<HumanJudgment> load_judgments(const std::string& path);

struct CorrelationReport {
  Correlation pearson;
  Correlation spearman;
  int n = 0;
};

/// Scores every judgment with score_boklm and correlates against the
/// human scores. BoK-LM is a loss, so the expected sign against a
/// quality-positive human scale is negative.
CorrelationReport correlate_metric(const std::vector<HumanJudgment>& judgments,
                                   const model::ModelParams& params,
                                   const tokenizer::Vocab& vocab, double lambda,
                                   const corpus::LabelConfig& label_config = {},
                                   int max_context_tokens = 256);

}  // namespace boklm::evalmetrics
