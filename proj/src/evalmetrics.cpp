#include "boklm/evalmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "boklm/io.hpp"
#include "json.hpp"

namespace boklm::evalmetrics {

namespace {

using tokenizer::Specials;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("evalmetrics: " + msg);
}

using Gram = std::vector<std::string>;

std::map<Gram, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<Gram, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[Gram(tokens.begin() + i, tokens.begin() + i + n)] += 1;
  }
  return counts;
}

double two_sided_t_pvalue(double r, int n) {
  if (n <= 2) return 1.0;
  const double denom = 1.0 - r * r;
  if (denom <= 0.0) return 0.0;  // |r| == 1
  const double t = std::fabs(r) * std::sqrt((n - 2) / denom);
  boost::math::students_t dist(n - 2);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const size_t n = xs.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::string padded;
  for (unsigned char c : text) {
    if (std::ispunct(c)) {
      padded += ' ';
      padded += static_cast<char>(c);
      padded += ' ';
    } else {
      padded += static_cast<char>(std::tolower(c));
    }
  }
  std::vector<std::string> tokens;
  std::istringstream in(padded);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

double bleu_n(const std::vector<EvalInstance>& instances, int n) {
  if (instances.empty()) fail("bleu: empty instance list");
  if (n < 1 || n > 4) fail("bleu: order must be 1..4");
  for (const auto& inst : instances) {
    if (inst.references.empty()) fail("bleu: instance without references");
  }

  std::vector<long long> matched(n, 0), total(n, 0);
  long long hyp_len = 0, ref_len = 0;
  for (const auto& inst : instances) {
    const auto hyp = metric_tokenize(inst.hypothesis);
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : inst.references) refs.push_back(metric_tokenize(r));

    hyp_len += static_cast<long long>(hyp.size());
    // closest reference length, ties to the shorter one
    long long closest = static_cast<long long>(refs[0].size());
    for (const auto& r : refs) {
      const long long len = static_cast<long long>(r.size());
      const long long d_new = std::llabs(len - (long long)hyp.size());
      const long long d_old = std::llabs(closest - (long long)hyp.size());
      if (d_new < d_old || (d_new == d_old && len < closest)) closest = len;
    }
    ref_len += closest;

    for (int k = 1; k <= n; ++k) {
      const auto hyp_grams = ngram_counts(hyp, k);
      std::map<Gram, int> clip;
      for (const auto& r : refs) {
        for (const auto& [gram, count] : ngram_counts(r, k)) {
          clip[gram] = std::max(clip[gram], count);
        }
      }
      for (const auto& [gram, count] : hyp_grams) {
        auto it = clip.find(gram);
        matched[k - 1] += std::min(count, it == clip.end() ? 0 : it->second);
        total[k - 1] += count;
      }
    }
  }

  double log_precisions = 0.0;
  for (int k = 0; k < n; ++k) {
    if (total[k] == 0 || matched[k] == 0) return 0.0;
    log_precisions +=
        std::log(static_cast<double>(matched[k]) / total[k]) / n;
  }
  const double bp = hyp_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) / hyp_len)
                        : 1.0;
  return bp * std::exp(log_precisions);
}

double nist_n(const std::vector<EvalInstance>& instances, int n) {
  if (instances.empty()) fail("nist: empty instance list");
  if (n < 1 || n > 4) fail("nist: order must be 1..4");
  for (const auto& inst : instances) {
    if (inst.references.empty()) fail("nist: instance without references");
  }

  // pooled reference n-gram counts drive the information weights
  std::vector<std::map<Gram, long long>> ref_counts(n + 1);
  long long ref_tokens = 0;
  for (const auto& inst : instances) {
    for (const auto& r : inst.references) {
      const auto tokens = metric_tokenize(r);
      ref_tokens += static_cast<long long>(tokens.size());
      for (int k = 1; k <= n; ++k) {
        for (const auto& [gram, count] : ngram_counts(tokens, k)) {
          ref_counts[k][gram] += count;
        }
      }
    }
  }
  auto info = [&](const Gram& gram) {
    const int k = static_cast<int>(gram.size());
    const long long denom = ref_counts[k].at(gram);
    long long numer = ref_tokens;
    if (k > 1) {
      numer = ref_counts[k - 1].at(Gram(gram.begin(), gram.end() - 1));
    }
    return std::log2(static_cast<double>(numer) / denom);
  };

  std::vector<double> weighted(n, 0.0);
  std::vector<long long> total(n, 0);
  double hyp_len = 0.0, mean_ref_len = 0.0;
  for (const auto& inst : instances) {
    const auto hyp = metric_tokenize(inst.hypothesis);
    hyp_len += static_cast<double>(hyp.size());
    double ref_sum = 0.0;
    for (const auto& r : inst.references) {
      ref_sum += static_cast<double>(metric_tokenize(r).size());
    }
    mean_ref_len += ref_sum / inst.references.size();

    for (int k = 1; k <= n; ++k) {
      const auto hyp_grams = ngram_counts(hyp, k);
      std::map<Gram, int> clip;
      for (const auto& r : inst.references) {
        for (const auto& [gram, count] : ngram_counts(metric_tokenize(r), k)) {
          clip[gram] = std::max(clip[gram], count);
        }
      }
      for (const auto& [gram, count] : hyp_grams) {
        total[k - 1] += count;
        auto it = clip.find(gram);
        if (it != clip.end()) {
          weighted[k - 1] += info(gram) * std::min(count, it->second);
        }
      }
    }
  }

  double score = 0.0;
  int live_orders = 0;
  for (int k = 0; k < n; ++k) {
    if (total[k] > 0) {
      score += weighted[k] / total[k];
      ++live_orders;
    }
  }
  if (live_orders == 0) return 0.0;
  score /= n;  // co-occurrence sums averaged over orders 1..n

  const double beta = std::log(0.5) / std::pow(std::log(2.0 / 3.0), 2);
  const double ratio = mean_ref_len > 0.0 ? hyp_len / mean_ref_len : 1.0;
  const double brevity =
      std::exp(beta * std::pow(std::log(std::min(ratio, 1.0)), 2));
  return score * brevity;
}

double distinct_n(const std::vector<std::string>& hypotheses, int n) {
  if (n < 1) fail("distinct: order must be >= 1");
  std::map<Gram, long long> pooled;
  long long total = 0;
  for (const auto& h : hypotheses) {
    for (const auto& [gram, count] : ngram_counts(metric_tokenize(h), n)) {
      pooled[gram] += count;
      total += count;
    }
  }
  if (total == 0) fail("distinct: no n-grams of order " + std::to_string(n));
  return static_cast<double>(pooled.size()) / total;
}

EntropyReport entropy_n(const std::vector<std::string>& hypotheses) {
  EntropyReport report;
  double sum = 0.0;
  for (int k = 1; k <= 4; ++k) {
    std::map<Gram, long long> pooled;
    long long total = 0;
    for (const auto& h : hypotheses) {
      for (const auto& [gram, count] : ngram_counts(metric_tokenize(h), k)) {
        pooled[gram] += count;
        total += count;
      }
    }
    double entropy = 0.0;
    if (total == 0) {
      report.empty_order[k - 1] = true;
    } else {
      for (const auto& [gram, count] : pooled) {
        const double p = static_cast<double>(count) / total;
        entropy -= p * std::log(p);
      }
    }
    report.h[k - 1] = entropy;
    sum += entropy;
  }
  report.mean = sum / 4.0;
  return report;
}

double score_boklm(const model::ModelParams& params,
                   const tokenizer::Vocab& vocab,
                   const std::vector<std::string>& context,
                   const std::vector<std::string>& condition,
                   const std::string& response, double lambda,
                   const corpus::LabelConfig& label_config,
                   int max_context_tokens) {
  if (lambda < 0.0) fail("negative lambda");
  if (response.empty()) fail("score_boklm: empty response");

  std::vector<int> response_ids = vocab.encode(response);
  response_ids.push_back(Specials::eos);

  // keep the whole example inside the position budget
  const int budget =
      std::min(max_context_tokens,
               params.config().max_positions - 1 -
                   static_cast<int>(response_ids.size()));
  const std::vector<int> context_ids =
      corpus::build_context(condition, context, vocab, budget);

  corpus::TrainingExample ex;
  ex.context_ids = context_ids;
  ex.response_ids = response_ids;
  ex.bok_label_ids = corpus::prepare_bok_label(response, label_config, vocab);

  model::ForwardOutput fwd = model::forward(params, ex);
  double nll = 0.0;
  int tokens = 0;
  const int v = fwd.lm_logits.cols();
  for (size_t i = 0; i < ex.response_ids.size(); ++i) {
    double max_v = fwd.lm_logits.at(static_cast<int>(i), 0);
    for (int c = 1; c < v; ++c) {
      max_v = std::max(max_v, fwd.lm_logits.at(static_cast<int>(i), c));
    }
    double denom = 0.0;
    for (int c = 0; c < v; ++c) {
      denom += std::exp(fwd.lm_logits.at(static_cast<int>(i), c) - max_v);
    }
    nll -= fwd.lm_logits.at(static_cast<int>(i), ex.response_ids[i]) - max_v -
           std::log(denom);
    ++tokens;
  }
  double bok = 0.0;
  for (int id : ex.bok_label_ids) bok -= std::log(fwd.bok_probs.at(0, id));
  return nll / tokens + lambda * bok;
}

Correlation pearson(const std::vector<double>& xs,
                    const std::vector<double>& ys) {
  if (xs.size() != ys.size()) fail("pearson: length mismatch");
  const int n = static_cast<int>(xs.size());
  if (n < 3) fail("pearson: need at least 3 points");
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail("pearson: degenerate input");
  Correlation c;
  c.n = n;
  c.r = sxy / std::sqrt(sxx * syy);
  c.r = std::clamp(c.r, -1.0, 1.0);
  c.p_value = two_sided_t_pvalue(c.r, n);
  return c;
}

Correlation spearman(const std::vector<double>& xs,
                     const std::vector<double>& ys) {
  if (xs.size() != ys.size()) fail("spearman: length mismatch");
  if (xs.size() < 3) fail("spearman: need at least 3 points");
  Correlation c = pearson(average_ranks(xs), average_ranks(ys));
  return c;
}

std::vector<EvalInstance> load_instances(const std::string& path) {
  std::vector<EvalInstance> out;
  std::istringstream in(io::read_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      EvalInstance inst;
      if (j.contains("context") && !j["context"].is_null()) {
        inst.context = j["context"].get<std::vector<std::string>>();
      }
      if (j.contains("condition") && !j["condition"].is_null()) {
        inst.condition = j["condition"].get<std::vector<std::string>>();
      }
      inst.hypothesis = j.at("hypothesis").get<std::string>();
      inst.references = j.at("references").get<std::vector<std::string>>();
      out.push_back(std::move(inst));
    } catch (const std::exception& e) {
      fail("instances line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<HumanJudgment> load_judgments(const std::string& path) {
  std::vector<HumanJudgment> out;
  std::istringstream in(io::read_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      HumanJudgment h;
      if (j.contains("context") && !j["context"].is_null()) {
        h.context = j["context"].get<std::vector<std::string>>();
      }
      if (j.contains("condition") && !j["condition"].is_null()) {
        h.condition = j["condition"].get<std::vector<std::string>>();
      }
      h.response = j.at("response").get<std::string>();
      h.human_score = j.at("human_score").get<double>();
      out.push_back(std::move(h));
    } catch (const std::exception& e) {
      fail("judgments line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

CorrelationReport correlate_metric(const std::vector<HumanJudgment>& judgments,
                                   const model::ModelParams& params,
                                   const tokenizer::Vocab& vocab, double lambda,
                                   const corpus::LabelConfig& label_config,
                                   int max_context_tokens) {
  if (judgments.size() < 3) fail("correlate: need at least 3 judgments");
  std::vector<double> scores, human;
  for (const auto& j : judgments) {
    scores.push_back(score_boklm(params, vocab, j.context, j.condition,
                                 j.response, lambda, label_config,
                                 max_context_tokens));
    human.push_back(j.human_score);
  }
  CorrelationReport report;
  report.pearson = pearson(scores, human);
  report.spearman = spearman(scores, human);
  report.n = static_cast<int>(judgments.size());
  return report;
}

}  // namespace boklm::evalmetrics
