// Brute-force reference implementations of the referenced metrics,
// evaluated directly from their definitions in 64-bit arithmetic.
// Independent of the evalmetrics module.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace metricoracle {

struct Instance {
  std::string hypothesis;
  std::vector<std::string> references;
};

inline std::vector<std::string> tokenize(const std::string& text) {
  std::string padded;
  for (unsigned char c : text) {
    if (std::ispunct(c)) {
      padded += ' ';
      padded += (char)c;
      padded += ' ';
    } else {
      padded += (char)std::tolower(c);
    }
  }
  std::istringstream in(padded);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

inline std::string join_gram(const std::vector<std::string>& toks, size_t i,
                             int k) {
  std::string g;
  for (int j = 0; j < k; ++j) {
    if (j) g += '\x1f';
    g += toks[i + j];
  }
  return g;
}

inline std::map<std::string, long long> grams(
    const std::vector<std::string>& toks, int k) {
  std::map<std::string, long long> out;
  for (size_t i = 0; i + k <= toks.size(); ++i) out[join_gram(toks, i, k)] += 1;
  return out;
}

inline double bleu(const std::vector<Instance>& instances, int n) {
  std::vector<double> matched(n, 0), total(n, 0);
  double c = 0, r = 0;
  for (const auto& inst : instances) {
    auto hyp = tokenize(inst.hypothesis);
    c += hyp.size();
    long long best_len = -1;
    for (const auto& ref : inst.references) {
      const long long len = (long long)tokenize(ref).size();
      if (best_len < 0 ||
          std::llabs(len - (long long)hyp.size()) <
              std::llabs(best_len - (long long)hyp.size()) ||
          (std::llabs(len - (long long)hyp.size()) ==
               std::llabs(best_len - (long long)hyp.size()) &&
           len < best_len)) {
        best_len = len;
      }
    }
    r += best_len;
    for (int k = 1; k <= n; ++k) {
      auto hg = grams(hyp, k);
      std::map<std::string, long long> clip;
      for (const auto& ref : inst.references) {
        for (const auto& [g, cnt] : grams(tokenize(ref), k)) {
          clip[g] = std::max(clip[g], cnt);
        }
      }
      for (const auto& [g, cnt] : hg) {
        total[k - 1] += cnt;
        auto it = clip.find(g);
        if (it != clip.end()) matched[k - 1] += std::min(cnt, it->second);
      }
    }
  }
  double logsum = 0;
  for (int k = 0; k < n; ++k) {
    if (matched[k] == 0 || total[k] == 0) return 0.0;
    logsum += std::log(matched[k] / total[k]) / n;
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(logsum);
}

inline double nist(const std::vector<Instance>& instances, int n) {
  std::vector<std::map<std::string, long long>> ref_counts(n + 1);
  long long ref_tokens = 0;
  for (const auto& inst : instances) {
    for (const auto& ref : inst.references) {
      auto toks = tokenize(ref);
      ref_tokens += (long long)toks.size();
      for (int k = 1; k <= n; ++k) {
        for (const auto& [g, cnt] : grams(toks, k)) ref_counts[k][g] += cnt;
      }
    }
  }

  std::vector<double> weighted(n, 0), total(n, 0);
  double hyp_len = 0, mean_ref_len = 0;
  for (const auto& inst : instances) {
    auto hyp = tokenize(inst.hypothesis);
    hyp_len += hyp.size();
    double rl = 0;
    for (const auto& ref : inst.references) rl += tokenize(ref).size();
    mean_ref_len += rl / inst.references.size();

    for (int k = 1; k <= n; ++k) {
      std::map<std::string, long long> clip;
      for (const auto& ref : inst.references) {
        for (const auto& [g, cnt] : grams(tokenize(ref), k)) {
          clip[g] = std::max(clip[g], cnt);
        }
      }
      for (const auto& [g, cnt] : grams(hyp, k)) {
        total[k - 1] += cnt;
        auto it = clip.find(g);
        if (it == clip.end()) continue;
        // info = log2(count(prefix) / count(gram)) over pooled references
        long long numer = ref_tokens;
        if (k > 1) {
          const size_t cut = g.rfind('\x1f');
          numer = ref_counts[k - 1].at(g.substr(0, cut));
        }
        const double info =
            std::log2((double)numer / (double)ref_counts[k].at(g));
        weighted[k - 1] += info * std::min(cnt, it->second);
      }
    }
  }
  double score = 0;
  bool any = false;
  for (int k = 0; k < n; ++k) {
    if (total[k] > 0) {
      score += weighted[k] / total[k];
      any = true;
    }
  }
  if (!any) return 0.0;
  score /= n;
  const double beta = std::log(0.5) / std::pow(std::log(2.0 / 3.0), 2);
  const double ratio = hyp_len / mean_ref_len;
  return score * std::exp(beta * std::pow(std::log(std::min(ratio, 1.0)), 2));
}

inline double distinct(const std::vector<std::string>& hyps, int n) {
  std::map<std::string, long long> pooled;
  double total = 0;
  for (const auto& h : hyps) {
    for (const auto& [g, cnt] : grams(tokenize(h), n)) {
      pooled[g] += cnt;
      total += cnt;
    }
  }
  return pooled.size() / total;
}

inline double entropy(const std::vector<std::string>& hyps, int n) {
  std::map<std::string, long long> pooled;
  double total = 0;
  for (const auto& h : hyps) {
    for (const auto& [g, cnt] : grams(tokenize(h), n)) {
      pooled[g] += cnt;
      total += cnt;
    }
  }
  if (total == 0) return 0.0;
  double e = 0;
  for (const auto& [g, cnt] : pooled) {
    const double p = cnt / total;
    e -= p * std::log(p);
  }
  return e;
}

}  // namespace metricoracle
