// Independent arithmetic oracle for the keyword extractor: a direct,
// self-contained evaluation of the pinned term and candidate formulas.
// Shares no code with the library implementation.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace kworacle {

struct Word {
  std::string raw;
  std::string low;
  int sent = 0;
  bool sent_initial = false;
  bool stop = false;
};

struct ScoredCandidate {
  std::string surface;
  double score = 0.0;
};

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower((unsigned char)c));
  return s;
}

inline std::vector<Word> tokenize(const std::string& text,
                                  const std::set<std::string>& stops) {
  std::vector<Word> words;
  int sent = 0;
  bool has_word = false;
  size_t i = 0;
  while (i < text.size()) {
    unsigned char c = (unsigned char)text[i];
    if (std::isalnum(c) || c >= 0x80) {
      size_t j = i;
      while (j < text.size() &&
             (std::isalnum((unsigned char)text[j]) ||
              (unsigned char)text[j] >= 0x80))
        ++j;
      Word w;
      w.raw = text.substr(i, j - i);
      w.low = lower(w.raw);
      w.sent = sent;
      w.sent_initial = !has_word;
      w.stop = stops.count(w.low) > 0;
      has_word = true;
      words.push_back(w);
      i = j;
    } else {
      if ((c == '.' || c == '!' || c == '?') && has_word) {
        ++sent;
        has_word = false;
      }
      ++i;
    }
  }
  return words;
}

inline int num_sentences(const std::vector<Word>& words) {
  int m = -1;
  for (const auto& w : words) m = std::max(m, w.sent);
  return m + 1;
}

// S(t) for every term, straight from the definitions.
inline std::map<std::string, double> term_scores(const std::vector<Word>& words,
                                                 int window) {
  std::set<std::string> terms;
  for (const auto& w : words) terms.insert(w.low);
  const int nsent = num_sentences(words);

  // content tf statistics and max tf
  std::map<std::string, int> tf;
  for (const auto& w : words) tf[w.low] += 1;
  double max_tf = 0.0;
  double mean = 0.0, count = 0.0;
  for (const auto& [t, f] : tf) {
    max_tf = std::max(max_tf, (double)f);
    bool stop = false;
    for (const auto& w : words)
      if (w.low == t) {
        stop = w.stop;
        break;
      }
    if (!stop) {
      mean += f;
      count += 1.0;
    }
  }
  mean = count > 0 ? mean / count : 0.0;
  double var = 0.0;
  for (const auto& [t, f] : tf) {
    bool stop = false;
    for (const auto& w : words)
      if (w.low == t) {
        stop = w.stop;
        break;
      }
    if (!stop) var += (f - mean) * (f - mean);
  }
  double sd = count > 0 ? std::sqrt(var / count) : 0.0;
  double denom = mean + sd;
  if (denom == 0.0) denom = 1.0;

  std::map<std::string, double> out;
  for (const auto& t : terms) {
    int tf_t = 0, tf_u = 0, tf_p = 0;
    std::vector<int> positions;
    std::set<std::string> left_distinct, right_distinct;
    int left_total = 0, right_total = 0;
    std::set<int> sents;
    for (size_t i = 0; i < words.size(); ++i) {
      if (words[i].low != t) continue;
      ++tf_t;
      positions.push_back(words[i].sent);
      sents.insert(words[i].sent);
      const std::string& raw = words[i].raw;
      bool alpha = false, anylower = false;
      for (unsigned char c : raw) {
        if (std::isalpha(c)) {
          alpha = true;
          if (std::islower(c)) anylower = true;
        }
      }
      if (raw.size() >= 2 && alpha && !anylower) {
        ++tf_u;
      } else if (std::isupper((unsigned char)raw[0]) && !words[i].sent_initial) {
        ++tf_p;
      }
      for (int k = 1; k <= window; ++k) {
        if (i >= (size_t)k && words[i - k].sent == words[i].sent) {
          left_distinct.insert(words[i - k].low);
          ++left_total;
        }
        if (i + k < words.size() && words[i + k].sent == words[i].sent) {
          right_distinct.insert(words[i + k].low);
          ++right_total;
        }
      }
    }
    std::sort(positions.begin(), positions.end());
    const double median = positions[(positions.size() - 1) / 2];
    const double tcase = std::max(tf_u, tf_p) / (1.0 + std::log((double)tf_t));
    const double tpos = std::log(std::log(3.0 + median));
    const double tfnorm = tf_t / denom;
    const double dl =
        left_total > 0 ? (double)left_distinct.size() / left_total : 0.0;
    const double dr =
        right_total > 0 ? (double)right_distinct.size() / right_total : 0.0;
    const double trel = 1.0 + (dl + dr) * (tf_t / max_tf);
    const double tsent = (double)sents.size() / nsent;
    out[t] = (trel * tpos) / (tcase + tfnorm / trel + tsent / trel);
  }
  return out;
}

// Candidate surfaces and scores, no dedup/truncation.
inline std::vector<ScoredCandidate> candidate_scores(
    const std::vector<Word>& words, int window, int max_ngram) {
  const auto scores = term_scores(words, window);
  std::map<std::string, int> kf;
  std::map<std::string, std::string> surf;
  std::map<std::string, std::vector<std::string>> parts;
  for (size_t i = 0; i < words.size(); ++i) {
    if (words[i].stop) continue;
    for (int n = 1; n <= max_ngram; ++n) {
      if (i + n > words.size()) break;
      if (words[i + n - 1].sent != words[i].sent) break;
      if (words[i + n - 1].stop) continue;
      std::string key, s;
      std::vector<std::string> p;
      for (size_t j = i; j < i + n; ++j) {
        if (j > i) {
          key += ' ';
          s += ' ';
        }
        key += words[j].low;
        s += words[j].raw;
        p.push_back(words[j].low);
      }
      kf[key] += 1;
      if (!surf.count(key)) {
        surf[key] = s;
        parts[key] = p;
      }
    }
  }
  std::vector<ScoredCandidate> out;
  for (const auto& [key, f] : kf) {
    double prod = 1.0, sum = 0.0;
    for (const auto& t : parts[key]) {
      prod *= scores.at(t);
      sum += scores.at(t);
    }
    out.push_back({surf[key], prod / (f * (1.0 + sum))});
  }
  return out;
}

}  // namespace kworacle
