#include "boklm/keywords.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace boklm::keywords {

namespace detail {
extern const char* kBundledStopwords;  // generated from data/stopwords_en.txt
}

namespace {

StopwordSet parse_stopwords(std::istream& in) {
  StopwordSet set;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n' ||
                             line.back() == ' ')) {
      line.pop_back();
    }
    if (line.empty() || line[0] == '#') continue;
    set.insert(line);
  }
  return set;
}

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

bool is_sentence_end(unsigned char c) {
  return c == '.' || c == '!' || c == '?';
}

std::string to_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

bool is_all_caps(const std::string& w) {
  if (w.size() < 2) return false;
  bool has_alpha = false;
  for (unsigned char c : w) {
    if (std::isalpha(c)) {
      has_alpha = true;
      if (std::islower(c)) return false;
    }
  }
  return has_alpha;
}

bool is_capitalized(const std::string& w) {
  return !w.empty() && std::isupper(static_cast<unsigned char>(w[0])) != 0;
}

// Lower median: for even counts the smaller of the two middle values.
int lower_median(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

int levenshtein(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

bool candidate_order(const KeywordCandidate& a, const KeywordCandidate& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.first_pos != b.first_pos) return a.first_pos < b.first_pos;
  return to_lower(a.surface) < to_lower(b.surface);
}

}  // namespace

const StopwordSet& bundled_stopwords() {
  static const StopwordSet set = [] {
    std::istringstream in(detail::kBundledStopwords);
    return parse_stopwords(in);
  }();
  return set;
}

StopwordSet load_stopword_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("keywords: cannot open stopword file " + path);
  return parse_stopwords(in);
}

TextAnalysis analyze_text(const std::string& text, int window,
                          const StopwordSet& stopwords) {
  if (window < 1) throw std::runtime_error("keywords: window must be >= 1");
  TextAnalysis out;

  // Tokenize: words are maximal runs of alphanumeric/non-ASCII bytes;
  // '.', '!', '?' end a sentence.
  int sentence = 0;
  bool sentence_has_words = false;
  std::vector<bool> sentence_initial;
  size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (is_word_byte(c)) {
      size_t j = i;
      while (j < text.size() &&
             is_word_byte(static_cast<unsigned char>(text[j]))) {
        ++j;
      }
      WordOccurrence occ;
      occ.raw = text.substr(i, j - i);
      occ.term = to_lower(occ.raw);
      occ.sentence = sentence;
      occ.is_stopword = stopwords.count(occ.term) > 0;
      sentence_initial.push_back(!sentence_has_words);
      sentence_has_words = true;
      out.words.push_back(std::move(occ));
      i = j;
    } else {
      if (is_sentence_end(c) && sentence_has_words) {
        ++sentence;
        sentence_has_words = false;
      }
      ++i;
    }
  }
  out.num_sentences = sentence + (sentence_has_words ? 1 : 0);

  for (size_t w = 0; w < out.words.size(); ++w) {
    const WordOccurrence& occ = out.words[w];
    TermFeatures& f = out.features[occ.term];
    if (f.tf == 0) {
      f.term = occ.term;
      f.is_stopword = occ.is_stopword;
    }
    f.tf += 1;
    if (is_all_caps(occ.raw)) {
      f.tf_upper += 1;
    } else if (is_capitalized(occ.raw) && !sentence_initial[w]) {
      f.tf_proper += 1;
    }
    f.positions.push_back(occ.sentence);
    for (int k = 1; k <= window; ++k) {
      if (w >= static_cast<size_t>(k) &&
          out.words[w - k].sentence == occ.sentence) {
        f.left_context[out.words[w - k].term] += 1;
      }
      if (w + k < out.words.size() &&
          out.words[w + k].sentence == occ.sentence) {
        f.right_context[out.words[w + k].term] += 1;
      }
    }
  }
  return out;
}

std::map<std::string, TermFeatures> compute_term_features(
    const std::string& text, int window, const StopwordSet* stopwords) {
  const StopwordSet& sw = stopwords ? *stopwords : bundled_stopwords();
  return analyze_text(text, window, sw).features;
}

std::map<std::string, TermScore> score_term_features(
    const std::map<std::string, TermFeatures>& features, int num_sentences) {
  // Statistics over content (non-stopword) terms.
  double sum_tf = 0.0, max_tf = 0.0;
  int n_content = 0;
  for (const auto& [term, f] : features) {
    max_tf = std::max(max_tf, static_cast<double>(f.tf));
    if (!f.is_stopword) {
      sum_tf += f.tf;
      ++n_content;
    }
  }
  const double mean_tf = n_content > 0 ? sum_tf / n_content : 0.0;
  double var = 0.0;
  for (const auto& [term, f] : features) {
    if (!f.is_stopword) var += (f.tf - mean_tf) * (f.tf - mean_tf);
  }
  const double stddev_tf = n_content > 0 ? std::sqrt(var / n_content) : 0.0;
  double tf_denom = mean_tf + stddev_tf;
  if (tf_denom == 0.0) tf_denom = 1.0;

  std::map<std::string, TermScore> out;
  for (const auto& [term, f] : features) {
    if (f.tf == 0) continue;
    TermScore s;
    s.tcase = std::max(f.tf_upper, f.tf_proper) / (1.0 + std::log(f.tf));
    s.tpos = std::log(std::log(3.0 + lower_median(f.positions)));
    s.tfnorm = f.tf / tf_denom;

    auto context_ratio = [](const std::map<std::string, int>& ctx) {
      int total = 0;
      for (const auto& [t, c] : ctx) total += c;
      return total > 0 ? static_cast<double>(ctx.size()) / total : 0.0;
    };
    const double dl = context_ratio(f.left_context);
    const double dr = context_ratio(f.right_context);
    s.trel = 1.0 + (dl + dr) * (f.tf / max_tf);

    int sentences_with = 0;
    int last = -1;
    std::vector<int> pos = f.positions;
    std::sort(pos.begin(), pos.end());
    for (int p : pos) {
      if (p != last) {
        ++sentences_with;
        last = p;
      }
    }
    s.tsent = num_sentences > 0
                  ? static_cast<double>(sentences_with) / num_sentences
                  : 0.0;

    s.score = (s.trel * s.tpos) /
              (s.tcase + s.tfnorm / s.trel + s.tsent / s.trel);
    out[term] = s;
  }
  return out;
}

std::map<std::string, double> score_terms(
    const std::map<std::string, TermFeatures>& features, int num_sentences) {
  std::map<std::string, double> out;
  for (const auto& [term, s] : score_term_features(features, num_sentences)) {
    out[term] = s.score;
  }
  return out;
}

std::vector<KeywordCandidate> generate_candidates(const TextAnalysis& analysis,
                                                  int max_ngram) {
  if (max_ngram < 1) throw std::runtime_error("keywords: max_ngram must be >= 1");
  const auto scores = score_terms(analysis.features, analysis.num_sentences);

  struct Agg {
    std::string surface;
    std::vector<std::string> terms;
    int kf = 0;
    int first_pos = 0;
  };
  std::map<std::string, Agg> by_key;

  const auto& words = analysis.words;
  for (size_t start = 0; start < words.size(); ++start) {
    if (words[start].is_stopword) continue;
    for (int n = 1; n <= max_ngram; ++n) {
      const size_t end = start + n;  // exclusive
      if (end > words.size()) break;
      if (words[end - 1].sentence != words[start].sentence) break;
      if (words[end - 1].is_stopword) continue;

      std::string key, surface;
      std::vector<std::string> terms;
      for (size_t w = start; w < end; ++w) {
        if (w > start) {
          key += ' ';
          surface += ' ';
        }
        key += words[w].term;
        surface += words[w].raw;
        terms.push_back(words[w].term);
      }
      auto [it, inserted] = by_key.try_emplace(key);
      if (inserted) {
        it->second.surface = surface;
        it->second.terms = std::move(terms);
        it->second.first_pos = static_cast<int>(start);
      }
      it->second.kf += 1;
    }
  }

  std::vector<KeywordCandidate> out;
  out.reserve(by_key.size());
  for (auto& [key, agg] : by_key) {
    KeywordCandidate c;
    c.surface = agg.surface;
    c.terms = std::move(agg.terms);
    c.kf = agg.kf;
    c.first_pos = agg.first_pos;
    double prod = 1.0, sum = 0.0;
    for (const std::string& t : c.terms) {
      const double s = scores.at(t);
      prod *= s;
      sum += s;
    }
    c.score = prod / (c.kf * (1.0 + sum));
    out.push_back(std::move(c));
  }
  return out;
}

double surface_similarity(const std::string& a, const std::string& b) {
  const std::string la = to_lower(a), lb = to_lower(b);
  const size_t longest = std::max(la.size(), lb.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(la, lb)) / longest;
}

std::vector<KeywordCandidate> dedup_candidates(
    std::vector<KeywordCandidate> candidates, double threshold) {
  std::sort(candidates.begin(), candidates.end(), candidate_order);
  std::vector<KeywordCandidate> kept;
  for (auto& c : candidates) {
    bool duplicate = false;
    for (const auto& k : kept) {
      if (surface_similarity(c.surface, k.surface) > threshold) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(std::move(c));
  }
  return kept;
}

KeywordResult extract_keywords(const std::string& text,
                               const ExtractorConfig& config) {
  const StopwordSet& sw =
      config.stopwords ? *config.stopwords : bundled_stopwords();
  const TextAnalysis analysis = analyze_text(text, config.window, sw);

  KeywordResult result;
  result.source_text = text;
  result.ranked =
      dedup_candidates(generate_candidates(analysis, config.max_ngram),
                       config.dedup_threshold);
  if (result.ranked.size() > static_cast<size_t>(config.top_n)) {
    result.ranked.resize(config.top_n);
  }
  return result;
}

}  // namespace boklm::keywords
