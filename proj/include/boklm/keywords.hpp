#pragma once

#include <map>
#include <string>
#include <unordered_set>
#include <vector>

namespace boklm::keywords {

using StopwordSet = std::unordered_set<std::string>;

/// Bundled English stopword list (~570 entries), compiled into the binary
/// from data/stopwords_en.txt.
const StopwordSet& bundled_stopwords();

/// Parses a stopword file: one lowercase word per line, UTF-8,
/// '#'-prefixed comment lines ignored.
StopwordSet load_stopword_file(const std::string& path);

/// Statistical features of a single lowercased term across one utterance.
struct TermFeatures {
  std::string term;
  int tf = 0;         // total occurrences
  int tf_upper = 0;   // all-caps occurrences (>= 2 chars)
  int tf_proper = 0;  // capitalized, non-sentence-initial occurrences
  std::vector<int> positions;            // sentence index per occurrence
  std::map<std::string, int> left_context;   // co-occurring term -> count
  std::map<std::string, int> right_context;
  bool is_stopword = false;
};

/// Per-term score components; score is the composed S(t), lower = more
/// relevant.
struct TermScore {
  double tcase = 0.0;
  double tpos = 0.0;
  double tfnorm = 0.0;
  double trel = 0.0;
  double tsent = 0.0;
  double score = 0.0;
};

struct KeywordCandidate {
  std::string surface;             // original casing, terms joined by ' '
  std::vector<std::string> terms;  // lowercased term keys
  double score = 0.0;              // lower = more relevant
  int kf = 0;                      // candidate frequency in the text
  int first_pos = 0;               // word index of first occurrence
};

struct KeywordResult {
  std::vector<KeywordCandidate> ranked;  // ascending by score
  std::string source_text;
};

struct ExtractorConfig {
  int max_ngram = 3;
  int top_n = 10;
  double dedup_threshold = 0.8;
  int window = 1;
  const StopwordSet* stopwords = nullptr;  // null -> bundled list
};

/// One word occurrence in the analyzed text.
struct WordOccurrence {
  std::string raw;    // original casing
  std::string term;   // lowercased
  int sentence = 0;
  bool is_stopword = false;
};

/// Tokenized view of an utterance: word occurrences in order plus the
/// aggregated per-term features.
struct TextAnalysis {
  std::vector<WordOccurrence> words;
  std::map<std::string, TermFeatures> features;
  int num_sentences = 0;
};

TextAnalysis analyze_text(const std::string& text, int window,
                          const StopwordSet& stopwords);

std::map<std::string, TermFeatures> compute_term_features(
    const std::string& text, int window = 1,
    const StopwordSet* stopwords = nullptr);

std::map<std::string, TermScore> score_term_features(
    const std::map<std::string, TermFeatures>& features, int num_sentences);

/// S(t) per term; lower indicates higher relevance.
std::map<std::string, double> score_terms(
    const std::map<std::string, TermFeatures>& features, int num_sentences);

/// All contiguous n-gram candidates (1..max_ngram, within sentences, not
/// starting or ending with a stopword), scored but not deduplicated.
std::vector<KeywordCandidate> generate_candidates(const TextAnalysis& analysis,
                                                  int max_ngram);

/// Normalized edit-distance similarity on lowercased surfaces:
/// 1 - levenshtein(a, b) / max(|a|, |b|).
double surface_similarity(const std::string& a, const std::string& b);

/// Sorts candidates by (score, first occurrence, surface) and greedily
/// drops any candidate more similar than `threshold` to a kept one.
std::vector<KeywordCandidate> dedup_candidates(
    std::vector<KeywordCandidate> candidates, double threshold);

KeywordResult extract_keywords(const std::string& text,
                               const ExtractorConfig& config = {});

}  // namespace boklm::keywords
