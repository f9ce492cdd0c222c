#include "boklm/corpus.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "boklm/io.hpp"
#include "json.hpp"

namespace boklm::corpus {

namespace {

using tokenizer::Specials;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("corpus: " + msg);
}

}  // namespace

LoadResult load_jsonl(const std::string& path) {
  const std::string text = io::read_file(path);
  LoadResult result;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail("line " + std::to_string(line_no) + ": parse error: " + e.what());
    }
    auto reject = [&](const std::string& why) {
      result.rejected += 1;
      result.warnings.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("turns") || !j["turns"].is_array()) {
      reject("expected {\"id\": str, \"condition\": [str]|null, \"turns\": [str]}");
      continue;
    }
    Dialogue d;
    d.id = j["id"].get<std::string>();
    bool bad = false;
    for (const auto& t : j["turns"]) {
      if (!t.is_string()) {
        bad = true;
        break;
      }
      d.turns.push_back(t.get<std::string>());
    }
    if (bad) {
      reject("turns must be strings");
      continue;
    }
    if (d.turns.size() < 2) {
      reject("dialogue needs at least 2 turns");
      continue;
    }
    if (j.contains("condition") && !j["condition"].is_null()) {
      if (!j["condition"].is_array()) {
        reject("condition must be an array of strings or null");
        continue;
      }
      for (const auto& c : j["condition"]) {
        if (!c.is_string()) {
          bad = true;
          break;
        }
        d.condition.push_back(c.get<std::string>());
      }
      if (bad) {
        reject("condition must be an array of strings or null");
        continue;
      }
    }
    result.dialogues.push_back(std::move(d));
  }
  return result;
}

keywords::ExtractorConfig default_label_extractor() {
  // Unigram keywords for label preparation: the keyword string is the
  // ranked content words joined by spaces.
  keywords::ExtractorConfig config;
  config.max_ngram = 1;
  return config;
}

std::vector<int> prepare_bok_label(const std::string& response,
                                   const LabelConfig& config,
                                   const tokenizer::Vocab& vocab) {
  if (config.k_max < 1) fail("k_max must be >= 1");
  const auto result = keywords::extract_keywords(response, config.extractor);
  if (result.ranked.empty()) return {Specials::nok};

  std::string keyword_string;
  for (const auto& c : result.ranked) {
    if (!keyword_string.empty()) keyword_string += ' ';
    keyword_string += c.surface;
  }
  std::vector<int> ids = vocab.encode(keyword_string);
  if (config.dedup_labels) {
    std::vector<int> unique;
    for (int id : ids) {
      if (std::find(unique.begin(), unique.end(), id) == unique.end()) {
        unique.push_back(id);
      }
    }
    ids = std::move(unique);
  }
  if (ids.size() > static_cast<size_t>(config.k_max)) {
    ids.resize(config.k_max);
  }
  if (ids.empty()) return {Specials::nok};
  return ids;
}

std::vector<int> build_context(const std::vector<std::string>& condition,
                               const std::vector<std::string>& turns,
                               const tokenizer::Vocab& vocab,
                               int max_context_tokens) {
  if (max_context_tokens < 16) fail("max_context_tokens must be >= 16");

  std::vector<int> condition_ids;
  if (!condition.empty()) {
    std::string joined;
    for (const auto& line : condition) {
      if (!joined.empty()) joined += ' ';
      joined += line;
    }
    condition_ids = vocab.encode(joined);
    condition_ids.push_back(Specials::eou);
    if (condition_ids.size() > static_cast<size_t>(max_context_tokens)) {
      fail("condition too long (" + std::to_string(condition_ids.size()) +
           " tokens > " + std::to_string(max_context_tokens) + ")");
    }
  }

  std::vector<std::vector<int>> turn_ids;
  size_t total = condition_ids.size();
  for (const auto& u : turns) {
    std::vector<int> ids = vocab.encode(u);
    ids.push_back(Specials::eos);
    total += ids.size();
    turn_ids.push_back(std::move(ids));
  }
  size_t start = 0;  // drop oldest whole utterances first
  while (start < turn_ids.size() &&
         total > static_cast<size_t>(max_context_tokens)) {
    total -= turn_ids[start].size();
    ++start;
  }

  std::vector<int> context = condition_ids;
  for (size_t u = start; u < turn_ids.size(); ++u) {
    context.insert(context.end(), turn_ids[u].begin(), turn_ids[u].end());
  }
  return context;
}

std::vector<TrainingExample> build_examples(const Dialogue& dialogue,
                                            const tokenizer::Vocab& vocab,
                                            const LabelConfig& label_config,
                                            int max_context_tokens) {
  if (dialogue.turns.size() < 2) fail("dialogue needs at least 2 turns");

  std::vector<TrainingExample> examples;
  for (size_t t = 1; t < dialogue.turns.size(); ++t) {
    TrainingExample ex;
    ex.context_ids = build_context(
        dialogue.condition,
        std::vector<std::string>(dialogue.turns.begin(),
                                 dialogue.turns.begin() + t),
        vocab, max_context_tokens);
    ex.response_ids = vocab.encode(dialogue.turns[t]);
    ex.response_ids.push_back(Specials::eos);
    ex.bok_label_ids =
        prepare_bok_label(dialogue.turns[t], label_config, vocab);
    ex.turn_index = static_cast<int>(t) + 1;
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<TrainingExample> build_all_examples(
    const std::vector<Dialogue>& dialogues, const tokenizer::Vocab& vocab,
    const LabelConfig& label_config, int max_context_tokens) {
  std::vector<TrainingExample> all;
  for (const auto& d : dialogues) {
    auto examples = build_examples(d, vocab, label_config, max_context_tokens);
    all.insert(all.end(), std::make_move_iterator(examples.begin()),
               std::make_move_iterator(examples.end()));
  }
  return all;
}

CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues) {
  if (dialogues.empty()) fail("empty dialogue list");
  CorpusStats s;
  s.num_dialogues = static_cast<int>(dialogues.size());
  s.t_min = static_cast<int>(dialogues.front().turns.size());
  for (const auto& d : dialogues) {
    const int turns = static_cast<int>(d.turns.size());
    s.num_turns += turns;
    s.t_max = std::max(s.t_max, turns);
    s.t_min = std::min(s.t_min, turns);
  }
  s.t_avg = static_cast<double>(s.num_turns) / s.num_dialogues;
  return s;
}

std::string examples_to_jsonl(const std::vector<TrainingExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["context_ids"] = ex.context_ids;
    j["response_ids"] = ex.response_ids;
    j["bok_label_ids"] = ex.bok_label_ids;
    j["turn_index"] = ex.turn_index;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<TrainingExample> examples_from_jsonl(const std::string& text) {
  std::vector<TrainingExample> examples;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail("cache line " + std::to_string(line_no) + ": parse error: " +
           e.what());
    }
    TrainingExample ex;
    try {
      ex.context_ids = j.at("context_ids").get<std::vector<int>>();
      ex.response_ids = j.at("response_ids").get<std::vector<int>>();
      ex.bok_label_ids = j.at("bok_label_ids").get<std::vector<int>>();
      ex.turn_index = j.at("turn_index").get<int>();
    } catch (const std::exception& e) {
      fail("cache line " + std::to_string(line_no) + ": " + e.what());
    }
    if (ex.response_ids.empty() || ex.bok_label_ids.empty()) {
      fail("cache line " + std::to_string(line_no) + ": empty fields");
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

void save_examples(const std::string& path,
                   const std::vector<TrainingExample>& examples) {
  io::write_file(path, examples_to_jsonl(examples));
}

std::vector<TrainingExample> load_examples(const std::string& path) {
  return examples_from_jsonl(io::read_file(path));
}

}  // namespace boklm::corpus
