#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace boklm::tokenizer {

/// Fixed special token ids; always the first six vocabulary entries.
struct Specials {
  static constexpr int pad = 0;
  static constexpr int unk = 1;
  static constexpr int eos = 2;
  static constexpr int bos = 3;
  static constexpr int eou = 4;
  static constexpr int nok = 5;
  static constexpr int count = 6;
};

const std::vector<std::string>& special_markers();

/// Subword vocabulary: byte-level alphabet plus an ordered list of pair
/// merges. Tokens carry a leading-space marker "Ġ" on word-initial
/// subwords; encode/decode are pure once trained.
class Vocab {
 public:
  Vocab() = default;

  int size() const { return static_cast<int>(tokens_.size()); }
  int declared_vocab_size() const { return declared_vocab_size_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }

  const std::string& token_string(int id) const;
  int token_id(const std::string& token) const;  // -1 if absent

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  std::string to_json() const;
  static Vocab from_json(const std::string& json_text);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  friend Vocab train_tokenizer(const std::vector<std::string>& corpus_texts,
                               int vocab_size);

 private:
  void rebuild_index();

  int declared_vocab_size_ = 0;
  std::vector<std::string> tokens_;  // id -> token string
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> token_to_id_;
  std::unordered_map<std::string, int> merge_rank_;
};

/// Greedy highest-frequency pair merging over whitespace-pre-split words.
/// Deterministic: frequency ties break on the lexicographically smaller
/// pair. Trains until `vocab_size` tokens exist or no pairs remain.
Vocab train_tokenizer(const std::vector<std::string>& corpus_texts,
                      int vocab_size);

/// Byte-level symbol mapping (printable stand-ins for all 256 bytes;
/// space becomes "Ġ"). Exposed for tests.
std::string byte_to_symbol(unsigned char b);
std::string symbols_to_bytes(const std::string& symbol_text);

}  // namespace boklm::tokenizer
