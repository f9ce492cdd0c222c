#include "boklm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <map>
#include <stdexcept>

#include "boklm/io.hpp"
#include "json.hpp"

namespace boklm::tokenizer {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("tokenizer: " + msg);
}

// Byte <-> codepoint table: printable bytes map to themselves, the rest
// (controls, space, DEL, 0x80-0xA0, 0xAD) are remapped above U+0100 so
// every token string is valid UTF-8. Space lands on U+0120 "Ġ".
struct ByteTable {
  std::array<int, 256> byte_to_cp{};
  std::map<int, unsigned char> cp_to_byte;

  ByteTable() {
    auto direct = [](int b) {
      return (b >= 33 && b <= 126) || (b >= 161 && b <= 172) ||
             (b >= 174 && b <= 255);
    };
    int next = 256;
    for (int b = 0; b < 256; ++b) {
      const int cp = direct(b) ? b : next++;
      byte_to_cp[b] = cp;
      cp_to_byte[cp] = static_cast<unsigned char>(b);
    }
  }
};

const ByteTable& byte_table() {
  static const ByteTable table;
  return table;
}

std::string utf8_encode(int cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    fail("codepoint out of range");
  }
  return out;
}

// Decodes the next codepoint starting at `i`; advances `i`.
int utf8_next(const std::string& s, size_t& i) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    ++i;
    return c;
  }
  if ((c & 0xE0) == 0xC0 && i + 1 < s.size()) {
    const unsigned char c2 = static_cast<unsigned char>(s[i + 1]);
    i += 2;
    return ((c & 0x1F) << 6) | (c2 & 0x3F);
  }
  ++i;  // invalid byte; pass through
  return c;
}

// Words are pre-split at space boundaries; a word keeps the spaces that
// precede it, so "a b" chunks as ["a", "Ġb"] at the symbol level.
std::vector<std::string> chunk_text(const std::string& text) {
  std::vector<std::string> chunks;
  size_t i = 0;
  while (i < text.size()) {
    size_t j = i;
    while (j < text.size() && text[j] == ' ') ++j;
    size_t k = j;
    while (k < text.size() && text[k] != ' ') ++k;
    chunks.push_back(text.substr(i, k - i));
    i = k;
  }
  return chunks;
}

std::vector<std::string> chunk_symbols(const std::string& chunk) {
  std::vector<std::string> symbols;
  symbols.reserve(chunk.size());
  for (unsigned char b : chunk) {
    symbols.push_back(utf8_encode(byte_table().byte_to_cp[b]));
  }
  return symbols;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& a,
                 const std::string& b, const std::string& merged) {
  size_t w = 0;
  for (size_t r = 0; r < symbols.size();) {
    if (r + 1 < symbols.size() && symbols[r] == a && symbols[r + 1] == b) {
      symbols[w++] = merged;
      r += 2;
    } else {
      if (w != r) symbols[w] = std::move(symbols[r]);
      ++w;
      ++r;
    }
  }
  symbols.resize(w);
}

}  // namespace

const std::vector<std::string>& special_markers() {
  static const std::vector<std::string> markers = {"<pad>", "<unk>", "<eos>",
                                                   "<bos>", "<eou>", "<nok>"};
  return markers;
}

std::string byte_to_symbol(unsigned char b) {
  return utf8_encode(byte_table().byte_to_cp[b]);
}

std::string symbols_to_bytes(const std::string& symbol_text) {
  std::string out;
  size_t i = 0;
  while (i < symbol_text.size()) {
    const int cp = utf8_next(symbol_text, i);
    auto it = byte_table().cp_to_byte.find(cp);
    if (it != byte_table().cp_to_byte.end()) {
      out += static_cast<char>(it->second);
    } else {
      out += utf8_encode(cp);
    }
  }
  return out;
}

const std::string& Vocab::token_string(int id) const {
  if (id < 0 || id >= size()) fail("id out of range");
  return tokens_[id];
}

int Vocab::token_id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

void Vocab::rebuild_index() {
  token_to_id_.clear();
  for (int i = 0; i < size(); ++i) token_to_id_[tokens_[i]] = i;
  merge_rank_.clear();
  for (size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_[merges_[r].first + "\n" + merges_[r].second] =
        static_cast<int>(r);
  }
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const std::string& chunk : chunk_text(text)) {
    std::vector<std::string> symbols = chunk_symbols(chunk);
    while (symbols.size() > 1) {
      int best_rank = std::numeric_limits<int>::max();
      for (size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = merge_rank_.find(symbols[i] + "\n" + symbols[i + 1]);
        if (it != merge_rank_.end() && it->second < best_rank) {
          best_rank = it->second;
        }
      }
      if (best_rank == std::numeric_limits<int>::max()) break;
      const auto& [a, b] = merges_[best_rank];
      apply_merge(symbols, a, b, a + b);
    }
    for (const std::string& sym : symbols) {
      const int id = token_id(sym);
      ids.push_back(id >= 0 ? id : Specials::unk);
    }
  }
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string symbol_text;
  for (int id : ids) {
    if (id < 0 || id >= size()) fail("id out of range");
    symbol_text += tokens_[id];
  }
  return symbols_to_bytes(symbol_text);
}

Vocab train_tokenizer(const std::vector<std::string>& corpus_texts,
                      int vocab_size) {
  if (corpus_texts.empty()) fail("empty corpus");

  // unique chunk -> (symbol sequence, frequency)
  std::map<std::string, long long> chunk_freq;
  for (const std::string& text : corpus_texts) {
    for (const std::string& chunk : chunk_text(text)) chunk_freq[chunk] += 1;
  }
  std::vector<std::vector<std::string>> sequences;
  std::vector<long long> freqs;
  std::map<std::string, long long> alphabet;  // symbol -> occurrences
  for (const auto& [chunk, freq] : chunk_freq) {
    sequences.push_back(chunk_symbols(chunk));
    freqs.push_back(freq);
    for (const std::string& sym : sequences.back()) alphabet[sym] += freq;
  }

  Vocab vocab;
  vocab.declared_vocab_size_ = vocab_size;
  vocab.tokens_ = special_markers();
  for (const auto& [sym, cnt] : alphabet) vocab.tokens_.push_back(sym);
  if (vocab.size() > vocab_size) {
    fail("vocab_size " + std::to_string(vocab_size) + " below minimum " +
         std::to_string(vocab.size()) + " (specials + alphabet)");
  }

  while (vocab.size() < vocab_size) {
    std::map<std::pair<std::string, std::string>, long long> pair_counts;
    for (size_t s = 0; s < sequences.size(); ++s) {
      const auto& seq = sequences[s];
      for (size_t i = 0; i + 1 < seq.size(); ++i) {
        pair_counts[{seq[i], seq[i + 1]}] += freqs[s];
      }
    }
    if (pair_counts.empty()) break;  // corpus exhausted before vocab_size

    // highest count wins; ties go to the lexicographically smaller pair,
    // which is the first seen while scanning the ordered map
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [a, b] = best->first;
    const std::string merged = a + b;
    for (auto& seq : sequences) apply_merge(seq, a, b, merged);
    vocab.merges_.emplace_back(a, b);
    vocab.tokens_.push_back(merged);
  }

  vocab.rebuild_index();
  return vocab;
}

std::string Vocab::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = declared_vocab_size_;
  nlohmann::ordered_json specials;
  for (int i = 0; i < Specials::count; ++i) specials[special_markers()[i]] = i;
  j["specials"] = specials;
  nlohmann::ordered_json merges = nlohmann::ordered_json::array();
  for (const auto& [a, b] : merges_) merges.push_back({a, b});
  j["merges"] = merges;
  j["tokens"] = tokens_;
  return j.dump(2) + "\n";
}

Vocab Vocab::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    fail(std::string("vocab parse error: ") + e.what());
  }
  Vocab vocab;
  vocab.declared_vocab_size_ = j.at("vocab_size").get<int>();
  vocab.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  for (const auto& m : j.at("merges")) {
    vocab.merges_.emplace_back(m.at(0).get<std::string>(),
                               m.at(1).get<std::string>());
  }
  if (vocab.size() < Specials::count) fail("vocab missing special tokens");
  for (int i = 0; i < Specials::count; ++i) {
    if (vocab.tokens_[i] != special_markers()[i]) {
      fail("vocab special tokens out of order");
    }
  }
  vocab.rebuild_index();
  return vocab;
}

void Vocab::save(const std::string& path) const {
  io::write_file(path, to_json());
}

Vocab Vocab::load(const std::string& path) {
  return from_json(io::read_file(path));
}

}  // namespace boklm::tokenizer
