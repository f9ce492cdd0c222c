#include "boklm/tokenizer.hpp"

#include <cstdio>
#include <random>
#include <set>

#include "boklm/io.hpp"
#include "doctest.h"

using namespace boklm::tokenizer;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/boklm_test_") + name;
}

}  // namespace

TEST_CASE("training learns the highest-frequency pair first") {
  // "aaab" has pairs (a,a) x2 and (a,b) x1 per occurrence
  Vocab v = train_tokenizer({"aaab", "aaab"}, 6 + 2 + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == std::pair<std::string, std::string>{"a", "a"});

  auto ids = v.encode("aaab");
  REQUIRE(ids.size() == 3);
  CHECK(v.token_string(ids[0]) == "aa");
  CHECK(v.token_string(ids[1]) == "a");
  CHECK(v.token_string(ids[2]) == "b");
}

TEST_CASE("vocab_size equal to specials plus alphabet means zero merges") {
  Vocab v = train_tokenizer({"abc"}, 6 + 3);
  CHECK(v.merges().empty());
  CHECK(v.size() == 9);
}

TEST_CASE("training is deterministic") {
  const std::vector<std::string> corpus = {"the cat sat", "the cat ran",
                                           "a cat"};
  Vocab a = train_tokenizer(corpus, 40);
  Vocab b = train_tokenizer(corpus, 40);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("small corpus may stop short of vocab_size") {
  Vocab v = train_tokenizer({"ab"}, 64);
  CHECK(v.declared_vocab_size() == 64);
  CHECK(v.size() < 64);
  // one possible merge ("a","b"), then exhausted
  CHECK(v.merges().size() == 1);
}

TEST_CASE("empty corpus and undersized vocab are errors") {
  CHECK_THROWS_WITH_AS(train_tokenizer({}, 100),
                       doctest::Contains("empty corpus"), std::runtime_error);
  CHECK_THROWS_WITH_AS(train_tokenizer({"abcdefgh"}, 7),
                       doctest::Contains("vocab_size"), std::runtime_error);
}

TEST_CASE("round trip over the corpus alphabet") {
  const std::vector<std::string> corpus = {"hello world", "hold the world",
                                           "well well"};
  Vocab v = train_tokenizer(corpus, 48);
  for (const std::string& s :
       {std::string("hello world"), std::string("world hold"), std::string(""),
        std::string("  hold the  llw "), std::string("dwell"),
        std::string(" edhortw")}) {
    CHECK(v.decode(v.encode(s)) == s);
  }
  CHECK(v.encode("").empty());
}

TEST_CASE("word-initial tokens carry the leading-space marker") {
  Vocab v = train_tokenizer({"red roses red roses"}, 64);
  auto ids = v.encode("red roses");
  REQUIRE(ids.size() >= 2);
  CHECK(v.token_string(ids[0]) == "red");
  bool found_marked = false;
  for (int id : ids) {
    if (v.token_string(id) == "Ġroses") found_marked = true;
  }
  CHECK(found_marked);
}

TEST_CASE("prefix stability under word-boundary pre-splitting") {
  const std::vector<std::string> corpus = {"the cat sat on the mat",
                                           "a cat ran off"};
  Vocab v = train_tokenizer(corpus, 50);
  std::mt19937 rng(5);
  const std::vector<std::string> words = {"the", "cat", "sat", "mat",
                                          "on",  "a",   "ran", "off"};
  for (int trial = 0; trial < 40; ++trial) {
    auto sample = [&] {
      std::string s = words[rng() % words.size()];
      for (int i = rng() % 3; i > 0; --i) s += " " + words[rng() % words.size()];
      return s;
    };
    const std::string s1 = sample(), s2 = sample();
    auto left = v.encode(s1);
    auto right = v.encode(" " + s2);
    left.insert(left.end(), right.begin(), right.end());
    CHECK(left == v.encode(s1 + " " + s2));
  }
}

TEST_CASE("alphabet text never encodes to special ids") {
  const std::vector<std::string> corpus = {"some <pad> like text", "plain"};
  Vocab v = train_tokenizer(corpus, 64);
  const std::string alphabet = "somepad<>liktxn ";
  std::mt19937 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    for (int i = 0; i < 12; ++i) s += alphabet[rng() % alphabet.size()];
    for (int id : v.encode(s)) CHECK(id >= Specials::count);
  }
  // marker-looking text is ordinary text
  for (int id : v.encode("<pad><nok>")) CHECK(id >= Specials::count);
  CHECK(v.decode(v.encode("<pad><nok>")) == "<pad><nok>");
}

TEST_CASE("unknown bytes map to <unk>") {
  Vocab v = train_tokenizer({"abc abc"}, 16);
  auto ids = v.encode("axbz");
  REQUIRE(ids.size() == 4);
  CHECK(v.token_string(ids[0]) == "a");
  CHECK(ids[1] == Specials::unk);
  CHECK(v.token_string(ids[2]) == "b");
  CHECK(ids[3] == Specials::unk);
}

TEST_CASE("special ids render as literal markers") {
  Vocab v = train_tokenizer({"hi"}, 16);
  CHECK(v.decode({Specials::nok}) == "<nok>");
  CHECK(v.decode({Specials::eos, Specials::bos}) == "<eos><bos>");
  CHECK(v.decode({}) == "");
  CHECK_THROWS_WITH_AS(v.decode({v.size()}), doctest::Contains("out of range"),
                       std::runtime_error);
}

TEST_CASE("vocab file round trip is bit exact") {
  Vocab v = train_tokenizer({"the cat sat on the mat", "cats"}, 48);
  const std::string path = temp_path("vocab.json");
  v.save(path);
  Vocab loaded = Vocab::load(path);
  CHECK(loaded.to_json() == v.to_json());
  CHECK(boklm::io::read_file(path) == v.to_json());
  CHECK(loaded.encode("the cat") == v.encode("the cat"));

  const std::string path2 = temp_path("vocab2.json");
  loaded.save(path2);
  CHECK(boklm::io::read_file(path) == boklm::io::read_file(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("non-ascii corpus text survives the byte mapping") {
  const std::string text = "caf\xc3\xa9 au lait";
  Vocab v = train_tokenizer({text}, 40);
  CHECK(v.decode(v.encode(text)) == text);
}
