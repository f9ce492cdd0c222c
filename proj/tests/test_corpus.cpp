#include "boklm/corpus.hpp"

#include <cstdio>

#include "boklm/io.hpp"
#include "doctest.h"

using namespace boklm::corpus;
using boklm::tokenizer::Specials;
using boklm::tokenizer::Vocab;
using boklm::tokenizer::train_tokenizer;

namespace {

Vocab toy_vocab() {
  return train_tokenizer(
      {"what would the roses cost me ?", "perhaps red roses .",
       "i need to buy some flowers for my wife .", "ok ! sounds good .",
       "zebra quartz violin harbor glacier meadow piano anchor"},
      160);
}

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = "/tmp/boklm_corpus_" + name;
  boklm::io::write_file(path, content);
  return path;
}

}  // namespace

TEST_CASE("load_jsonl keeps order and rejects bad records") {
  const std::string path = write_temp(
      "load.jsonl",
      R"({"id": "d1", "condition": null, "turns": ["hi there", "hello"]})"
      "\n"
      R"({"id": "d2", "turns": ["hi"]})"
      "\n"
      R"({"id": "d3", "condition": ["i like tea"], "turns": ["a", "b", "c"]})"
      "\n");
  LoadResult result = load_jsonl(path);
  REQUIRE(result.dialogues.size() == 2);
  CHECK(result.rejected == 1);
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("line 2") != std::string::npos);
  CHECK(result.dialogues[0].id == "d1");
  CHECK(result.dialogues[0].condition.empty());
  CHECK(result.dialogues[1].id == "d3");
  CHECK(result.dialogues[1].condition ==
        std::vector<std::string>{"i like tea"});
  std::remove(path.c_str());
}

TEST_CASE("load_jsonl reports parse errors with line numbers") {
  const std::string path = write_temp(
      "bad.jsonl", "{\"id\": \"d1\", \"turns\": [\"a\", \"b\"]}\nnot json\n");
  CHECK_THROWS_WITH_AS(load_jsonl(path), doctest::Contains("line 2"),
                       std::runtime_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_jsonl("/nonexistent/x.jsonl"), std::runtime_error);
}

TEST_CASE("prepare_bok_label encodes ranked keywords") {
  Vocab vocab = toy_vocab();
  LabelConfig cfg;
  auto label = prepare_bok_label("What would the roses cost me ?", cfg, vocab);
  CHECK(label == vocab.encode("roses cost"));
  CHECK(label.size() <= 8);
  CHECK(vocab.decode(label) == "roses cost");
}

TEST_CASE("prepare_bok_label falls back to <nok>") {
  Vocab vocab = toy_vocab();
  LabelConfig cfg;
  CHECK(prepare_bok_label("ok !", cfg, vocab) == std::vector<int>{Specials::nok});
  CHECK(prepare_bok_label("", cfg, vocab) == std::vector<int>{Specials::nok});
}

TEST_CASE("prepare_bok_label truncates to k_max ids") {
  Vocab vocab = toy_vocab();
  LabelConfig cfg;
  const std::string response =
      "zebra quartz violin harbor glacier meadow sapphire tundra";
  auto full = vocab.encode(
      [&] {
        auto result = boklm::keywords::extract_keywords(response, cfg.extractor);
        std::string s;
        for (const auto& c : result.ranked) {
          if (!s.empty()) s += ' ';
          s += c.surface;
        }
        return s;
      }());
  REQUIRE(full.size() > 8);
  auto label = prepare_bok_label(response, cfg, vocab);
  REQUIRE(label.size() == 8);
  for (size_t i = 0; i < 8; ++i) CHECK(label[i] == full[i]);
}

TEST_CASE("build_examples: one example per target turn") {
  Vocab vocab = toy_vocab();
  Dialogue d;
  d.id = "d";
  d.turns = {"hi there", "hello", "how are you ?", "good ."};
  auto examples = build_examples(d, vocab, {}, 128);
  REQUIRE(examples.size() == 3);
  CHECK(examples[0].turn_index == 2);
  CHECK(examples[1].turn_index == 3);
  CHECK(examples[2].turn_index == 4);
  for (const auto& ex : examples) {
    CHECK(!ex.response_ids.empty());
    CHECK(ex.response_ids.back() == Specials::eos);
    CHECK(!ex.bok_label_ids.empty());
  }
}

TEST_CASE("build_examples: context layout and reconstruction") {
  Vocab vocab = toy_vocab();
  Dialogue d;
  d.id = "d";
  d.condition = {"i like tea", "i own a cat"};
  d.turns = {"hi there", "hello", "good ."};
  auto examples = build_examples(d, vocab, {}, 128);
  REQUIRE(examples.size() == 2);

  auto condition_ids = vocab.encode("i like tea i own a cat");
  condition_ids.push_back(Specials::eou);
  for (const auto& ex : examples) {
    REQUIRE(ex.context_ids.size() >= condition_ids.size());
    for (size_t i = 0; i < condition_ids.size(); ++i) {
      CHECK(ex.context_ids[i] == condition_ids[i]);
    }
  }
  CHECK(vocab.decode(examples[1].context_ids) ==
        "i like tea i own a cat<eou>hi there<eos>hello<eos>");
}

TEST_CASE("build_examples: oldest utterances dropped first") {
  Vocab vocab = toy_vocab();
  Dialogue d;
  d.id = "d";
  d.turns = {"zebra quartz violin harbor glacier meadow",
             "piano anchor zebra quartz violin harbor",
             "glacier meadow piano anchor zebra quartz",
             "ok ."};
  const int budget = 16;
  auto examples = build_examples(d, vocab, {}, budget);
  REQUIRE(examples.size() == 3);
  for (const auto& ex : examples) {
    CHECK(ex.context_ids.size() <= static_cast<size_t>(budget));
  }
  // the last example keeps only the most recent whole utterance that fits
  const auto& ctx = examples[2].context_ids;
  auto u3 = vocab.encode("glacier meadow piano anchor zebra quartz");
  u3.push_back(Specials::eos);
  if (u3.size() <= static_cast<size_t>(budget)) {
    CHECK(ctx == u3);
  } else {
    CHECK(ctx.empty());
  }
}

TEST_CASE("build_examples: condition too long is an error") {
  Vocab vocab = toy_vocab();
  Dialogue d;
  d.id = "d";
  d.condition = {"zebra quartz violin harbor glacier meadow piano anchor "
                 "zebra quartz violin harbor glacier meadow piano anchor"};
  d.turns = {"hi", "hello"};
  CHECK_THROWS_WITH_AS(build_examples(d, vocab, {}, 16),
                       doctest::Contains("condition too long"),
                       std::runtime_error);
}

TEST_CASE("corpus_stats") {
  Dialogue five;
  five.turns = {"a", "b", "c", "d", "e"};
  auto s = corpus_stats({five});
  CHECK(s.num_dialogues == 1);
  CHECK(s.num_turns == 5);
  CHECK(s.t_max == 5);
  CHECK(s.t_min == 5);
  CHECK(s.t_avg == doctest::Approx(5.0));

  Dialogue two, four;
  two.turns = {"a", "b"};
  four.turns = {"a", "b", "c", "d"};
  auto s2 = corpus_stats({two, four});
  CHECK(s2.t_avg == doctest::Approx(3.0));
  CHECK(s2.t_min == 2);
  CHECK(s2.t_max == 4);

  CHECK_THROWS_AS(corpus_stats({}), std::runtime_error);
}

TEST_CASE("example cache round trip is deterministic") {
  Vocab vocab = toy_vocab();
  Dialogue d;
  d.id = "d";
  d.turns = {"what would the roses cost me ?", "perhaps red roses .",
             "ok ! sounds good ."};
  auto examples = build_all_examples({d}, vocab, {}, 64);

  const std::string text = examples_to_jsonl(examples);
  auto loaded = examples_from_jsonl(text);
  REQUIRE(loaded.size() == examples.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].context_ids == examples[i].context_ids);
    CHECK(loaded[i].response_ids == examples[i].response_ids);
    CHECK(loaded[i].bok_label_ids == examples[i].bok_label_ids);
    CHECK(loaded[i].turn_index == examples[i].turn_index);
  }
  CHECK(examples_to_jsonl(loaded) == text);

  // <nok> appears only as a singleton label
  for (const auto& ex : examples) {
    if (ex.bok_label_ids.size() > 1) {
      for (int id : ex.bok_label_ids) CHECK(id != Specials::nok);
    }
    for (int id : ex.bok_label_ids) {
      CHECK(id >= 0);
      CHECK(id < vocab.size());
    }
  }
}
