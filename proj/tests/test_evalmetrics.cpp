#include "boklm/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "boklm/train.hpp"
#include "doctest.h"
#include "support/metric_oracle.hpp"

using namespace boklm::evalmetrics;

namespace {

EvalInstance make_instance(const std::string& hyp,
                           const std::vector<std::string>& refs) {
  EvalInstance inst;
  inst.hypothesis = hyp;
  inst.references = refs;
  return inst;
}

std::vector<EvalInstance> random_instances(std::mt19937& rng, int count) {
  const std::vector<std::string> words = {"the",  "cat", "sat",  "on",  "a",
                                          "mat",  "dog", "ran",  "far", "red",
                                          "rose", "ate", "fish", "now", "!"};
  auto sentence = [&](int len) {
    std::string s;
    for (int i = 0; i < len; ++i) {
      if (i) s += ' ';
      s += words[rng() % words.size()];
    }
    return s;
  };
  std::vector<EvalInstance> out;
  for (int i = 0; i < count; ++i) {
    EvalInstance inst;
    inst.hypothesis = sentence(2 + static_cast<int>(rng() % 8));
    const int refs = 1 + static_cast<int>(rng() % 3);
    for (int r = 0; r < refs; ++r) {
      inst.references.push_back(sentence(2 + static_cast<int>(rng() % 8)));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

TEST_CASE("metric tokenization pads punctuation and lowercases") {
  CHECK(metric_tokenize("Hello, World!") ==
        std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(metric_tokenize("") == std::vector<std::string>{});
}

TEST_CASE("bleu: perfect match scores one") {
  auto instances = {make_instance("the cat sat on the mat",
                                  {"the cat sat on the mat", "a cat sat"})};
  for (int n = 1; n <= 4; ++n) {
    CHECK(bleu_n(instances, n) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bleu: clipped unigram precision") {
  // hyp "a a a" vs ref "a b": clipped count 1, precision 1/3; BP applies
  // because the hypothesis is longer than the reference
  auto instances = {make_instance("a a a", {"a b"})};
  CHECK(bleu_n(instances, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bleu: multi-reference clipping covers each unigram") {
  auto instances = {make_instance("a b", {"a x", "y b"})};
  CHECK(bleu_n(instances, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bleu errors") {
  CHECK_THROWS_AS(bleu_n({}, 1), std::runtime_error);
  CHECK_THROWS_AS(bleu_n({make_instance("a", {})}, 1), std::runtime_error);
  CHECK_THROWS_AS(bleu_n({make_instance("a", {"a"})}, 5), std::runtime_error);
}

TEST_CASE("nist: identical hypothesis has brevity factor one") {
  auto instances = {make_instance("the cat sat", {"the cat sat"})};
  // single ref corpus: info(unigram) = log2(3/1); all matched
  const double expected_1 = std::log2(3.0);
  const double got = nist_n(instances, 1);
  CHECK(got == doctest::Approx(expected_1).epsilon(1e-12));
}

TEST_CASE("nist: hand-computed two-instance information weights") {
  std::vector<EvalInstance> instances = {
      make_instance("the cat", {"the cat sat", "the cat"}),
      make_instance("a dog", {"a dog ran the mile"}),
  };
  // pooled reference unigrams: the x3, cat x2, sat x1, a x1, dog x1,
  // ran x1, mile x1 -> 10 tokens
  // bigrams: (the,cat) x2, (cat,sat) x1, (a,dog) x1, (dog,ran) x1,
  // (ran,the) x1, (the,mile) x1
  const double info_the = std::log2(10.0 / 3.0);
  const double info_cat = std::log2(10.0 / 2.0);
  const double info_a = std::log2(10.0 / 1.0);
  const double info_dog = std::log2(10.0 / 1.0);
  const double info_the_cat = std::log2(3.0 / 2.0);
  const double info_a_dog = std::log2(1.0 / 1.0);

  const double order1 =
      (info_the + info_cat + info_a + info_dog) / 4.0;  // 4 hyp unigrams
  const double order2 = (info_the_cat + info_a_dog) / 2.0;
  double expected = (order1 + order2) / 2.0;
  // lengths: hyp 4 vs mean ref (2.5 + 5) = 7.5 -> brevity < 1
  const double beta = std::log(0.5) / std::pow(std::log(2.0 / 3.0), 2);
  expected *= std::exp(beta * std::pow(std::log(4.0 / 7.5), 2));

  CHECK(nist_n(instances, 2) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("nist: zero overlap scores zero") {
  auto instances = {make_instance("x y z", {"a b c"})};
  CHECK(nist_n(instances, 2) == doctest::Approx(0.0));
}

TEST_CASE("distinct-n hand counts") {
  CHECK(distinct_n({"i am am"}, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(distinct_n({"a b c d"}, 1) == doctest::Approx(1.0));
  CHECK(distinct_n({"a b c", "a b c"}, 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(distinct_n({""}, 1), std::runtime_error);
  CHECK_THROWS_AS(distinct_n({"a"}, 2), std::runtime_error);
}

TEST_CASE("entropy: uniform and degenerate distributions") {
  // four distinct unigrams, uniform: H1 = ln 4
  EntropyReport r = entropy_n({"a b", "c d"});
  CHECK(r.h[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // single repeated token: H1 = 0
  EntropyReport r2 = entropy_n({"a a a a"});
  CHECK(r2.h[0] == doctest::Approx(0.0));
  // too short for 4-grams: order flagged empty, value 0
  EntropyReport r3 = entropy_n({"a b"});
  CHECK(r3.empty_order[3]);
  CHECK(r3.h[3] == 0.0);
}

TEST_CASE("referenced metrics match the brute-force oracle") {
  std::mt19937 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto instances = random_instances(rng, 2 + static_cast<int>(rng() % 5));
    std::vector<metricoracle::Instance> oracle_instances;
    std::vector<std::string> hyps;
    for (const auto& inst : instances) {
      oracle_instances.push_back({inst.hypothesis, inst.references});
      hyps.push_back(inst.hypothesis);
    }
    for (int n = 1; n <= 4; ++n) {
      CAPTURE(trial);
      CAPTURE(n);
      CHECK(bleu_n(instances, n) ==
            doctest::Approx(metricoracle::bleu(oracle_instances, n))
                .epsilon(1e-9));
      CHECK(nist_n(instances, n) ==
            doctest::Approx(metricoracle::nist(oracle_instances, n))
                .epsilon(1e-9));
    }
    for (int n = 1; n <= 2; ++n) {
      CHECK(distinct_n(hyps, n) ==
            doctest::Approx(metricoracle::distinct(hyps, n)).epsilon(1e-9));
    }
    EntropyReport er = entropy_n(hyps);
    for (int n = 1; n <= 4; ++n) {
      CHECK(er.h[n - 1] ==
            doctest::Approx(metricoracle::entropy(hyps, n)).epsilon(1e-9));
    }
  }
}

TEST_CASE("metrics are permutation invariant") {
  std::mt19937 rng(99);
  auto instances = random_instances(rng, 6);
  std::vector<std::string> hyps;
  for (const auto& inst : instances) hyps.push_back(inst.hypothesis);

  const double b = bleu_n(instances, 2);
  const double ni = nist_n(instances, 2);
  const double d = distinct_n(hyps, 1);
  const double e = entropy_n(hyps).h[1];

  auto shuffled = instances;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto shuffled_hyps = hyps;
  std::shuffle(shuffled_hyps.begin(), shuffled_hyps.end(), rng);

  CHECK(bleu_n(shuffled, 2) == doctest::Approx(b).epsilon(1e-12));
  CHECK(nist_n(shuffled, 2) == doctest::Approx(ni).epsilon(1e-12));
  CHECK(distinct_n(shuffled_hyps, 1) == doctest::Approx(d).epsilon(1e-12));
  CHECK(entropy_n(shuffled_hyps).h[1] == doctest::Approx(e).epsilon(1e-12));
}

TEST_CASE("pearson and spearman on constructed data") {
  std::vector<double> xs = {1, 2, 3, 4, 5};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(2.0 * x + 1.0);
  Correlation p = pearson(xs, ys);
  CHECK(p.r == doctest::Approx(1.0));
  CHECK(p.p_value == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(spearman(xs, ys).r == doctest::Approx(1.0));

  std::vector<double> cubed;
  for (double x : xs) cubed.push_back(-x * x * x);
  CHECK(spearman(xs, cubed).r == doctest::Approx(-1.0));
  CHECK(pearson(xs, cubed).r > -1.0);

  // tie handling via average ranks: hand computation
  std::vector<double> tx = {1, 2, 2, 3};
  std::vector<double> ty = {1, 2, 3, 4};
  // ranks of tx: 1, 2.5, 2.5, 4; ranks of ty: 1, 2, 3, 4
  // pearson of ranks = 0.9486832980505138
  CHECK(spearman(tx, ty).r ==
        doctest::Approx(0.9486832980505138).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(pearson({1, 1, 1}, {1, 2, 3}),
                       doctest::Contains("degenerate"), std::runtime_error);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2}), std::runtime_error);
}

TEST_CASE("p-values shrink with stronger evidence") {
  std::mt19937 rng(5);
  std::vector<double> xs, noisy;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(i);
    noisy.push_back(i + (static_cast<double>(rng() % 100) - 50.0) / 10.0);
  }
  Correlation strong = pearson(xs, noisy);
  CHECK(strong.r > 0.9);
  CHECK(strong.p_value < 0.001);

  std::vector<double> unrelated;
  for (int i = 0; i < 30; ++i) {
    unrelated.push_back((static_cast<double>(rng() % 1000)) / 10.0);
  }
  Correlation weak = pearson(xs, unrelated);
  CHECK(weak.p_value > strong.p_value);
}

TEST_CASE("score_boklm: lambda zero equals the per-token lm loss") {
  using namespace boklm;
  auto vocab = tokenizer::train_tokenizer(
      {"what would the roses cost", "twenty dollars", "hello there"}, 96);
  model::ModelConfig cfg;
  cfg.architecture = model::Architecture::decoder_only;
  cfg.num_layers = 1;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = vocab.size();
  cfg.max_positions = 128;
  cfg.seed = 21;
  model::ModelParams params = model::init_model(cfg);

  const std::vector<std::string> context = {"hello there"};
  const std::string response = "twenty dollars";

  const double score = score_boklm(params, vocab, context, {}, response, 0.0);

  corpus::TrainingExample ex;
  ex.context_ids = corpus::build_context({}, context, vocab, 64);
  ex.response_ids = vocab.encode(response);
  ex.response_ids.push_back(tokenizer::Specials::eos);
  ex.bok_label_ids = corpus::prepare_bok_label(response, {}, vocab);
  model::ForwardOutput fwd = model::forward(params, ex);
  boklm::tensor::Tensor lm = train::lm_loss(fwd.lm_logits, ex.response_ids);
  CHECK(score == doctest::Approx(lm.item()).epsilon(1e-9));

  // deterministic
  CHECK(score_boklm(params, vocab, context, {}, response, 0.0) == score);
  // lambda shifts the score by the bok term
  const double with_bok = score_boklm(params, vocab, context, {}, response, 0.5);
  CHECK(with_bok > score);
}

TEST_CASE("correlate_metric on constructed judgments") {
  using namespace boklm;
  auto vocab = tokenizer::train_tokenizer(
      {"red roses cost twenty", "hello there friend", "the glacier meadow"},
      96);
  model::ModelConfig cfg;
  cfg.architecture = model::Architecture::decoder_only;
  cfg.num_layers = 1;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = vocab.size();
  cfg.max_positions = 128;
  cfg.seed = 2;
  model::ModelParams params = model::init_model(cfg);

  std::vector<HumanJudgment> judgments;
  const std::vector<std::string> responses = {"red roses cost twenty",
                                              "hello there friend",
                                              "the glacier meadow",
                                              "roses cost twenty",
                                              "hello glacier"};
  for (const auto& r : responses) {
    HumanJudgment j;
    j.context = {"hello there friend"};
    j.response = r;
    judgments.push_back(j);
  }
  // human_score = -score: Pearson must be exactly -1
  for (auto& j : judgments) {
    j.human_score =
        -score_boklm(params, vocab, j.context, j.condition, j.response, 0.1);
  }
  CorrelationReport report = correlate_metric(judgments, params, vocab, 0.1);
  CHECK(report.n == 5);
  CHECK(report.pearson.r == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(report.spearman.r == doctest::Approx(-1.0).epsilon(1e-9));

  judgments.resize(2);
  CHECK_THROWS_AS(correlate_metric(judgments, params, vocab, 0.1),
                  std::runtime_error);
}
