#include "boklm/cli.hpp"

#include <cmath>
#include <map>
#include <set>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "boklm/corpus.hpp"
#include "boklm/evalmetrics.hpp"
#include "boklm/generate.hpp"
#include "boklm/io.hpp"
#include "boklm/keywords.hpp"
#include "boklm/model.hpp"
#include "boklm/tensor.hpp"
#include "boklm/tokenizer.hpp"
#include "boklm/train.hpp"
#include "json.hpp"

namespace boklm::cli {

namespace {

using nlohmann::ordered_json;

struct GlobalArgs {
  uint64_t seed = 10;
  std::string precision = "f32";
  std::string stopwords_path;
};

void apply_globals(const GlobalArgs& g) {
  tensor::set_default_precision(g.precision == "f64" ? tensor::Precision::f64
                                                     : tensor::Precision::f32);
}

keywords::ExtractorConfig extractor_from(const GlobalArgs& g, int max_ngram,
                                         int top_n, double dedup_threshold,
                                         int window,
                                         keywords::StopwordSet& storage) {
  keywords::ExtractorConfig cfg;
  cfg.max_ngram = max_ngram;
  cfg.top_n = top_n;
  cfg.dedup_threshold = dedup_threshold;
  cfg.window = window;
  if (!g.stopwords_path.empty()) {
    storage = keywords::load_stopword_file(g.stopwords_path);
    cfg.stopwords = &storage;
  }
  return cfg;
}

std::vector<corpus::Dialogue> load_dialogues_or_die(const std::string& path,
                                                    std::ostream& err) {
  corpus::LoadResult loaded = corpus::load_jsonl(path);
  for (const auto& w : loaded.warnings) err << "warning: " << path << ": " << w << "\n";
  return std::move(loaded.dialogues);
}

std::string json_meta(const ordered_json& config) {
  ordered_json j;
  j["config"] = config;
  return j.dump(2) + "\n";
}

// ---- tokenizer-train -------------------------------------------------------

struct TokenizerTrainArgs {
  std::string data_path;
  std::string out_path;
  int vocab_size = 512;
  bool include_conditions = true;
};

int cmd_tokenizer_train(const TokenizerTrainArgs& a, const GlobalArgs& g) {
  auto dialogues = load_dialogues_or_die(a.data_path, std::cerr);
  std::vector<std::string> texts;
  for (const auto& d : dialogues) {
    if (a.include_conditions) {
      for (const auto& c : d.condition) texts.push_back(c);
    }
    for (const auto& t : d.turns) texts.push_back(t);
  }
  tokenizer::Vocab vocab = tokenizer::train_tokenizer(texts, a.vocab_size);
  vocab.save(a.out_path);

  ordered_json cfg;
  cfg["command"] = "tokenizer-train";
  cfg["data"] = a.data_path;
  cfg["vocab_size"] = a.vocab_size;
  cfg["include_conditions"] = a.include_conditions;
  cfg["seed"] = g.seed;
  io::write_file(a.out_path + ".meta.json", json_meta(cfg));

  std::cout << "trained vocab of " << vocab.size() << " tokens ("
            << vocab.merges().size() << " merges) -> " << a.out_path << "\n";
  if (vocab.size() < a.vocab_size) {
    std::cout << "note: corpus exhausted at " << vocab.size()
              << " tokens, below the requested " << a.vocab_size << "\n";
  }
  return 0;
}

// ---- stats -----------------------------------------------------------------

int cmd_stats(const std::string& data_path) {
  auto dialogues = load_dialogues_or_die(data_path, std::cerr);
  corpus::CorpusStats s = corpus::corpus_stats(dialogues);
  std::printf("%-12s %-8s %-6s %-6s %-6s\n", "dialogues", "turns", "t_max",
              "t_min", "t_avg");
  std::printf("%-12d %-8d %-6d %-6d %-6.2f\n", s.num_dialogues, s.num_turns,
              s.t_max, s.t_min, s.t_avg);
  return 0;
}

// ---- prepare ---------------------------------------------------------------

struct PrepareArgs {
  std::string data_path;
  std::string vocab_path;
  std::string out_path;
  std::string report_path;
  int k_max = 8;
  int max_context = 256;
  int max_ngram = 1;
  int top_n = 10;
  double dedup_threshold = 0.8;
  int window = 1;
  bool dedup_labels = false;
};

ordered_json prepare_config_json(const PrepareArgs& a, const GlobalArgs& g) {
  ordered_json cfg;
  cfg["command"] = "prepare";
  cfg["data"] = a.data_path;
  cfg["vocab"] = a.vocab_path;
  cfg["k_max"] = a.k_max;
  cfg["max_context_tokens"] = a.max_context;
  cfg["max_ngram"] = a.max_ngram;
  cfg["top_n"] = a.top_n;
  cfg["dedup_threshold"] = a.dedup_threshold;
  cfg["window"] = a.window;
  cfg["dedup_labels"] = a.dedup_labels;
  cfg["stopwords"] = g.stopwords_path.empty() ? "<bundled>" : g.stopwords_path;
  cfg["seed"] = g.seed;
  return cfg;
}

int cmd_prepare(const PrepareArgs& a, const GlobalArgs& g) {
  auto dialogues = load_dialogues_or_die(a.data_path, std::cerr);
  tokenizer::Vocab vocab = tokenizer::Vocab::load(a.vocab_path);

  keywords::StopwordSet stopword_storage;
  corpus::LabelConfig label;
  label.extractor = extractor_from(g, a.max_ngram, a.top_n, a.dedup_threshold,
                                   a.window, stopword_storage);
  label.k_max = a.k_max;
  label.dedup_labels = a.dedup_labels;

  auto examples =
      corpus::build_all_examples(dialogues, vocab, label, a.max_context);
  corpus::save_examples(a.out_path, examples);

  // label coverage report
  int nok = 0;
  std::map<int, int> length_histogram;
  std::set<int> distinct_label_ids;
  for (const auto& ex : examples) {
    length_histogram[static_cast<int>(ex.bok_label_ids.size())] += 1;
    if (ex.bok_label_ids.size() == 1 &&
        ex.bok_label_ids[0] == tokenizer::Specials::nok) {
      ++nok;
    } else {
      for (int id : ex.bok_label_ids) distinct_label_ids.insert(id);
    }
  }
  ordered_json report;
  report["num_examples"] = examples.size();
  report["nok_fraction"] =
      examples.empty() ? 0.0 : static_cast<double>(nok) / examples.size();
  ordered_json hist;
  for (const auto& [len, count] : length_histogram) {
    hist[std::to_string(len)] = count;
  }
  report["label_length_histogram"] = hist;
  report["distinct_label_tokens"] = distinct_label_ids.size();
  report["keyword_vocab_coverage"] =
      static_cast<double>(distinct_label_ids.size()) / vocab.size();
  report["config"] = prepare_config_json(a, g);

  const ordered_json cfg = prepare_config_json(a, g);
  io::write_file(a.out_path + ".meta.json", json_meta(cfg));
  if (!a.report_path.empty()) {
    io::write_file(a.report_path, report.dump(2) + "\n");
  }
  std::cout << "wrote " << examples.size() << " examples -> " << a.out_path
            << " (nok fraction " << report["nok_fraction"].dump() << ")\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data_path, cache_path;
  std::string dev_data_path, dev_cache_path;
  double dev_frac = 0.1;
  std::string vocab_path;
  std::string out_path;
  std::string log_path;
  std::string arch = "decoder-only";
  std::string loss = "bok-lm";
  double lambda = -1.0;  // <0: use the architecture preset
  int k_max = 8;
  int max_context = 256;
  int layers = 4;
  int d_model = 128;
  int heads = 4;
  int d_ff = 512;
  int max_positions = 512;
  double dropout = 0.1;
  double lr = 5e-5;
  int batch_size = 16;
  int epochs = 20;
  int patience = 3;
  double grad_clip = 1.0;
  int64_t max_steps = 0;
  int max_ngram = 1;
};

int cmd_train(const TrainArgs& a, const GlobalArgs& g) {
  tokenizer::Vocab vocab = tokenizer::Vocab::load(a.vocab_path);
  const std::string vocab_hash = io::file_hash(a.vocab_path);

  keywords::StopwordSet stopword_storage;
  corpus::LabelConfig label;
  label.extractor =
      extractor_from(g, a.max_ngram, 10, 0.8, 1, stopword_storage);
  label.k_max = a.k_max;

  std::vector<corpus::TrainingExample> train_ex, dev_ex;
  if (!a.cache_path.empty()) {
    train_ex = corpus::load_examples(a.cache_path);
    if (a.dev_cache_path.empty()) {
      throw std::runtime_error("cli: --cache requires --dev-cache");
    }
    dev_ex = corpus::load_examples(a.dev_cache_path);
  } else if (!a.data_path.empty()) {
    auto dialogues = load_dialogues_or_die(a.data_path, std::cerr);
    if (!a.dev_data_path.empty()) {
      train_ex =
          corpus::build_all_examples(dialogues, vocab, label, a.max_context);
      dev_ex = corpus::build_all_examples(
          load_dialogues_or_die(a.dev_data_path, std::cerr), vocab, label,
          a.max_context);
    } else {
      const size_t dev_count = std::max<size_t>(
          1, static_cast<size_t>(std::ceil(dialogues.size() * a.dev_frac)));
      if (dev_count >= dialogues.size()) {
        throw std::runtime_error("cli: dev split leaves no training data");
      }
      std::vector<corpus::Dialogue> train_d(
          dialogues.begin(), dialogues.end() - dev_count);
      std::vector<corpus::Dialogue> dev_d(dialogues.end() - dev_count,
                                          dialogues.end());
      train_ex = corpus::build_all_examples(train_d, vocab, label, a.max_context);
      dev_ex = corpus::build_all_examples(dev_d, vocab, label, a.max_context);
    }
  } else {
    throw std::runtime_error("cli: train needs --data or --cache");
  }

  model::ModelConfig mc;
  mc.architecture = model::architecture_from_name(a.arch);
  mc.num_layers = a.layers;
  mc.d_model = a.d_model;
  mc.num_heads = a.heads;
  mc.d_ff = a.d_ff;
  mc.vocab_size = vocab.size();
  mc.max_positions = a.max_positions;
  mc.dropout_rate = a.dropout;
  mc.seed = g.seed;

  train::TrainConfig tc;
  tc.loss_mode = train::loss_mode_from_name(a.loss);
  tc.lambda = a.lambda >= 0.0 ? a.lambda : train::default_lambda(mc.architecture);
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch_size;
  tc.max_epochs = a.epochs;
  tc.patience = a.patience;
  tc.grad_clip_norm = a.grad_clip;
  tc.seed = g.seed;
  tc.max_steps = a.max_steps;

  ordered_json cfg;
  cfg["command"] = "train";
  cfg["arch"] = a.arch;
  cfg["loss"] = a.loss;
  cfg["lambda"] = tc.lambda;
  cfg["k_max"] = a.k_max;
  cfg["layers"] = a.layers;
  cfg["d_model"] = a.d_model;
  cfg["heads"] = a.heads;
  cfg["d_ff"] = a.d_ff;
  cfg["max_positions"] = a.max_positions;
  cfg["dropout"] = a.dropout;
  cfg["lr"] = a.lr;
  cfg["batch_size"] = a.batch_size;
  cfg["epochs"] = a.epochs;
  cfg["patience"] = a.patience;
  cfg["grad_clip"] = a.grad_clip;
  cfg["max_steps"] = a.max_steps;
  cfg["max_context_tokens"] = a.max_context;
  cfg["seed"] = g.seed;
  cfg["precision"] = g.precision;
  cfg["vocab_hash"] = vocab_hash;

  std::string log_lines;
  model::ModelParams params = model::init_model(mc);
  train::FitResult result =
      train::fit(params, train_ex, dev_ex, tc, [&](const train::EpochLog& log) {
        const std::string line = log.to_json();
        log_lines += line + "\n";
        std::cout << line << "\n";
      });

  model::save_checkpoint(a.out_path, result.best_params, vocab_hash,
                         cfg.dump());
  if (!a.log_path.empty()) {
    io::write_file(a.log_path, log_lines);
    io::write_file(a.log_path + ".meta.json", json_meta(cfg));
  }
  std::cout << "best dev total " << result.best_dev << " at epoch "
            << result.best_epoch << "; saved " << a.out_path << "\n";
  return 0;
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  TrainArgs base;
  std::string lambdas = "0,0.1,0.3";
  std::string k_maxes = "4,8";
  std::string out_dir;
};

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<T>(std::stod(item)));
  }
  return out;
}

int cmd_sweep(const SweepArgs& a, const GlobalArgs& g) {
  if (a.base.data_path.empty()) {
    throw std::runtime_error("cli: sweep needs --data (labels vary with k_max)");
  }
  tokenizer::Vocab vocab = tokenizer::Vocab::load(a.base.vocab_path);
  auto dialogues = load_dialogues_or_die(a.base.data_path, std::cerr);

  std::vector<corpus::Dialogue> train_d, dev_d;
  if (!a.base.dev_data_path.empty()) {
    train_d = dialogues;
    dev_d = load_dialogues_or_die(a.base.dev_data_path, std::cerr);
  } else {
    const size_t dev_count = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(dialogues.size() * a.base.dev_frac)));
    if (dev_count >= dialogues.size()) {
      throw std::runtime_error("cli: dev split leaves no training data");
    }
    train_d.assign(dialogues.begin(), dialogues.end() - dev_count);
    dev_d.assign(dialogues.end() - dev_count, dialogues.end());
  }

  train::SweepSpec spec;
  spec.model_config.architecture = model::architecture_from_name(a.base.arch);
  spec.model_config.num_layers = a.base.layers;
  spec.model_config.d_model = a.base.d_model;
  spec.model_config.num_heads = a.base.heads;
  spec.model_config.d_ff = a.base.d_ff;
  spec.model_config.vocab_size = vocab.size();
  spec.model_config.max_positions = a.base.max_positions;
  spec.model_config.dropout_rate = a.base.dropout;
  spec.model_config.seed = g.seed;

  spec.train_config.loss_mode = train::loss_mode_from_name(a.base.loss);
  spec.train_config.learning_rate = a.base.lr;
  spec.train_config.batch_size = a.base.batch_size;
  spec.train_config.max_epochs = a.base.epochs;
  spec.train_config.patience = a.base.patience;
  spec.train_config.grad_clip_norm = a.base.grad_clip;
  spec.train_config.seed = g.seed;
  spec.train_config.max_steps = a.base.max_steps;

  keywords::StopwordSet stopword_storage;
  spec.label_config.extractor =
      extractor_from(g, a.base.max_ngram, 10, 0.8, 1, stopword_storage);
  spec.max_context_tokens = a.base.max_context;
  spec.lambdas = parse_list<double>(a.lambdas);
  spec.k_maxes = parse_list<int>(a.k_maxes);
  spec.out_dir = a.out_dir;
  spec.vocab_hash = io::file_hash(a.base.vocab_path);

  auto cells = train::ablation_sweep(spec, train_d, dev_d, vocab,
                                     [](const train::SweepCell& cell) {
                                       std::cout << "lambda " << cell.lambda
                                                 << " k_max " << cell.k_max
                                                 << " dev_total "
                                                 << cell.dev_total << "\n";
                                     });
  const std::string csv_path = a.out_dir + "/sweep.csv";
  io::write_file(csv_path, train::sweep_csv(cells));

  ordered_json cfg;
  cfg["command"] = "sweep";
  cfg["lambdas"] = a.lambdas;
  cfg["k_maxes"] = a.k_maxes;
  cfg["seed"] = g.seed;
  io::write_file(csv_path + ".meta.json", json_meta(cfg));
  std::cout << "wrote " << csv_path << "\n";
  return 0;
}

// ---- generate ----------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint_path;
  std::string vocab_path;
  std::string data_path;
  std::string out_path;
  int beam = 5;
  int max_len = 40;
  int min_len = 11;
  double length_penalty = 0.1;
  int max_context = 256;
  int64_t limit = 0;  // 0 = all
};

int cmd_generate(const GenerateArgs& a, const GlobalArgs& g) {
  model::Checkpoint ckpt = model::load_checkpoint(a.checkpoint_path);
  tokenizer::Vocab vocab = tokenizer::Vocab::load(a.vocab_path);
  if (io::file_hash(a.vocab_path) != ckpt.vocab_hash) {
    std::cerr << "warning: vocab hash differs from the checkpoint's\n";
  }
  auto dialogues = load_dialogues_or_die(a.data_path, std::cerr);

  generate::GenConfig gen;
  gen.beam_width = a.beam;
  gen.max_len = a.max_len;
  gen.min_len = a.min_len;
  gen.length_penalty = a.length_penalty;
  gen.banned_ids = generate::default_banned_ids();
  gen.validate();

  const int budget = std::min(
      a.max_context, ckpt.params.config().max_positions - a.max_len - 1);

  std::string out_lines;
  int64_t written = 0;
  for (const auto& d : dialogues) {
    for (size_t t = 1; t < d.turns.size(); ++t) {
      if (a.limit > 0 && written >= a.limit) break;
      std::vector<std::string> history(d.turns.begin(), d.turns.begin() + t);
      auto context_ids =
          corpus::build_context(d.condition, history, vocab, budget);
      auto ids = generate::beam_search(ckpt.params, context_ids, gen);
      if (!ids.empty() && ids.back() == gen.eos_id) ids.pop_back();

      ordered_json line;
      line["context"] = history;
      if (d.condition.empty()) {
        line["condition"] = nullptr;
      } else {
        line["condition"] = d.condition;
      }
      line["hypothesis"] = vocab.decode(ids);
      line["references"] = std::vector<std::string>{d.turns[t]};
      out_lines += line.dump() + "\n";
      ++written;
    }
    if (a.limit > 0 && written >= a.limit) break;
  }
  io::write_file(a.out_path, out_lines);

  ordered_json cfg;
  cfg["command"] = "generate";
  cfg["checkpoint"] = a.checkpoint_path;
  cfg["beam"] = a.beam;
  cfg["max_len"] = a.max_len;
  cfg["min_len"] = a.min_len;
  cfg["length_penalty"] = a.length_penalty;
  cfg["max_context_tokens"] = a.max_context;
  cfg["seed"] = g.seed;
  io::write_file(a.out_path + ".meta.json", json_meta(cfg));
  std::cout << "wrote " << written << " hypotheses -> " << a.out_path << "\n";
  return 0;
}

// ---- score -------------------------------------------------------------------

struct ScoreArgs {
  std::string checkpoint_path;
  std::string vocab_path;
  std::vector<std::string> context;
  std::vector<std::string> condition;
  std::string response;
  double lambda = -1.0;  // <0: checkpoint's training lambda
  int k_max = 8;
  int max_context = 256;
};

double lambda_from_checkpoint(const model::Checkpoint& ckpt) {
  try {
    nlohmann::json extra = nlohmann::json::parse(ckpt.extra_json);
    if (extra.contains("lambda")) return extra["lambda"].get<double>();
  } catch (...) {
  }
  return train::default_lambda(ckpt.params.config().architecture);
}

int cmd_score(const ScoreArgs& a, const GlobalArgs& g) {
  model::Checkpoint ckpt = model::load_checkpoint(a.checkpoint_path);
  tokenizer::Vocab vocab = tokenizer::Vocab::load(a.vocab_path);
  if (io::file_hash(a.vocab_path) != ckpt.vocab_hash) {
    std::cerr << "warning: vocab hash differs from the checkpoint's\n";
  }
  const double lambda = a.lambda >= 0.0 ? a.lambda : lambda_from_checkpoint(ckpt);
  corpus::LabelConfig label;
  label.k_max = a.k_max;
  const double score =
      evalmetrics::score_boklm(ckpt.params, vocab, a.context, a.condition,
                               a.response, lambda, label, a.max_context);
  std::printf("bok-lm score: %.6f (lambda %g; lower is better)\n", score,
              lambda);
  return 0;
}

// ---- eval --------------------------------------------------------------------

int cmd_eval(const std::string& instances_path, const std::string& out_path,
             const GlobalArgs& g) {
  auto instances = evalmetrics::load_instances(instances_path);
  std::vector<std::string> hyps;
  for (const auto& inst : instances) hyps.push_back(inst.hypothesis);

  ordered_json report;
  ordered_json bleu;
  for (int n = 1; n <= 4; ++n) {
    bleu["bleu-" + std::to_string(n)] = evalmetrics::bleu_n(instances, n);
  }
  report["bleu"] = bleu;
  ordered_json nist;
  nist["nist-2"] = evalmetrics::nist_n(instances, 2);
  nist["nist-4"] = evalmetrics::nist_n(instances, 4);
  report["nist"] = nist;
  ordered_json distinct;
  for (int n = 1; n <= 2; ++n) {
    const std::string key = "div-" + std::to_string(n);
    try {
      distinct[key] = evalmetrics::distinct_n(hyps, n);
    } catch (const std::exception& e) {
      std::cerr << "warning: " << e.what() << "\n";
      distinct[key] = nullptr;
    }
  }
  report["distinct"] = distinct;
  evalmetrics::EntropyReport er = evalmetrics::entropy_n(hyps);
  ordered_json entropy;
  for (int n = 1; n <= 4; ++n) {
    entropy["h" + std::to_string(n)] = er.h[n - 1];
    if (er.empty_order[n - 1]) {
      std::cerr << "warning: no order-" << n << " n-grams; entropy set to 0\n";
    }
  }
  entropy["mean"] = er.mean;
  report["entropy"] = entropy;
  // the summary "Entropy" number is H4
  report["entropy_summary"] = er.h[3];
  report["n"] = instances.size();
  ordered_json cfg;
  cfg["command"] = "eval";
  cfg["instances"] = instances_path;
  cfg["seed"] = g.seed;
  report["config"] = cfg;

  const std::string text = report.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    io::write_file(out_path, text);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

// ---- correlate -----------------------------------------------------------------

struct CorrelateArgs {
  std::string judgments_path;
  std::string checkpoint_path;
  std::string vocab_path;
  std::string out_path;
  double lambda = -1.0;
  int k_max = 8;
  int max_context = 256;
};

int cmd_correlate(const CorrelateArgs& a, const GlobalArgs& g) {
  model::Checkpoint ckpt = model::load_checkpoint(a.checkpoint_path);
  tokenizer::Vocab vocab = tokenizer::Vocab::load(a.vocab_path);
  auto judgments = evalmetrics::load_judgments(a.judgments_path);
  const double lambda = a.lambda >= 0.0 ? a.lambda : lambda_from_checkpoint(ckpt);
  corpus::LabelConfig label;
  label.k_max = a.k_max;
  evalmetrics::CorrelationReport r = evalmetrics::correlate_metric(
      judgments, ckpt.params, vocab, lambda, label, a.max_context);

  ordered_json report;
  report["pearson"] = r.pearson.r;
  report["p_pearson"] = r.pearson.p_value;
  report["spearman"] = r.spearman.r;
  report["p_spearman"] = r.spearman.p_value;
  report["n"] = r.n;
  report["note"] =
      "BoK-LM is a loss (lower is better); expect a negative correlation "
      "against quality-positive human scores";
  ordered_json cfg;
  cfg["command"] = "correlate";
  cfg["judgments"] = a.judgments_path;
  cfg["lambda"] = lambda;
  cfg["seed"] = g.seed;
  report["config"] = cfg;

  const std::string text = report.dump(2) + "\n";
  if (a.out_path.empty()) {
    std::cout << text;
  } else {
    io::write_file(a.out_path, text);
    std::cout << "wrote " << a.out_path << "\n";
  }
  return 0;
}

// ---- grad-check ----------------------------------------------------------------

int cmd_grad_check(int probes, double epsilon) {
  using namespace boklm::tensor;
  std::mt19937_64 rng(10);
  bool ok = true;

  auto report_line = [&](const std::string& name, double err, double tol) {
    const bool pass = err < tol;
    ok = ok && pass;
    std::printf("%-28s max rel err %.3e (tol %.0e) %s\n", name.c_str(), err,
                tol, pass ? "ok" : "FAIL");
  };

  auto rand_t = [&](std::vector<int> shape) {
    return Tensor::randn(std::move(shape), rng, 1.0);
  };
  Tensor w23 = rand_t({2, 3});
  auto wsum = [&](const Tensor& out) { return sum(mul(out, w23)); };

  report_line("add",
              grad_check([&](const auto& xs) { return wsum(add(xs[0], xs[1])); },
                         {rand_t({2, 3}), rand_t({2, 3})}, epsilon)
                  .worst,
              1e-3);
  report_line(
      "matmul",
      grad_check(
          [&](const auto& xs) { return wsum(matmul(xs[0], xs[1])); },
          {rand_t({2, 4}), rand_t({4, 3})}, epsilon)
          .worst,
      1e-3);
  report_line(
      "softmax-cross-entropy",
      grad_check(
          [](const auto& xs) {
            Tensor logp = log_softmax(xs[0], 1);
            return mul_scalar(mean(select_index(logp, {0, 1}, {2, 0})), -1.0);
          },
          {rand_t({2, 5})}, epsilon)
          .worst,
      1e-4);
  report_line(
      "layer_norm",
      grad_check(
          [&](const auto& xs) {
            return wsum(layer_norm(xs[0], xs[1], xs[2], 1e-5));
          },
          {rand_t({2, 3}), rand_t({3}), rand_t({3})}, epsilon)
          .worst,
      1e-3);

  for (auto arch : {model::Architecture::decoder_only,
                    model::Architecture::encoder_decoder}) {
    model::ModelConfig mc;
    mc.architecture = arch;
    mc.num_layers = 2;
    mc.d_model = 16;
    mc.num_heads = 2;
    mc.d_ff = 32;
    mc.vocab_size = 17;
    mc.max_positions = 32;
    mc.seed = 10;
    model::ModelParams params = model::init_model(mc);

    corpus::TrainingExample ex;
    ex.context_ids = {7, 8, 9, 10};
    ex.response_ids = {11, 12, tokenizer::Specials::eos};
    ex.bok_label_ids = {11, 12};

    std::vector<Tensor> inputs;
    for (const auto& [name, t] : params.named()) inputs.push_back(t);
    // the inputs share storage with `params`, so the program may read
    // them through the model
    auto program = [&](const std::vector<Tensor>&) {
      model::ForwardOutput out = model::forward(params, ex);
      auto [nll, count] = train::lm_nll_sum(out.lm_logits, ex.response_ids);
      Tensor lm = mul_scalar(nll, 1.0 / count);
      Tensor bok = train::bok_loss(out.bok_probs, ex.bok_label_ids);
      return add(lm, mul_scalar(bok, 0.3));
    };
    report_line(std::string("model ") + model::architecture_name(arch),
                grad_check_sampled(program, inputs, epsilon, probes, rng).worst,
                1e-3);
  }

  if (!ok) throw std::runtime_error("cli: gradient check failed");
  return 0;
}

}  // namespace

int run_chat(const ChatArgs& args, std::istream& in, std::ostream& out) {
  model::Checkpoint ckpt = model::load_checkpoint(args.checkpoint_path);
  tokenizer::Vocab vocab = tokenizer::Vocab::load(args.vocab_path);

  generate::GenConfig gen;
  gen.beam_width = args.beam_width;
  gen.max_len = args.max_len;
  gen.min_len = args.min_len;
  gen.length_penalty = args.length_penalty;
  gen.banned_ids = generate::default_banned_ids();
  gen.validate();
  const int budget =
      std::min(args.max_context_tokens,
               ckpt.params.config().max_positions - args.max_len - 1);

  generate::ChatSession session;
  std::string transcript;
  auto log_turn = [&](const std::string& role, const std::string& text,
                      const std::vector<model::TokenProb>& topk) {
    ordered_json line;
    line["role"] = role;
    line["text"] = text;
    ordered_json pairs = ordered_json::array();
    for (const auto& t : topk) pairs.push_back({t.token, t.prob});
    line["topk"] = pairs;
    transcript += line.dump() + "\n";
  };

  out << "chat ready; /persona <line>, /reset, /quit\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line == "/quit") break;
    if (line == "/reset") {
      session = generate::ChatSession{};
      out << "(session reset)\n";
      continue;
    }
    if (line.rfind("/persona ", 0) == 0) {
      session.condition.push_back(line.substr(9));
      out << "(persona line added)\n";
      continue;
    }
    if (line.empty()) continue;

    log_turn("user", line, {});
    generate::ChatTurn turn = generate::chat_step(
        session, line, ckpt.params, vocab, gen, args.top_k, budget);
    out << "model> " << turn.response << "\n";
    out << "keywords:";
    for (const auto& t : turn.topk) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), " %s(%.3f)", t.token.c_str(), t.prob);
      out << buf;
    }
    out << "\n";
    log_turn("model", turn.response, turn.topk);
  }
  if (!args.transcript_path.empty()) {
    io::write_file(args.transcript_path, transcript);
  }
  return 0;
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Bag-of-Keywords dialogue modeling toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file");
  app.fallthrough();

  GlobalArgs global;
  app.add_option("--seed", global.seed, "global RNG seed")->capture_default_str();
  app.add_option("--precision", global.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  app.add_option("--stopwords", global.stopwords_path,
                 "stopword list file (one word per line, # comments)");

  // tokenizer-train
  TokenizerTrainArgs tok;
  auto* tok_cmd = app.add_subcommand("tokenizer-train",
                                     "train the subword vocabulary");
  tok_cmd->add_option("--data", tok.data_path, "dialogue JSONL")->required();
  tok_cmd->add_option("--vocab-size", tok.vocab_size, "target vocabulary size")
      ->capture_default_str();
  tok_cmd->add_option("--out", tok.out_path, "output vocab JSON")->required();
  tok_cmd->add_flag("--include-conditions,!--no-include-conditions",
                    tok.include_conditions, "train on persona lines too");

  // stats
  std::string stats_data;
  auto* stats_cmd = app.add_subcommand("stats", "corpus statistics table");
  stats_cmd->add_option("--data", stats_data, "dialogue JSONL")->required();

  // prepare
  PrepareArgs prep;
  auto* prep_cmd =
      app.add_subcommand("prepare", "build the training-example cache");
  prep_cmd->add_option("--data", prep.data_path, "dialogue JSONL")->required();
  prep_cmd->add_option("--vocab", prep.vocab_path, "vocab JSON")->required();
  prep_cmd->add_option("--out", prep.out_path, "example cache JSONL")->required();
  prep_cmd->add_option("--report", prep.report_path, "label coverage report");
  prep_cmd->add_option("--kmax", prep.k_max, "max keyword-label tokens")
      ->capture_default_str();
  prep_cmd->add_option("--max-context", prep.max_context, "context token budget")
      ->capture_default_str();
  prep_cmd->add_option("--max-ngram", prep.max_ngram, "label keyword n-gram cap")
      ->capture_default_str();
  prep_cmd->add_option("--top-n", prep.top_n, "keywords kept per utterance")
      ->capture_default_str();
  prep_cmd->add_option("--dedup-threshold", prep.dedup_threshold,
                       "surface-similarity dedup threshold")
      ->capture_default_str();
  prep_cmd->add_option("--window", prep.window, "co-occurrence window")
      ->capture_default_str();
  prep_cmd->add_flag("--dedup-labels", prep.dedup_labels,
                     "deduplicate label token ids");

  // train
  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "fit a dialogue model");
  train_cmd->add_option("--data", tr.data_path, "dialogue JSONL");
  train_cmd->add_option("--cache", tr.cache_path, "prepared example cache");
  train_cmd->add_option("--dev-data", tr.dev_data_path, "dev dialogue JSONL");
  train_cmd->add_option("--dev-cache", tr.dev_cache_path, "dev example cache");
  train_cmd->add_option("--dev-frac", tr.dev_frac, "tail fraction for dev")
      ->capture_default_str();
  train_cmd->add_option("--vocab", tr.vocab_path, "vocab JSON")->required();
  train_cmd->add_option("--out", tr.out_path, "checkpoint path")->required();
  train_cmd->add_option("--log", tr.log_path, "epoch log JSONL");
  train_cmd->add_option("--arch", tr.arch, "decoder-only | encoder-decoder")
      ->check(CLI::IsMember({"decoder-only", "encoder-decoder"}))
      ->capture_default_str();
  train_cmd->add_option("--loss", tr.loss, "lm | bok-lm | bow-lm")
      ->check(CLI::IsMember({"lm", "bok-lm", "bow-lm"}))
      ->capture_default_str();
  train_cmd->add_option("--lambda", tr.lambda,
                        "aux loss weight (default: 0.3 decoder-only, 0.1 "
                        "encoder-decoder)");
  train_cmd->add_option("--kmax", tr.k_max, "max keyword-label tokens")
      ->capture_default_str();
  train_cmd->add_option("--max-context", tr.max_context, "context token budget")
      ->capture_default_str();
  train_cmd->add_option("--max-ngram", tr.max_ngram, "label keyword n-gram cap")
      ->capture_default_str();
  train_cmd->add_option("--layers", tr.layers, "layers per stack")
      ->capture_default_str();
  train_cmd->add_option("--d-model", tr.d_model, "model width")
      ->capture_default_str();
  train_cmd->add_option("--heads", tr.heads, "attention heads")
      ->capture_default_str();
  train_cmd->add_option("--d-ff", tr.d_ff, "feed-forward width")
      ->capture_default_str();
  train_cmd->add_option("--max-positions", tr.max_positions, "position budget")
      ->capture_default_str();
  train_cmd->add_option("--dropout", tr.dropout, "dropout rate")
      ->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "learning rate (paper preset 5e-5)")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size, "batch size")
      ->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "max epochs")
      ->capture_default_str();
  train_cmd->add_option("--patience", tr.patience, "early stopping patience")
      ->capture_default_str();
  train_cmd->add_option("--grad-clip", tr.grad_clip, "global grad norm clip")
      ->capture_default_str();
  train_cmd->add_option("--max-steps", tr.max_steps, "optimizer step cap");

  // sweep
  SweepArgs sweep;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "lambda x k_max ablation harness");
  sweep_cmd->add_option("--data", sweep.base.data_path, "dialogue JSONL")
      ->required();
  sweep_cmd->add_option("--dev-data", sweep.base.dev_data_path,
                        "dev dialogue JSONL");
  sweep_cmd->add_option("--dev-frac", sweep.base.dev_frac,
                        "tail fraction for dev")
      ->capture_default_str();
  sweep_cmd->add_option("--vocab", sweep.base.vocab_path, "vocab JSON")
      ->required();
  sweep_cmd->add_option("--out-dir", sweep.out_dir, "output directory")
      ->required();
  sweep_cmd->add_option("--lambdas", sweep.lambdas, "comma list of lambdas")
      ->capture_default_str();
  sweep_cmd->add_option("--kmaxes", sweep.k_maxes, "comma list of k_max values")
      ->capture_default_str();
  sweep_cmd->add_option("--arch", sweep.base.arch,
                        "decoder-only | encoder-decoder")
      ->check(CLI::IsMember({"decoder-only", "encoder-decoder"}))
      ->capture_default_str();
  sweep_cmd->add_option("--loss", sweep.base.loss, "bok-lm | bow-lm")
      ->capture_default_str();
  sweep_cmd->add_option("--layers", sweep.base.layers, "layers per stack")
      ->capture_default_str();
  sweep_cmd->add_option("--d-model", sweep.base.d_model, "model width")
      ->capture_default_str();
  sweep_cmd->add_option("--heads", sweep.base.heads, "attention heads")
      ->capture_default_str();
  sweep_cmd->add_option("--d-ff", sweep.base.d_ff, "feed-forward width")
      ->capture_default_str();
  sweep_cmd->add_option("--max-positions", sweep.base.max_positions,
                        "position budget")
      ->capture_default_str();
  sweep_cmd->add_option("--max-context", sweep.base.max_context,
                        "context token budget")
      ->capture_default_str();
  sweep_cmd->add_option("--lr", sweep.base.lr, "learning rate")
      ->capture_default_str();
  sweep_cmd->add_option("--batch-size", sweep.base.batch_size, "batch size")
      ->capture_default_str();
  sweep_cmd->add_option("--epochs", sweep.base.epochs, "max epochs")
      ->capture_default_str();
  sweep_cmd->add_option("--patience", sweep.base.patience, "patience")
      ->capture_default_str();
  sweep_cmd->add_option("--max-steps", sweep.base.max_steps, "step cap");

  // generate
  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate",
                                     "beam-search responses for a test set");
  gen_cmd->add_option("--ckpt", gen.checkpoint_path, "checkpoint")->required();
  gen_cmd->add_option("--vocab", gen.vocab_path, "vocab JSON")->required();
  gen_cmd->add_option("--data", gen.data_path, "dialogue JSONL")->required();
  gen_cmd->add_option("--out", gen.out_path, "hypotheses JSONL")->required();
  gen_cmd->add_option("--beam", gen.beam, "beam width (paper preset 5)")
      ->capture_default_str();
  gen_cmd->add_option("--max-len", gen.max_len, "max length (preset 40)")
      ->capture_default_str();
  gen_cmd->add_option("--min-len", gen.min_len, "min length (preset 11)")
      ->capture_default_str();
  gen_cmd->add_option("--length-penalty", gen.length_penalty,
                      "length penalty (preset 0.1)")
      ->capture_default_str();
  gen_cmd->add_option("--max-context", gen.max_context, "context token budget")
      ->capture_default_str();
  gen_cmd->add_option("--limit", gen.limit, "cap the number of hypotheses");

  // chat
  ChatArgs chat;
  auto* chat_cmd = app.add_subcommand("chat", "interactive REPL");
  chat_cmd->add_option("--ckpt", chat.checkpoint_path, "checkpoint")->required();
  chat_cmd->add_option("--vocab", chat.vocab_path, "vocab JSON")->required();
  chat_cmd->add_option("--topk", chat.top_k, "keyword panel size")
      ->capture_default_str();
  chat_cmd->add_option("--beam", chat.beam_width, "beam width")
      ->capture_default_str();
  chat_cmd->add_option("--max-len", chat.max_len, "max length")
      ->capture_default_str();
  chat_cmd->add_option("--min-len", chat.min_len, "min length")
      ->capture_default_str();
  chat_cmd->add_option("--length-penalty", chat.length_penalty, "length penalty")
      ->capture_default_str();
  chat_cmd->add_option("--max-context", chat.max_context_tokens,
                       "context token budget")
      ->capture_default_str();
  chat_cmd->add_option("--transcript", chat.transcript_path,
                       "transcript JSONL path");

  // score
  ScoreArgs score;
  auto* score_cmd =
      app.add_subcommand("score", "reference-free BoK-LM score of a response");
  score_cmd->add_option("--ckpt", score.checkpoint_path, "checkpoint")
      ->required();
  score_cmd->add_option("--vocab", score.vocab_path, "vocab JSON")->required();
  score_cmd->add_option("--context", score.context,
                        "context utterance (repeatable, oldest first)");
  score_cmd->add_option("--condition", score.condition,
                        "condition/persona line (repeatable)");
  score_cmd->add_option("--response", score.response, "candidate response")
      ->required();
  score_cmd->add_option("--lambda", score.lambda,
                        "aux weight (default: the checkpoint's)");
  score_cmd->add_option("--kmax", score.k_max, "max keyword-label tokens")
      ->capture_default_str();
  score_cmd->add_option("--max-context", score.max_context,
                        "context token budget")
      ->capture_default_str();

  // eval
  std::string eval_instances, eval_out;
  auto* eval_cmd =
      app.add_subcommand("eval", "referenced metrics over an instance file");
  eval_cmd->add_option("--instances", eval_instances, "EvalInstance JSONL")
      ->required();
  eval_cmd->add_option("--out", eval_out, "metric report JSON");

  // correlate
  CorrelateArgs corr;
  auto* corr_cmd = app.add_subcommand(
      "correlate", "correlate BoK-LM scores with human judgments");
  corr_cmd->add_option("--judgments", corr.judgments_path, "judgment JSONL")
      ->required();
  corr_cmd->add_option("--ckpt", corr.checkpoint_path, "checkpoint")->required();
  corr_cmd->add_option("--vocab", corr.vocab_path, "vocab JSON")->required();
  corr_cmd->add_option("--out", corr.out_path, "report JSON");
  corr_cmd->add_option("--lambda", corr.lambda,
                       "aux weight (default: the checkpoint's)");
  corr_cmd->add_option("--kmax", corr.k_max, "max keyword-label tokens")
      ->capture_default_str();
  corr_cmd->add_option("--max-context", corr.max_context,
                       "context token budget")
      ->capture_default_str();

  // grad-check
  int gc_probes = 100;
  double gc_epsilon = 1e-4;
  auto* gc_cmd =
      app.add_subcommand("grad-check", "finite-difference gradient audit");
  gc_cmd->add_option("--probes", gc_probes, "random probes per model")
      ->capture_default_str();
  gc_cmd->add_option("--epsilon", gc_epsilon, "central-difference step")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  apply_globals(global);
  try {
    if (*tok_cmd) return cmd_tokenizer_train(tok, global);
    if (*stats_cmd) return cmd_stats(stats_data);
    if (*prep_cmd) return cmd_prepare(prep, global);
    if (*train_cmd) return cmd_train(tr, global);
    if (*sweep_cmd) return cmd_sweep(sweep, global);
    if (*gen_cmd) return cmd_generate(gen, global);
    if (*chat_cmd) return run_chat(chat, std::cin, std::cout);
    if (*score_cmd) return cmd_score(score, global);
    if (*eval_cmd) return cmd_eval(eval_instances, eval_out, global);
    if (*corr_cmd) return cmd_correlate(corr, global);
    if (*gc_cmd) return cmd_grad_check(gc_probes, gc_epsilon);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("boklm");
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace boklm::cli
