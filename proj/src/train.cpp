#include "boklm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace boklm::train {

namespace {

using corpus::TrainingExample;
using model::ModelParams;
using tensor::Tensor;
using tokenizer::Specials;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("train: " + msg);
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double round_to_mode(double v) {
  if (tensor::default_precision() == tensor::Precision::f32) {
    return static_cast<double>(static_cast<float>(v));
  }
  return v;
}

}  // namespace

std::string loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::lm: return "lm";
    case LossMode::bok_lm: return "bok-lm";
    case LossMode::bow_lm: return "bow-lm";
  }
  return "lm";
}

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "lm") return LossMode::lm;
  if (name == "bok-lm") return LossMode::bok_lm;
  if (name == "bow-lm") return LossMode::bow_lm;
  fail("unknown loss mode '" + name + "'");
}

double default_lambda(model::Architecture arch) {
  return arch == model::Architecture::decoder_only ? 0.3 : 0.1;
}

std::pair<Tensor, int> lm_nll_sum(const Tensor& lm_logits,
                                  const std::vector<int>& response_ids) {
  if (!lm_logits.defined() ||
      lm_logits.rows() != static_cast<int>(response_ids.size())) {
    fail("lm_loss: logits rows (" +
         std::to_string(lm_logits.defined() ? lm_logits.rows() : 0) +
         ") do not match response length (" +
         std::to_string(response_ids.size()) + ")");
  }
  std::vector<int> rows, cols;
  for (size_t i = 0; i < response_ids.size(); ++i) {
    if (response_ids[i] == Specials::pad) continue;
    rows.push_back(static_cast<int>(i));
    cols.push_back(response_ids[i]);
  }
  if (rows.empty()) fail("lm_loss: response has no non-pad tokens");
  Tensor logp = tensor::log_softmax(lm_logits, 1);
  Tensor picked = tensor::select_index(logp, rows, cols);
  return {tensor::mul_scalar(tensor::sum(picked), -1.0),
          static_cast<int>(rows.size())};
}

Tensor lm_loss(const Tensor& lm_logits, const std::vector<int>& response_ids) {
  auto [nll, count] = lm_nll_sum(lm_logits, response_ids);
  return tensor::mul_scalar(nll, 1.0 / count);
}

Tensor bok_loss(const Tensor& bok_probs, const std::vector<int>& bok_label_ids) {
  if (bok_label_ids.empty()) fail("bok_loss: empty label list");
  std::vector<int> rows(bok_label_ids.size(), 0);
  Tensor logp = tensor::log(bok_probs);
  Tensor picked = tensor::select_index(logp, rows, bok_label_ids);
  return tensor::mul_scalar(tensor::sum(picked), -1.0);
}

Tensor bow_loss(const Tensor& bok_probs, const std::vector<int>& response_ids) {
  std::vector<int> targets;
  for (int id : response_ids) {
    if (id >= Specials::count) targets.push_back(id);
  }
  if (targets.empty()) fail("bow_loss: response has no content tokens");
  return bok_loss(bok_probs, targets);
}

double combined_loss(double lm, double aux, LossMode mode, double lambda) {
  if (lambda < 0.0) fail("combined_loss: negative lambda");
  if (mode == LossMode::lm) return lm;
  return lm + lambda * aux;
}

void adamw_step(ModelParams& params, AdamWState& state,
                const TrainConfig& config) {
  // tensors with a live, nonzero gradient (handles share storage)
  std::vector<std::pair<std::string, Tensor>> active;
  for (const auto& [name, t] : params.named()) {
    if (!t.has_grad()) continue;
    Tensor handle = t;
    bool nonzero = false;
    for (double g : handle.grad()) {
      if (g != 0.0) {
        nonzero = true;
        break;
      }
    }
    if (nonzero) active.emplace_back(name, handle);
  }
  if (active.empty()) return;

  double norm_sq = 0.0;
  for (auto& [name, t] : active) {
    for (double g : t.grad()) norm_sq += g * g;
  }
  const double norm = std::sqrt(norm_sq);
  double scale = 1.0;
  if (config.grad_clip_norm > 0.0 && norm > config.grad_clip_norm) {
    scale = config.grad_clip_norm / norm;
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, state.step);
  const double bc2 = 1.0 - std::pow(config.beta2, state.step);
  for (auto& [name, t] : active) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(t.size(), 0.0);
    if (v.empty()) v.assign(t.size(), 0.0);
    auto& data = t.data();
    const auto& grad = t.grad();
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i] * scale;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      const double update =
          config.learning_rate *
          (m_hat / (std::sqrt(v_hat) + config.adam_eps) +
           config.weight_decay * data[i]);
      data[i] = round_to_mode(data[i] - update);
    }
  }
}

namespace {

struct BatchLoss {
  Tensor graph_total;  // scalar, backward target
  LossBreakdown values;
  int tokens = 0;
};

// Builds the batch loss graph. The auxiliary term joins the graph only
// when the mode uses it and lambda is nonzero, so a lambda of zero leaves
// the BoK head and the backbone gradients exactly at their pure-LM values.
BatchLoss batch_loss(const ModelParams& params,
                     const std::vector<TrainingExample>& batch,
                     const TrainConfig& config, int64_t step_index) {
  BatchLoss out;
  const bool use_aux = config.loss_mode != LossMode::lm && config.lambda != 0.0;

  Tensor nll_total;
  Tensor aux_total;
  double aux_value_sum = 0.0;
  int tokens = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    model::ForwardOptions opts;
    opts.train_mode = true;
    opts.dropout_seed = splitmix64(config.seed ^
                                   splitmix64(static_cast<uint64_t>(step_index)) ^
                                   (0x51'7c'c1'b7'27'22'0a'95ull * (i + 1)));
    model::ForwardOutput fwd = model::forward(params, batch[i], opts);

    auto [nll, count] = lm_nll_sum(fwd.lm_logits, batch[i].response_ids);
    tokens += count;
    nll_total = nll_total.defined() ? tensor::add(nll_total, nll) : nll;

    if (config.loss_mode == LossMode::bok_lm) {
      if (use_aux) {
        Tensor aux = bok_loss(fwd.bok_probs, batch[i].bok_label_ids);
        aux_total = aux_total.defined() ? tensor::add(aux_total, aux) : aux;
        aux_value_sum += aux.item();
      } else {
        // value for the log only; stays off the tape's gradient path
        double s = 0.0;
        for (int id : batch[i].bok_label_ids) {
          s -= std::log(fwd.bok_probs.at(0, id));
        }
        aux_value_sum += s;
      }
    } else if (config.loss_mode == LossMode::bow_lm) {
      if (use_aux) {
        Tensor aux = bow_loss(fwd.bok_probs, batch[i].response_ids);
        aux_total = aux_total.defined() ? tensor::add(aux_total, aux) : aux;
        aux_value_sum += aux.item();
      } else {
        double s = 0.0;
        for (int id : batch[i].response_ids) {
          if (id >= Specials::count) s -= std::log(fwd.bok_probs.at(0, id));
        }
        aux_value_sum += s;
      }
    }
  }

  Tensor lm_mean = tensor::mul_scalar(nll_total, 1.0 / tokens);
  out.values.lm = lm_mean.item();
  out.values.lambda = config.loss_mode == LossMode::lm ? 0.0 : config.lambda;
  const double aux_mean = aux_value_sum / static_cast<double>(batch.size());
  if (config.loss_mode == LossMode::bok_lm) out.values.bok = aux_mean;
  if (config.loss_mode == LossMode::bow_lm) out.values.bow = aux_mean;

  if (use_aux) {
    Tensor aux_mean_t =
        tensor::mul_scalar(aux_total, 1.0 / static_cast<double>(batch.size()));
    out.graph_total =
        tensor::add(lm_mean, tensor::mul_scalar(aux_mean_t, config.lambda));
  } else {
    out.graph_total = lm_mean;
  }
  out.values.total = combined_loss(
      out.values.lm,
      config.loss_mode == LossMode::bow_lm ? out.values.bow : out.values.bok,
      config.loss_mode, out.values.lambda);
  out.tokens = tokens;
  return out;
}

}  // namespace

StepResult train_step(ModelParams& params,
                      const std::vector<TrainingExample>& batch,
                      AdamWState& state, const TrainConfig& config,
                      int64_t step_index) {
  if (batch.empty()) fail("train_step: empty batch");
  if (config.lambda < 0.0) fail("negative lambda");

  params.set_requires_grad(true);
  params.zero_grad();

  StepResult result;
  {
    tensor::Tape tape;
    BatchLoss loss = batch_loss(params, batch, config, step_index);
    if (!std::isfinite(loss.graph_total.item())) {
      fail("non-finite loss at step " + std::to_string(step_index) +
           " (lm=" + std::to_string(loss.values.lm) +
           ", bok=" + std::to_string(loss.values.bok) +
           ", bow=" + std::to_string(loss.values.bow) + ")");
    }
    tape.backward(loss.graph_total);
    result.loss = loss.values;
    result.response_tokens = loss.tokens;
    result.examples = static_cast<int>(batch.size());
  }
  adamw_step(params, state, config);
  params.set_requires_grad(false);
  return result;
}

LossBreakdown evaluate(const ModelParams& params,
                       const std::vector<TrainingExample>& examples,
                       LossMode mode, double lambda) {
  if (examples.empty()) fail("evaluate: empty split");
  if (lambda < 0.0) fail("negative lambda");
  double nll_sum = 0.0, aux_sum = 0.0;
  int64_t tokens = 0;
  for (const auto& ex : examples) {
    model::ForwardOutput fwd = model::forward(params, ex);
    const auto& logits = fwd.lm_logits;
    const int v = logits.cols();
    for (size_t i = 0; i < ex.response_ids.size(); ++i) {
      if (ex.response_ids[i] == Specials::pad) continue;
      // log-softmax of the target entry, straight summation
      double max_v = logits.at(static_cast<int>(i), 0);
      for (int c = 1; c < v; ++c) {
        max_v = std::max(max_v, logits.at(static_cast<int>(i), c));
      }
      double denom = 0.0;
      for (int c = 0; c < v; ++c) {
        denom += std::exp(logits.at(static_cast<int>(i), c) - max_v);
      }
      nll_sum -= logits.at(static_cast<int>(i), ex.response_ids[i]) - max_v -
                 std::log(denom);
      ++tokens;
    }
    if (mode == LossMode::bok_lm) {
      for (int id : ex.bok_label_ids) aux_sum -= std::log(fwd.bok_probs.at(0, id));
    } else if (mode == LossMode::bow_lm) {
      for (int id : ex.response_ids) {
        if (id >= Specials::count) aux_sum -= std::log(fwd.bok_probs.at(0, id));
      }
    }
  }
  LossBreakdown out;
  out.lm = nll_sum / static_cast<double>(tokens);
  out.lambda = mode == LossMode::lm ? 0.0 : lambda;
  const double aux_mean = aux_sum / static_cast<double>(examples.size());
  if (mode == LossMode::bok_lm) out.bok = aux_mean;
  if (mode == LossMode::bow_lm) out.bow = aux_mean;
  out.total = combined_loss(out.lm, aux_mean, mode, out.lambda);
  return out;
}

double token_accuracy(const ModelParams& params,
                      const std::vector<TrainingExample>& examples) {
  int64_t correct = 0, total = 0;
  for (const auto& ex : examples) {
    model::ForwardOutput fwd = model::forward(params, ex);
    const int v = fwd.lm_logits.cols();
    for (size_t i = 0; i < ex.response_ids.size(); ++i) {
      if (ex.response_ids[i] == Specials::pad) continue;
      int best = 0;
      for (int c = 1; c < v; ++c) {
        if (fwd.lm_logits.at(static_cast<int>(i), c) >
            fwd.lm_logits.at(static_cast<int>(i), best)) {
          best = c;
        }
      }
      correct += best == ex.response_ids[i] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

std::string EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_lm"] = train_lm;
  j["train_bok"] = train_bok;
  j["train_total"] = train_total;
  j["dev_total"] = dev_total;
  j["lambda"] = lambda;
  j["elapsed_s"] = elapsed_s;
  return j.dump();
}

FitResult fit(ModelParams& params,
              const std::vector<TrainingExample>& train_examples,
              const std::vector<TrainingExample>& dev_examples,
              const TrainConfig& config,
              const std::function<void(const EpochLog&)>& on_epoch) {
  if (train_examples.empty() || dev_examples.empty()) {
    fail("fit: empty train or dev split");
  }
  if (config.patience < 1) fail("fit: patience must be >= 1");
  if (config.lambda < 0.0) fail("negative lambda");

  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(config.seed);
  std::vector<size_t> order(train_examples.size());
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  result.best_dev = std::numeric_limits<double>::infinity();
  AdamWState state;
  int64_t step_index = 0;
  int non_improving = 0;
  bool step_cap_hit = false;

  for (int epoch = 1; epoch <= config.max_epochs && !step_cap_hit; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double lm_weighted = 0.0, aux_weighted = 0.0, total_weighted = 0.0;
    int64_t tokens = 0, examples = 0;

    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      if (config.max_steps > 0 && step_index >= config.max_steps) {
        step_cap_hit = true;
        break;
      }
      std::vector<TrainingExample> batch;
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      for (size_t i = start; i < end; ++i) {
        batch.push_back(train_examples[order[i]]);
      }
      StepResult step = train_step(params, batch, state, config, step_index);
      ++step_index;
      lm_weighted += step.loss.lm * step.response_tokens;
      aux_weighted += (config.loss_mode == LossMode::bow_lm ? step.loss.bow
                                                            : step.loss.bok) *
                      step.examples;
      total_weighted += step.loss.total * step.examples;
      tokens += step.response_tokens;
      examples += step.examples;
    }
    if (examples == 0) break;

    LossBreakdown dev =
        evaluate(params, dev_examples, config.loss_mode, config.lambda);
    EpochLog log;
    log.epoch = epoch;
    log.train_lm = lm_weighted / static_cast<double>(tokens);
    log.train_bok = aux_weighted / static_cast<double>(examples);
    log.train_total = total_weighted / static_cast<double>(examples);
    log.dev_total = dev.total;
    log.lambda = config.loss_mode == LossMode::lm ? 0.0 : config.lambda;
    log.elapsed_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (dev.total < result.best_dev) {
      result.best_dev = dev.total;
      result.best_epoch = epoch;
      result.best_params = params.clone();
      non_improving = 0;
    } else {
      ++non_improving;
      if (non_improving >= config.patience) break;
    }
  }
  if (result.best_params.named().empty()) {
    // no epoch completed; fall back to the current params
    result.best_params = params.clone();
  }
  result.steps_run = step_index;
  return result;
}

std::vector<SweepCell> ablation_sweep(
    const SweepSpec& spec, const std::vector<corpus::Dialogue>& train_dialogues,
    const std::vector<corpus::Dialogue>& dev_dialogues,
    const tokenizer::Vocab& vocab,
    const std::function<void(const SweepCell&)>& on_cell) {
  if (spec.lambdas.empty() || spec.k_maxes.empty()) fail("sweep: empty grid");
  std::vector<SweepCell> cells;
  for (int k_max : spec.k_maxes) {
    corpus::LabelConfig label = spec.label_config;
    label.k_max = k_max;
    auto train_ex = corpus::build_all_examples(train_dialogues, vocab, label,
                                               spec.max_context_tokens);
    auto dev_ex = corpus::build_all_examples(dev_dialogues, vocab, label,
                                             spec.max_context_tokens);
    for (double lambda : spec.lambdas) {
      TrainConfig cfg = spec.train_config;
      cfg.lambda = lambda;
      model::ModelParams params = model::init_model(spec.model_config);
      FitResult fitted = fit(params, train_ex, dev_ex, cfg);
      LossBreakdown dev = evaluate(fitted.best_params, dev_ex, cfg.loss_mode,
                                   cfg.lambda);
      SweepCell cell;
      cell.lambda = lambda;
      cell.k_max = k_max;
      cell.dev_lm = dev.lm;
      cell.dev_bok = cfg.loss_mode == LossMode::bow_lm ? dev.bow : dev.bok;
      cell.dev_total = dev.total;
      char name[128];
      std::snprintf(name, sizeof(name), "%s/sweep_lambda%g_k%d.ckpt",
                    spec.out_dir.c_str(), lambda, k_max);
      cell.checkpoint_path = name;
      model::save_checkpoint(cell.checkpoint_path, fitted.best_params,
                             spec.vocab_hash);
      cells.push_back(cell);
      if (on_cell) on_cell(cell);
    }
  }
  return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "lambda,k_max,dev_lm,dev_bok,dev_total,checkpoint_path\n";
  char line[512];
  for (const auto& c : cells) {
    std::snprintf(line, sizeof(line), "%.17g,%d,%.17g,%.17g,%.17g,%s\n",
                  c.lambda, c.k_max, c.dev_lm, c.dev_bok, c.dev_total,
                  c.checkpoint_path.c_str());
    out += line;
  }
  return out;
}

}  // namespace boklm::train
