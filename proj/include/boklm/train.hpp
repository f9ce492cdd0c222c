#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "boklm/corpus.hpp"
#include "boklm/model.hpp"
#include "boklm/tensor.hpp"

namespace boklm::train {

enum class LossMode { lm, bok_lm, bow_lm };

std::string loss_mode_name(LossMode m);
LossMode loss_mode_from_name(const std::string& name);

/// Paper presets: 0.3 for the decoder-only model, 0.1 for encoder-decoder.
double default_lambda(model::Architecture arch);

/// Per-batch loss components. `total` is the exact affine combination
/// lm + lambda * aux for the active mode.
struct LossBreakdown {
  double lm = 0.0;
  double bok = 0.0;
  double bow = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

struct TrainConfig {
  LossMode loss_mode = LossMode::bok_lm;
  double lambda = 0.3;
  double learning_rate = 5e-5;
  int batch_size = 16;
  int max_epochs = 20;
  int patience = 3;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  uint64_t seed = 10;
  int64_t max_steps = 0;  // 0 = unlimited

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
};

// ---- loss ops -------------------------------------------------------------

/// Mean negative log-likelihood per response token (<pad> targets are
/// skipped). `lm_logits` must cover exactly the response positions.
tensor::Tensor lm_loss(const tensor::Tensor& lm_logits,
                       const std::vector<int>& response_ids);

/// Sum form with the number of counted tokens; batches pool these to form
/// the per-token mean.
std::pair<tensor::Tensor, int> lm_nll_sum(const tensor::Tensor& lm_logits,
                                          const std::vector<int>& response_ids);

/// Sum over label ids w of -log(alpha_w), duplicates counted per
/// occurrence. The batch value is the mean over examples.
tensor::Tensor bok_loss(const tensor::Tensor& bok_probs,
                        const std::vector<int>& bok_label_ids);

/// Same mechanics over all response tokens, special ids excluded.
tensor::Tensor bow_loss(const tensor::Tensor& bok_probs,
                        const std::vector<int>& response_ids);

double combined_loss(double lm, double aux, LossMode mode, double lambda);

// ---- optimizer ------------------------------------------------------------

/// AdamW with decoupled weight decay and bias-corrected moments. Applies
/// global-norm gradient clipping first. Parameters whose gradient is
/// absent or identically zero are left untouched (no decay), so heads
/// outside the active objective keep their initialization.
class AdamWState {
 public:
  int64_t step = 0;
  std::unordered_map<std::string, std::vector<double>> m, v;
};

void adamw_step(model::ModelParams& params, AdamWState& state,
                const TrainConfig& config);

// ---- training -------------------------------------------------------------

struct StepResult {
  LossBreakdown loss;
  int response_tokens = 0;
  int examples = 0;
};

/// One forward/backward/update over a batch. `step_index` seeds dropout
/// deterministically.
StepResult train_step(model::ModelParams& params,
                      const std::vector<corpus::TrainingExample>& batch,
                      AdamWState& state, const TrainConfig& config,
                      int64_t step_index);

/// Loss components over a split, no gradients.
LossBreakdown evaluate(const model::ModelParams& params,
                       const std::vector<corpus::TrainingExample>& examples,
                       LossMode mode, double lambda);

/// Teacher-forced argmax accuracy over all response tokens.
double token_accuracy(const model::ModelParams& params,
                      const std::vector<corpus::TrainingExample>& examples);

struct EpochLog {
  int epoch = 0;
  double train_lm = 0.0;
  double train_bok = 0.0;  // active aux value (BoK or BoW)
  double train_total = 0.0;
  double dev_total = 0.0;
  double lambda = 0.0;
  double elapsed_s = 0.0;

  std::string to_json() const;
};

struct FitResult {
  model::ModelParams best_params;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_dev = 0.0;
  int64_t steps_run = 0;
};

/// Shuffles per epoch with the seeded RNG, evaluates dev total loss per
/// epoch, keeps the best-dev snapshot, stops after `patience`
/// non-improving epochs (or max_epochs / max_steps).
FitResult fit(model::ModelParams& params,
              const std::vector<corpus::TrainingExample>& train_examples,
              const std::vector<corpus::TrainingExample>& dev_examples,
              const TrainConfig& config,
              const std::function<void(const EpochLog&)>& on_epoch = nullptr);

// ---- ablation harness ------------------------------------------------------

struct SweepCell {
  double lambda = 0.0;
  int k_max = 0;
  double dev_lm = 0.0;
  double dev_bok = 0.0;
  double dev_total = 0.0;
  std::string checkpoint_path;
};

struct SweepSpec {
  model::ModelConfig model_config;
  TrainConfig train_config;  // lambda is overridden per cell
  corpus::LabelConfig label_config;  // k_max is overridden per cell
  int max_context_tokens = 256;
  std::vector<double> lambdas;
  std::vector<int> k_maxes;
  std::string out_dir;      // per-cell checkpoints land here
  std::string vocab_hash;
};

/// One fit per (lambda, k_max) cell with a shared seed; labels are
/// re-prepared for each k_max.
std::vector<SweepCell> ablation_sweep(
    const SweepSpec& spec, const std::vector<corpus::Dialogue>& train_dialogues,
    const std::vector<corpus::Dialogue>& dev_dialogues,
    const tokenizer::Vocab& vocab,
    const std::function<void(const SweepCell&)>& on_cell = nullptr);

std::string sweep_csv(const std::vector<SweepCell>& cells);

}  // namespace boklm::train
