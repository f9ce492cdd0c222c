#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "boklm/corpus.hpp"
#include "boklm/tensor.hpp"
#include "boklm/tokenizer.hpp"

namespace boklm::model {

enum class Architecture { decoder_only, encoder_decoder };

std::string architecture_name(Architecture a);
Architecture architecture_from_name(const std::string& name);

struct ModelConfig {
  Architecture architecture = Architecture::decoder_only;
  int num_layers = 4;  // per stack
  int d_model = 128;
  int num_heads = 4;
  int d_ff = 512;
  int vocab_size = 0;
  int max_positions = 512;
  double dropout_rate = 0.0;
  uint64_t seed = 10;
  bool tie_lm_head = true;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// All learnable parameters, in a fixed manifest order. Copying shares
/// tensor storage; use clone() for an independent snapshot.
class ModelParams {
 public:
  ModelParams() = default;

  const ModelConfig& config() const { return config_; }
  const std::vector<std::pair<std::string, tensor::Tensor>>& named() const {
    return named_;
  }
  tensor::Tensor& at(const std::string& name);
  const tensor::Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  int64_t param_count() const;

  ModelParams clone() const;
  void set_requires_grad(bool value);
  void zero_grad();

  friend ModelParams init_model(const ModelConfig& config);
  friend struct CheckpointCodec;

 private:
  void add(const std::string& name, tensor::Tensor t);
  ModelConfig config_;
  std::vector<std::pair<std::string, tensor::Tensor>> named_;
  std::unordered_map<std::string, size_t> index_;
};

/// Weights ~ Normal(0, 0.02), biases 0, layer-norm gains 1; deterministic
/// from config.seed.
ModelParams init_model(const ModelConfig& config);

struct ForwardOptions {
  bool train_mode = false;
  uint64_t dropout_seed = 0;
};

struct ForwardOutput {
  tensor::Tensor lm_logits;  // [|response| x |V|]; undefined when response empty
  tensor::Tensor phi;        // [1 x d_model], final-layer state at <bos>
  tensor::Tensor bok_probs;  // [1 x |V|], alpha_t
};

/// Input sequence = context ++ <bos> ++ response, causal self-attention
/// throughout; phi read at the <bos> index.
ForwardOutput forward_decoder_only(const ModelParams& params,
                                   const std::vector<int>& context_ids,
                                   const std::vector<int>& response_ids,
                                   const ForwardOptions& options = {});

/// Encoder reads the context bidirectionally; decoder input is
/// <bos> ++ response with causal self-attention plus cross-attention.
ForwardOutput forward_encoder_decoder(const ModelParams& params,
                                      const std::vector<int>& context_ids,
                                      const std::vector<int>& response_ids,
                                      const ForwardOptions& options = {});

/// Dispatch on params.config().architecture.
ForwardOutput forward(const ModelParams& params,
                      const std::vector<int>& context_ids,
                      const std::vector<int>& response_ids,
                      const ForwardOptions& options = {});

ForwardOutput forward(const ModelParams& params,
                      const corpus::TrainingExample& example,
                      const ForwardOptions& options = {});

/// Logits for the next token after `generated`, given the context.
tensor::Tensor next_token_logits(const ModelParams& params,
                                 const std::vector<int>& context_ids,
                                 const std::vector<int>& generated);

struct TokenProb {
  int id = 0;
  std::string token;  // marker or subword string ("Ġ" marks word-initial)
  double prob = 0.0;
};

/// The k largest entries of alpha_t, ties broken by token id. Token
/// strings come from `vocab` when provided, otherwise the decimal id.
std::vector<TokenProb> top_k_bok(const ModelParams& params,
                                 const std::vector<int>& context_ids, int k,
                                 const tokenizer::Vocab* vocab = nullptr);

// ---- checkpoints --------------------------------------------------------
// File layout: 8-byte magic, u64 little-endian header length, JSON header
// (config, vocab hash, extra metadata, tensor manifest), then raw
// little-endian float32 blobs in manifest order.

struct Checkpoint {
  ModelParams params;
  std::string vocab_hash;
  std::string extra_json;  // effective run configuration, JSON object
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::string& vocab_hash,
                     const std::string& extra_json = "{}");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace boklm::model
