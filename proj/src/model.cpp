#include "boklm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "boklm/io.hpp"
#include "json.hpp"

namespace boklm::model {

namespace {

using tensor::Tensor;
using tokenizer::Specials;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("model: " + msg);
}

constexpr double kLnEps = 1e-5;
constexpr double kMaskValue = -1e9;

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic per-site dropout seeds within one forward pass.
struct SeedSequence {
  uint64_t base = 0;
  uint64_t counter = 0;
  uint64_t next() { return splitmix64(base ^ (0xa076'1d64'78bd'642full * ++counter)); }
};

}  // namespace

std::string architecture_name(Architecture a) {
  return a == Architecture::decoder_only ? "decoder-only" : "encoder-decoder";
}

Architecture architecture_from_name(const std::string& name) {
  if (name == "decoder-only") return Architecture::decoder_only;
  if (name == "encoder-decoder") return Architecture::encoder_decoder;
  fail("unknown architecture '" + name + "'");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["architecture"] = architecture_name(architecture);
  j["num_layers"] = num_layers;
  j["d_model"] = d_model;
  j["num_heads"] = num_heads;
  j["d_ff"] = d_ff;
  j["vocab_size"] = vocab_size;
  j["max_positions"] = max_positions;
  j["dropout_rate"] = dropout_rate;
  j["seed"] = seed;
  j["tie_lm_head"] = tie_lm_head;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.architecture = architecture_from_name(j.at("architecture").get<std::string>());
  c.num_layers = j.at("num_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.tie_lm_head = j.at("tie_lm_head").get<bool>();
  return c;
}

void ModelParams::add(const std::string& name, Tensor t) {
  index_[name] = named_.size();
  named_.emplace_back(name, std::move(t));
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail("no parameter named '" + name + "'");
  return named_[it->second].second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail("no parameter named '" + name + "'");
  return named_[it->second].second;
}

bool ModelParams::has(const std::string& name) const {
  return index_.count(name) > 0;
}

int64_t ModelParams::param_count() const {
  int64_t total = 0;
  for (const auto& [name, t] : named_) total += t.size();
  return total;
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  copy.config_ = config_;
  for (const auto& [name, t] : named_) copy.add(name, t.clone());
  return copy;
}

void ModelParams::set_requires_grad(bool value) {
  for (auto& [name, t] : named_) t.set_requires_grad(value);
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : named_) t.zero_grad();
}

struct CheckpointCodec {
  static void set_config(ModelParams& p, const ModelConfig& c) {
    p.config_ = c;
  }
  static void add(ModelParams& p, const std::string& name, tensor::Tensor t) {
    p.add(name, std::move(t));
  }
};

namespace {

void add_block_params(ModelParams& p, const std::string& pfx, int d, int d_ff,
                      bool cross_attention) {
  auto& P = p;
  auto dim = [&](std::initializer_list<int> s) { return std::vector<int>(s); };
  // shapes only; values are filled afterwards in manifest order
  struct Spec {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<Spec> specs = {
      {pfx + ".ln1.g", dim({d})},      {pfx + ".ln1.b", dim({d})},
      {pfx + ".attn.wq", dim({d, d})}, {pfx + ".attn.bq", dim({d})},
      {pfx + ".attn.wk", dim({d, d})}, {pfx + ".attn.bk", dim({d})},
      {pfx + ".attn.wv", dim({d, d})}, {pfx + ".attn.bv", dim({d})},
      {pfx + ".attn.wo", dim({d, d})}, {pfx + ".attn.bo", dim({d})},
  };
  if (cross_attention) {
    for (const auto& s : std::vector<Spec>{
             {pfx + ".lnx.g", dim({d})},      {pfx + ".lnx.b", dim({d})},
             {pfx + ".xattn.wq", dim({d, d})}, {pfx + ".xattn.bq", dim({d})},
             {pfx + ".xattn.wk", dim({d, d})}, {pfx + ".xattn.bk", dim({d})},
             {pfx + ".xattn.wv", dim({d, d})}, {pfx + ".xattn.bv", dim({d})},
             {pfx + ".xattn.wo", dim({d, d})}, {pfx + ".xattn.bo", dim({d})},
         }) {
      specs.push_back(s);
    }
  }
  for (const auto& s : std::vector<Spec>{
           {pfx + ".ln2.g", dim({d})},        {pfx + ".ln2.b", dim({d})},
           {pfx + ".mlp.w1", dim({d, d_ff})}, {pfx + ".mlp.b1", dim({d_ff})},
           {pfx + ".mlp.w2", dim({d_ff, d})}, {pfx + ".mlp.b2", dim({d})},
       }) {
    specs.push_back(s);
  }
  for (auto& s : specs) CheckpointCodec::add(P, s.name, Tensor::zeros(s.shape));
}

// gain (".g") -> 1, bias names starting with 'b' -> 0, everything else is
// a weight drawn from Normal(0, 0.02)
enum class ParamKind { gain, bias, weight };

ParamKind kind_of(const std::string& name) {
  const size_t dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  if (leaf == "g") return ParamKind::gain;
  if (!leaf.empty() && leaf[0] == 'b') return ParamKind::bias;
  return ParamKind::weight;
}

}  // namespace

ModelParams init_model(const ModelConfig& config) {
  if (config.d_model <= 0 || config.num_heads <= 0 ||
      config.d_model % config.num_heads != 0) {
    fail("d_model " + std::to_string(config.d_model) +
         " not divisible by num_heads " + std::to_string(config.num_heads));
  }
  if (config.vocab_size <= 0) fail("vocab_size must be positive");
  if (config.num_layers <= 0 || config.d_ff <= 0 || config.max_positions <= 0) {
    fail("layers, d_ff and max_positions must be positive");
  }

  ModelParams p;
  p.config_ = config;
  const int d = config.d_model, v = config.vocab_size;

  p.add("tok_emb", Tensor::zeros({v, d}));
  if (config.architecture == Architecture::decoder_only) {
    p.add("pos_emb", Tensor::zeros({config.max_positions, d}));
    for (int i = 0; i < config.num_layers; ++i) {
      add_block_params(p, "dec." + std::to_string(i), d, config.d_ff, false);
    }
  } else {
    p.add("enc_pos_emb", Tensor::zeros({config.max_positions, d}));
    p.add("dec_pos_emb", Tensor::zeros({config.max_positions, d}));
    for (int i = 0; i < config.num_layers; ++i) {
      add_block_params(p, "enc." + std::to_string(i), d, config.d_ff, false);
    }
    p.add("enc_ln_f.g", Tensor::zeros({d}));
    p.add("enc_ln_f.b", Tensor::zeros({d}));
    for (int i = 0; i < config.num_layers; ++i) {
      add_block_params(p, "dec." + std::to_string(i), d, config.d_ff, true);
    }
  }
  p.add("ln_f.g", Tensor::zeros({d}));
  p.add("ln_f.b", Tensor::zeros({d}));
  if (!config.tie_lm_head) p.add("lm_head.w", Tensor::zeros({d, v}));
  p.add("bok.w", Tensor::zeros({d, v}));
  p.add("bok.b", Tensor::zeros({v}));

  std::mt19937_64 rng(config.seed);
  for (auto& [name, t] : p.named_) {
    switch (kind_of(name)) {
      case ParamKind::gain:
        t = Tensor::full(t.shape(), 1.0);
        break;
      case ParamKind::bias:
        break;  // zeros
      case ParamKind::weight:
        t = Tensor::randn(t.shape(), rng, 0.02);
        break;
    }
  }
  return p;
}

namespace {

Tensor causal_mask(int n) {
  std::vector<double> m(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m[static_cast<size_t>(i) * n + j] = kMaskValue;
  }
  return Tensor::from_data({n, n}, std::move(m));
}

Tensor maybe_dropout(Tensor x, const ModelConfig& cfg,
                     const ForwardOptions& opts, SeedSequence& seeds) {
  if (!opts.train_mode || cfg.dropout_rate == 0.0) return x;
  return tensor::dropout(x, cfg.dropout_rate, seeds.next());
}

Tensor multi_head_attention(const ModelParams& p, const std::string& pfx,
                            const Tensor& x_q, const Tensor& x_kv,
                            const Tensor* mask) {
  using namespace boklm::tensor;
  const int heads = p.config().num_heads;
  const int d = p.config().d_model;
  const int dh = d / heads;

  Tensor q = add_bias(matmul(x_q, p.at(pfx + ".wq")), p.at(pfx + ".bq"));
  Tensor k = add_bias(matmul(x_kv, p.at(pfx + ".wk")), p.at(pfx + ".bk"));
  Tensor v = add_bias(matmul(x_kv, p.at(pfx + ".wv")), p.at(pfx + ".bv"));

  std::vector<Tensor> mixed;
  mixed.reserve(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    if (mask) scores = add(scores, *mask);
    mixed.push_back(matmul(softmax(scores, 1), vh));
  }
  Tensor cat = concat(mixed, 1);
  return add_bias(matmul(cat, p.at(pfx + ".wo")), p.at(pfx + ".bo"));
}

/// Runs one transformer stack (pre-layer-norm residual blocks) and the
/// final layer norm. `enc_out` enables cross-attention sublayers.
Tensor run_stack(const ModelParams& p, const std::string& layer_prefix,
                 const std::string& pos_name, const std::string& final_ln,
                 const std::vector<int>& input_ids, bool causal,
                 const Tensor* enc_out, const ForwardOptions& opts,
                 SeedSequence& seeds) {
  using namespace boklm::tensor;
  const ModelConfig& cfg = p.config();
  const int n = static_cast<int>(input_ids.size());
  if (n == 0) fail("empty input sequence");
  if (n > cfg.max_positions) {
    fail("sequence length " + std::to_string(n) + " exceeds max_positions " +
         std::to_string(cfg.max_positions));
  }

  std::vector<int> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor h = add(embedding_gather(p.at("tok_emb"), input_ids),
                 embedding_gather(p.at(pos_name), positions));
  h = maybe_dropout(h, cfg, opts, seeds);

  Tensor mask;
  if (causal && n > 1) mask = causal_mask(n);
  const Tensor* mask_ptr = (causal && n > 1) ? &mask : nullptr;

  for (int layer = 0; layer < cfg.num_layers; ++layer) {
    const std::string pfx = layer_prefix + "." + std::to_string(layer);
    Tensor normed = layer_norm(h, p.at(pfx + ".ln1.g"), p.at(pfx + ".ln1.b"),
                               kLnEps);
    Tensor attn_out = multi_head_attention(p, pfx + ".attn", normed, normed,
                                           mask_ptr);
    h = add(h, maybe_dropout(attn_out, cfg, opts, seeds));

    if (enc_out) {
      Tensor nx = layer_norm(h, p.at(pfx + ".lnx.g"), p.at(pfx + ".lnx.b"),
                             kLnEps);
      Tensor cross = multi_head_attention(p, pfx + ".xattn", nx, *enc_out,
                                          nullptr);
      h = add(h, maybe_dropout(cross, cfg, opts, seeds));
    }

    Tensor n2 = layer_norm(h, p.at(pfx + ".ln2.g"), p.at(pfx + ".ln2.b"),
                           kLnEps);
    Tensor ff = gelu(add_bias(matmul(n2, p.at(pfx + ".mlp.w1")),
                              p.at(pfx + ".mlp.b1")));
    ff = add_bias(matmul(ff, p.at(pfx + ".mlp.w2")), p.at(pfx + ".mlp.b2"));
    h = add(h, maybe_dropout(ff, cfg, opts, seeds));
  }
  return layer_norm(h, p.at(final_ln + ".g"), p.at(final_ln + ".b"), kLnEps);
}

Tensor lm_projection(const ModelParams& p, const Tensor& rows) {
  using namespace boklm::tensor;
  if (p.config().tie_lm_head) return matmul(rows, transpose(p.at("tok_emb")));
  return matmul(rows, p.at("lm_head.w"));
}

ForwardOutput heads_from_hidden(const ModelParams& p, const Tensor& hidden,
                                int bos_pos, int response_len) {
  using namespace boklm::tensor;
  ForwardOutput out;
  out.phi = slice(hidden, 0, bos_pos, bos_pos + 1);
  if (response_len > 0) {
    Tensor rows = slice(hidden, 0, bos_pos, bos_pos + response_len);
    out.lm_logits = lm_projection(p, rows);
  }
  Tensor bok_logits = add_bias(matmul(out.phi, p.at("bok.w")), p.at("bok.b"));
  out.bok_probs = softmax(bok_logits, 1);
  return out;
}

}  // namespace

ForwardOutput forward_decoder_only(const ModelParams& params,
                                   const std::vector<int>& context_ids,
                                   const std::vector<int>& response_ids,
                                   const ForwardOptions& options) {
  if (params.config().architecture != Architecture::decoder_only) {
    fail("params are not a decoder-only model");
  }
  SeedSequence seeds{options.dropout_seed};
  std::vector<int> input = context_ids;
  input.push_back(Specials::bos);
  input.insert(input.end(), response_ids.begin(), response_ids.end());

  Tensor hidden = run_stack(params, "dec", "pos_emb", "ln_f", input,
                            /*causal=*/true, nullptr, options, seeds);
  const int bos_pos = static_cast<int>(context_ids.size());
  return heads_from_hidden(params, hidden, bos_pos,
                           static_cast<int>(response_ids.size()));
}

ForwardOutput forward_encoder_decoder(const ModelParams& params,
                                      const std::vector<int>& context_ids,
                                      const std::vector<int>& response_ids,
                                      const ForwardOptions& options) {
  if (params.config().architecture != Architecture::encoder_decoder) {
    fail("params are not an encoder-decoder model");
  }
  SeedSequence seeds{options.dropout_seed};
  // a fully truncated context still needs one encoder position
  std::vector<int> enc_input =
      context_ids.empty() ? std::vector<int>{Specials::pad} : context_ids;
  Tensor enc_out = run_stack(params, "enc", "enc_pos_emb", "enc_ln_f",
                             enc_input, /*causal=*/false, nullptr, options,
                             seeds);

  std::vector<int> dec_input = {Specials::bos};
  dec_input.insert(dec_input.end(), response_ids.begin(), response_ids.end());
  Tensor hidden = run_stack(params, "dec", "dec_pos_emb", "ln_f", dec_input,
                            /*causal=*/true, &enc_out, options, seeds);
  return heads_from_hidden(params, hidden, 0,
                           static_cast<int>(response_ids.size()));
}

ForwardOutput forward(const ModelParams& params,
                      const std::vector<int>& context_ids,
                      const std::vector<int>& response_ids,
                      const ForwardOptions& options) {
  return params.config().architecture == Architecture::decoder_only
             ? forward_decoder_only(params, context_ids, response_ids, options)
             : forward_encoder_decoder(params, context_ids, response_ids,
                                       options);
}

ForwardOutput forward(const ModelParams& params,
                      const corpus::TrainingExample& example,
                      const ForwardOptions& options) {
  return forward(params, example.context_ids, example.response_ids, options);
}

tensor::Tensor next_token_logits(const ModelParams& params,
                                 const std::vector<int>& context_ids,
                                 const std::vector<int>& generated) {
  using namespace boklm::tensor;
  SeedSequence seeds{0};
  ForwardOptions options;  // inference mode
  Tensor hidden;
  int last = 0;
  if (params.config().architecture == Architecture::decoder_only) {
    std::vector<int> input = context_ids;
    input.push_back(Specials::bos);
    input.insert(input.end(), generated.begin(), generated.end());
    hidden = run_stack(params, "dec", "pos_emb", "ln_f", input, true, nullptr,
                       options, seeds);
    last = static_cast<int>(input.size()) - 1;
  } else {
    std::vector<int> enc_input =
        context_ids.empty() ? std::vector<int>{Specials::pad} : context_ids;
    Tensor enc_out = run_stack(params, "enc", "enc_pos_emb", "enc_ln_f",
                               enc_input, false, nullptr, options, seeds);
    std::vector<int> dec_input = {Specials::bos};
    dec_input.insert(dec_input.end(), generated.begin(), generated.end());
    hidden = run_stack(params, "dec", "dec_pos_emb", "ln_f", dec_input, true,
                       &enc_out, options, seeds);
    last = static_cast<int>(dec_input.size()) - 1;
  }
  Tensor row = slice(hidden, 0, last, last + 1);
  Tensor logits = lm_projection(params, row);  // [1 x V]
  return slice(logits, 0, 0, 1);
}

std::vector<TokenProb> top_k_bok(const ModelParams& params,
                                 const std::vector<int>& context_ids, int k,
                                 const tokenizer::Vocab* vocab) {
  if (k < 1 || k > params.config().vocab_size) {
    fail("top_k_bok: k must be in [1, vocab_size]");
  }
  ForwardOutput out = forward(params, context_ids, {}, {});
  const auto& probs = out.bok_probs.data();

  std::vector<int> ids(probs.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });

  std::vector<TokenProb> top;
  for (int i = 0; i < k; ++i) {
    TokenProb t;
    t.id = ids[i];
    t.prob = probs[ids[i]];
    t.token = vocab ? vocab->token_string(t.id) : std::to_string(t.id);
    top.push_back(std::move(t));
  }
  return top;
}

// ---- checkpoints --------------------------------------------------------

namespace {
constexpr char kMagic[9] = "BOKLMCKP";
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::string& vocab_hash,
                     const std::string& extra_json) {
  nlohmann::ordered_json header;
  header["config"] = nlohmann::ordered_json::parse(params.config().to_json());
  header["vocab_hash"] = vocab_hash;
  header["extra"] = nlohmann::ordered_json::parse(
      extra_json.empty() ? "{}" : extra_json);

  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : params.named()) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["size"] = t.size();
    manifest.push_back(entry);
    offset += static_cast<uint64_t>(t.size()) * sizeof(float);
  }
  header["manifest"] = manifest;
  const std::string header_text = header.dump();

  std::string blob;
  blob.reserve(16 + header_text.size() + offset);
  blob.append(kMagic, 8);
  const uint64_t header_len = header_text.size();
  blob.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  blob += header_text;
  for (const auto& [name, t] : params.named()) {
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      blob.append(reinterpret_cast<const char*>(&f), sizeof(f));
    }
  }
  io::write_file(path, blob);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string blob = io::read_file(path);
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 8) != 0) {
    fail("not a checkpoint file: " + path);
  }
  uint64_t header_len = 0;
  std::memcpy(&header_len, blob.data() + 8, sizeof(header_len));
  if (blob.size() < 16 + header_len) fail("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const std::exception& e) {
    fail(std::string("bad checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.vocab_hash = header.at("vocab_hash").get<std::string>();
  ckpt.extra_json = header.at("extra").dump();
  const ModelConfig config = ModelConfig::from_json(header.at("config").dump());

  ModelParams params;
  CheckpointCodec::set_config(params, config);
  const size_t data_start = 16 + header_len;
  for (const auto& entry : header.at("manifest")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const int64_t size = entry.at("size").get<int64_t>();
    if (data_start + offset + size * sizeof(float) > blob.size()) {
      fail("truncated checkpoint tensor '" + name + "'");
    }
    std::vector<double> values(size);
    const char* src = blob.data() + data_start + offset;
    for (int64_t i = 0; i < size; ++i) {
      float f = 0.0f;
      std::memcpy(&f, src + i * sizeof(float), sizeof(f));
      values[i] = static_cast<double>(f);
    }
    CheckpointCodec::add(params, name, Tensor::from_data(shape, std::move(values)));
  }
  ckpt.params = std::move(params);
  return ckpt;
}

}  // namespace boklm::model
