// Straight-line, non-autodiff transformer forward pass over plain double
// vectors. Reads weights from ModelParams but shares no compute code with
// the library; used to pin down the model's forward semantics.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "boklm/model.hpp"

namespace fworacle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;
using boklm::model::Architecture;
using boklm::model::ModelParams;

inline Mat as_mat(const boklm::tensor::Tensor& t) {
  const int r = t.rows(), c = t.cols();
  Mat m(r, Vec(c));
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m[i][j] = t.data()[(size_t)i * c + j];
  }
  return m;
}

inline Vec as_vec(const boklm::tensor::Tensor& t) { return t.data(); }

inline Vec affine(const Vec& x, const Mat& w, const Vec& b) {
  Vec y(w[0].size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t j = 0; j < y.size(); ++j) y[j] += x[i] * w[i][j];
  }
  for (size_t j = 0; j < y.size(); ++j) y[j] += b[j];
  return y;
}

inline Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, double eps) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= x.size();
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= x.size();
  const double inv = 1.0 / std::sqrt(var + eps);
  Vec y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - m) * inv * g[i] + b[i];
  return y;
}

inline double gelu(double x) {
  return x * 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
}

inline Vec softmax(const Vec& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  Vec y(x.size());
  double denom = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    denom += y[i];
  }
  for (double& v : y) v /= denom;
  return y;
}

// attends x_q over x_kv; when causal, query i only sees keys <= i
inline Mat attention(const ModelParams& p, const std::string& pfx,
                     const Mat& x_q, const Mat& x_kv, bool causal) {
  const int heads = p.config().num_heads;
  const int d = p.config().d_model;
  const int dh = d / heads;
  const Mat wq = as_mat(p.at(pfx + ".wq")), wk = as_mat(p.at(pfx + ".wk"));
  const Mat wv = as_mat(p.at(pfx + ".wv")), wo = as_mat(p.at(pfx + ".wo"));
  const Vec bq = as_vec(p.at(pfx + ".bq")), bk = as_vec(p.at(pfx + ".bk"));
  const Vec bv = as_vec(p.at(pfx + ".bv")), bo = as_vec(p.at(pfx + ".bo"));

  Mat q, k, v;
  for (const Vec& row : x_q) q.push_back(affine(row, wq, bq));
  for (const Vec& row : x_kv) {
    k.push_back(affine(row, wk, bk));
    v.push_back(affine(row, wv, bv));
  }

  Mat mixed(x_q.size(), Vec(d, 0.0));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    for (size_t i = 0; i < x_q.size(); ++i) {
      const size_t limit = causal ? std::min(i + 1, x_kv.size()) : x_kv.size();
      Vec scores(limit);
      for (size_t j = 0; j < limit; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
        scores[j] = s * scale;
      }
      const Vec w = softmax(scores);
      for (size_t j = 0; j < limit; ++j) {
        for (int c = 0; c < dh; ++c) mixed[i][h * dh + c] += w[j] * v[j][h * dh + c];
      }
    }
  }
  Mat out;
  for (const Vec& row : mixed) out.push_back(affine(row, wo, bo));
  return out;
}

inline Mat run_stack(const ModelParams& p, const std::string& prefix,
                     const std::string& pos_name, const std::string& final_ln,
                     const std::vector<int>& ids, bool causal,
                     const Mat* enc_out) {
  const double eps = 1e-5;
  const Mat tok = as_mat(p.at("tok_emb"));
  const Mat pos = as_mat(p.at(pos_name));
  Mat h;
  for (size_t i = 0; i < ids.size(); ++i) {
    Vec row(tok[ids[i]]);
    for (size_t c = 0; c < row.size(); ++c) row[c] += pos[i][c];
    h.push_back(row);
  }
  for (int layer = 0; layer < p.config().num_layers; ++layer) {
    const std::string pfx = prefix + "." + std::to_string(layer);
    Mat normed;
    for (const Vec& row : h) {
      normed.push_back(layer_norm(row, as_vec(p.at(pfx + ".ln1.g")),
                                  as_vec(p.at(pfx + ".ln1.b")), eps));
    }
    Mat attn = attention(p, pfx + ".attn", normed, normed, causal);
    for (size_t i = 0; i < h.size(); ++i) {
      for (size_t c = 0; c < h[i].size(); ++c) h[i][c] += attn[i][c];
    }
    if (enc_out) {
      Mat nx;
      for (const Vec& row : h) {
        nx.push_back(layer_norm(row, as_vec(p.at(pfx + ".lnx.g")),
                                as_vec(p.at(pfx + ".lnx.b")), eps));
      }
      Mat cross = attention(p, pfx + ".xattn", nx, *enc_out, false);
      for (size_t i = 0; i < h.size(); ++i) {
        for (size_t c = 0; c < h[i].size(); ++c) h[i][c] += cross[i][c];
      }
    }
    for (size_t i = 0; i < h.size(); ++i) {
      Vec n2 = layer_norm(h[i], as_vec(p.at(pfx + ".ln2.g")),
                          as_vec(p.at(pfx + ".ln2.b")), eps);
      Vec ff = affine(n2, as_mat(p.at(pfx + ".mlp.w1")),
                      as_vec(p.at(pfx + ".mlp.b1")));
      for (double& v : ff) v = gelu(v);
      Vec out = affine(ff, as_mat(p.at(pfx + ".mlp.w2")),
                       as_vec(p.at(pfx + ".mlp.b2")));
      for (size_t c = 0; c < h[i].size(); ++c) h[i][c] += out[c];
    }
  }
  Mat final;
  for (const Vec& row : h) {
    final.push_back(layer_norm(row, as_vec(p.at(final_ln + ".g")),
                               as_vec(p.at(final_ln + ".b")), eps));
  }
  return final;
}

inline Vec lm_logits_for(const ModelParams& p, const Vec& hidden_row) {
  const Mat tok = as_mat(p.at("tok_emb"));
  Vec logits(p.config().vocab_size, 0.0);
  if (p.config().tie_lm_head) {
    for (int v = 0; v < p.config().vocab_size; ++v) {
      double s = 0.0;
      for (size_t c = 0; c < hidden_row.size(); ++c) s += hidden_row[c] * tok[v][c];
      logits[v] = s;
    }
  } else {
    logits = affine(hidden_row, as_mat(p.at("lm_head.w")),
                    Vec(p.config().vocab_size, 0.0));
  }
  return logits;
}

struct OracleOutput {
  Mat lm_logits;
  Vec phi;
  Vec bok_probs;
};

inline OracleOutput run(const ModelParams& p, const std::vector<int>& context,
                        const std::vector<int>& response) {
  constexpr int kBos = boklm::tokenizer::Specials::bos;
  constexpr int kPad = boklm::tokenizer::Specials::pad;
  OracleOutput out;
  Mat hidden;
  int bos_pos = 0;
  if (p.config().architecture == Architecture::decoder_only) {
    std::vector<int> input = context;
    input.push_back(kBos);
    input.insert(input.end(), response.begin(), response.end());
    hidden = run_stack(p, "dec", "pos_emb", "ln_f", input, true, nullptr);
    bos_pos = static_cast<int>(context.size());
  } else {
    std::vector<int> enc_in = context.empty() ? std::vector<int>{kPad} : context;
    Mat enc = run_stack(p, "enc", "enc_pos_emb", "enc_ln_f", enc_in, false,
                        nullptr);
    std::vector<int> dec_in = {kBos};
    dec_in.insert(dec_in.end(), response.begin(), response.end());
    hidden = run_stack(p, "dec", "dec_pos_emb", "ln_f", dec_in, true, &enc);
    bos_pos = 0;
  }
  out.phi = hidden[bos_pos];
  for (size_t i = 0; i < response.size(); ++i) {
    out.lm_logits.push_back(lm_logits_for(p, hidden[bos_pos + i]));
  }
  Vec bok = affine(out.phi, as_mat(p.at("bok.w")), as_vec(p.at("bok.b")));
  out.bok_probs = softmax(bok);
  return out;
}

}  // namespace fworacle
