// SPDX-License-Identifier: Apache-2.0
//
// Miniature pre-LN transformer, usable as an encoder-decoder or a
// decoder-only LM. The same parameter set backs two passes per training
// step: a teacher-forced pass over the ground-truth prefix (dropout off,
// nothing recorded on the tape) and an operative pass over a mixed prefix
// (dropout on, sole source of gradients).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dysi/data.hpp"
#include "dysi/errors.hpp"
#include "dysi/optimizer.hpp"
#include "dysi/rng.hpp"
#include "dysi/tensor.hpp"

namespace dysi {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int ffn_dim = 128;
  double dropout = 0.1;
  int max_positions = 64;
  enum class Mode { kEncoderDecoder, kDecoderOnly };
  Mode mode = Mode::kEncoderDecoder;

  void validate() const {
    if (vocab_size <= Vocabulary::kReserved)
      throw ConfigError("model: vocab_size must exceed the reserved ids");
    if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || ffn_dim <= 0 || max_positions <= 0)
      throw ConfigError("model: dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  }
};

// Per-step distributions over the vocabulary for one batch pass.
template <class T>
struct StepDistributionsT {
  TensorT<T> probs;      // [B, S, V]
  TensorT<T> log_probs;  // [B, S, V]
  int batch = 0;
  int steps = 0;
  int vocab = 0;
};

// Argmax per step, ties resolved to the lowest token id.
template <class T>
std::vector<std::int32_t> greedy_predictions(const StepDistributionsT<T>& dists) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(dists.batch) * dists.steps);
  const auto& p = dists.probs.values();
  for (std::int64_t row = 0; row < static_cast<std::int64_t>(out.size()); ++row) {
    const T* r = p.data() + row * dists.vocab;
    int best = 0;
    for (int w = 1; w < dists.vocab; ++w)
      if (r[w] > r[best]) best = w;
    out[static_cast<std::size_t>(row)] = best;
  }
  return out;
}

namespace detail {

template <class T>
struct AttentionParamsT {
  TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class T>
struct BlockParamsT {
  TensorT<T> ln1_g, ln1_b;
  AttentionParamsT<T> self_attn;
  bool has_cross = false;
  TensorT<T> ln_cross_g, ln_cross_b;
  AttentionParamsT<T> cross_attn;
  TensorT<T> ln2_g, ln2_b;
  TensorT<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class T>
struct TowerParamsT {
  TensorT<T> tok_emb, pos_emb;
  std::vector<BlockParamsT<T>> blocks;
  TensorT<T> final_ln_g, final_ln_b;
};

}  // namespace detail

// Encoder memory for one source sequence or batch, reusable across decode
// steps.
template <class T>
struct EncodedSourceT {
  TensorT<T> memory;            // [B, S, D]
  std::vector<float> mask;      // [B, S]
  int batch = 0;
  int src_len = 0;
};

template <class T>
class TransformerT {
 public:
  TransformerT(const ModelConfig& config, Rng& init_rng);

  const ModelConfig& config() const { return config_; }
  ParamSetT<T>& params() { return params_; }
  const ParamSetT<T>& params() const { return params_; }

  // Distributions conditioned on the ground-truth prefix. Dropout disabled,
  // no graph recorded: the result is detached by construction.
  StepDistributionsT<T> forward_teacher_forced(const ParallelBatch& batch) const {
    NoGradGuard guard;
    return forward_pass(batch, batch.target_input, false, nullptr);
  }

  // Distributions conditioned on a mixed prefix; the only gradient-carrying
  // pass. Dropout applies when the config enables it and a stream is given.
  StepDistributionsT<T> forward_operative(const ParallelBatch& batch,
                                          const std::vector<std::int32_t>& mixed_input,
                                          Rng* dropout_rng) const {
    return forward_pass(batch, mixed_input, dropout_rng != nullptr, dropout_rng);
  }

  StepDistributionsT<T> forward_pass(const ParallelBatch& batch,
                                     const std::vector<std::int32_t>& decoder_input,
                                     bool apply_dropout, Rng* dropout_rng) const;

  // Single-pass encoder over a batch of sources (no grad, no dropout).
  EncodedSourceT<T> encode(const ParallelBatch& batch) const;
  EncodedSourceT<T> encode_single(const std::vector<std::int32_t>& source_with_eos) const;

  // Next-token log-probabilities for an incremental decoder prefix
  // (BOS-prefixed internally). Used by every decoding strategy.
  std::vector<T> next_token_log_probs(const EncodedSourceT<T>* source,
                                      const std::vector<std::int32_t>& prefix) const;

 private:
  ModelConfig config_;
  ParamSetT<T> params_;
  detail::TowerParamsT<T> encoder_;
  detail::TowerParamsT<T> decoder_;
  TensorT<T> out_w_, out_b_;

  detail::TowerParamsT<T> build_tower(const std::string& prefix, bool cross, Rng& rng);
  detail::AttentionParamsT<T> build_attention(const std::string& prefix, Rng& rng);
  TensorT<T> linear_init(const std::string& name, int in, int out, Rng& rng);
  TensorT<T> zeros_param(const std::string& name, Shape shape);
  TensorT<T> const_param(const std::string& name, Shape shape, T value);

  TensorT<T> attention(const TensorT<T>& q_in, const TensorT<T>& kv_in,
                       const detail::AttentionParamsT<T>& p, const TensorT<T>& bias,
                       int batch, int q_len, int kv_len) const;
  TensorT<T> run_tower(const detail::TowerParamsT<T>& tower,
                       const std::vector<std::int32_t>& ids, int batch, int len,
                       const TensorT<T>& self_bias, const TensorT<T>* cross_memory,
                       const TensorT<T>* cross_bias, bool apply_dropout, Rng* dropout_rng) const;

  TensorT<T> causal_bias(int len) const;
  TensorT<T> key_pad_bias(const std::vector<float>& key_mask, int batch, int q_len,
                          int kv_len) const;
};

using Transformer = TransformerT<float>;
using StepDistributions = StepDistributionsT<float>;
using EncodedSource = EncodedSourceT<float>;

// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> TransformerT<T>::linear_init(const std::string& name, int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (in + out));
  std::vector<T> w(static_cast<std::size_t>(in) * out);
  for (auto& v : w) v = static_cast<T>(rng.uniform_double(-limit, limit));
  return params_.add(name, TensorT<T>::parameter({in, out}, std::move(w)));
}

template <class T>
TensorT<T> TransformerT<T>::zeros_param(const std::string& name, Shape shape) {
  return params_.add(name, TensorT<T>::parameter(
                               shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), T(0))));
}

template <class T>
TensorT<T> TransformerT<T>::const_param(const std::string& name, Shape shape, T value) {
  return params_.add(name, TensorT<T>::parameter(
                               shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), value)));
}

template <class T>
detail::AttentionParamsT<T> TransformerT<T>::build_attention(const std::string& prefix, Rng& rng) {
  detail::AttentionParamsT<T> p;
  const int d = config_.d_model;
  p.wq = linear_init(prefix + ".wq", d, d, rng);
  p.bq = zeros_param(prefix + ".bq", {d});
  p.wk = linear_init(prefix + ".wk", d, d, rng);
  p.bk = zeros_param(prefix + ".bk", {d});
  p.wv = linear_init(prefix + ".wv", d, d, rng);
  p.bv = zeros_param(prefix + ".bv", {d});
  p.wo = linear_init(prefix + ".wo", d, d, rng);
  p.bo = zeros_param(prefix + ".bo", {d});
  return p;
}

template <class T>
detail::TowerParamsT<T> TransformerT<T>::build_tower(const std::string& prefix, bool cross,
                                                     Rng& rng) {
  detail::TowerParamsT<T> tower;
  const int d = config_.d_model;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<T> tok(static_cast<std::size_t>(config_.vocab_size) * d);
  for (auto& v : tok) v = static_cast<T>(rng.normal(0.0, emb_std));
  tower.tok_emb = params_.add(prefix + ".tok_emb",
                              TensorT<T>::parameter({config_.vocab_size, d}, std::move(tok)));
  std::vector<T> pos(static_cast<std::size_t>(config_.max_positions) * d);
  for (auto& v : pos) v = static_cast<T>(rng.normal(0.0, emb_std));
  tower.pos_emb = params_.add(prefix + ".pos_emb",
                              TensorT<T>::parameter({config_.max_positions, d}, std::move(pos)));
  for (int i = 0; i < config_.n_layers; ++i) {
    const std::string lp = prefix + ".l" + std::to_string(i);
    detail::BlockParamsT<T> block;
    block.ln1_g = const_param(lp + ".ln1.g", {d}, T(1));
    block.ln1_b = zeros_param(lp + ".ln1.b", {d});
    block.self_attn = build_attention(lp + ".self_attn", rng);
    block.has_cross = cross;
    if (cross) {
      block.ln_cross_g = const_param(lp + ".ln_cross.g", {d}, T(1));
      block.ln_cross_b = zeros_param(lp + ".ln_cross.b", {d});
      block.cross_attn = build_attention(lp + ".cross_attn", rng);
    }
    block.ln2_g = const_param(lp + ".ln2.g", {d}, T(1));
    block.ln2_b = zeros_param(lp + ".ln2.b", {d});
    block.ffn_w1 = linear_init(lp + ".ffn.w1", d, config_.ffn_dim, rng);
    block.ffn_b1 = zeros_param(lp + ".ffn.b1", {config_.ffn_dim});
    block.ffn_w2 = linear_init(lp + ".ffn.w2", config_.ffn_dim, d, rng);
    block.ffn_b2 = zeros_param(lp + ".ffn.b2", {d});
    tower.blocks.push_back(std::move(block));
  }
  tower.final_ln_g = const_param(prefix + ".final_ln.g", {d}, T(1));
  tower.final_ln_b = zeros_param(prefix + ".final_ln.b", {d});
  return tower;
}

template <class T>
TransformerT<T>::TransformerT(const ModelConfig& config, Rng& init_rng) : config_(config) {
  config_.validate();
  if (config_.mode == ModelConfig::Mode::kEncoderDecoder)
    encoder_ = build_tower("enc", false, init_rng);
  decoder_ = build_tower("dec", config_.mode == ModelConfig::Mode::kEncoderDecoder, init_rng);
  // Zero-initialized output projection: an untrained model emits the uniform
  // distribution, and the first optimizer steps stay well-scaled.
  out_w_ = zeros_param("out.w", {config_.d_model, config_.vocab_size});
  out_b_ = zeros_param("out.b", {config_.vocab_size});
}

template <class T>
TensorT<T> TransformerT<T>::causal_bias(int len) const {
  std::vector<T> bias(static_cast<std::size_t>(len) * len, T(0));
  for (int q = 0; q < len; ++q)
    for (int k = q + 1; k < len; ++k)
      bias[static_cast<std::size_t>(q) * len + k] = T(-1e9);
  return TensorT<T>::from_values({len, len}, std::move(bias));
}

template <class T>
TensorT<T> TransformerT<T>::key_pad_bias(const std::vector<float>& key_mask, int batch, int q_len,
                                         int kv_len) const {
  const int h = config_.n_heads;
  std::vector<T> bias(static_cast<std::size_t>(batch) * h * q_len * kv_len, T(0));
  for (int b = 0; b < batch; ++b)
    for (int k = 0; k < kv_len; ++k) {
      if (key_mask[static_cast<std::size_t>(b) * kv_len + k] != 0.0f) continue;
      for (int head = 0; head < h; ++head)
        for (int q = 0; q < q_len; ++q)
          bias[((static_cast<std::size_t>(b) * h + head) * q_len + q) * kv_len + k] = T(-1e9);
    }
  return TensorT<T>::from_values({batch * h, q_len, kv_len}, std::move(bias));
}

template <class T>
TensorT<T> TransformerT<T>::attention(const TensorT<T>& q_in, const TensorT<T>& kv_in,
                                      const detail::AttentionParamsT<T>& p, const TensorT<T>& bias,
                                      int batch, int q_len, int kv_len) const {
  const int d = config_.d_model;
  const int h = config_.n_heads;
  const int dk = d / h;
  auto heads = [&](const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int len) {
    auto proj = add(matmul(reshape(x, {batch * len, d}), w), b);
    return reshape(permute(reshape(proj, {batch, len, h, dk}), {0, 2, 1, 3}), {batch * h, len, dk});
  };
  auto q = heads(q_in, p.wq, p.bq, q_len);
  auto k = heads(kv_in, p.wk, p.bk, kv_len);
  auto v = heads(kv_in, p.wv, p.bv, kv_len);
  auto scores = add(scale(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)))),
                    bias);
  auto weights = softmax_lastdim(scores);
  auto ctx = bmm(weights, v, false);
  auto merged =
      reshape(permute(reshape(ctx, {batch, h, q_len, dk}), {0, 2, 1, 3}), {batch * q_len, d});
  return reshape(add(matmul(merged, p.wo), p.bo), {batch, q_len, d});
}

template <class T>
TensorT<T> TransformerT<T>::run_tower(const detail::TowerParamsT<T>& tower,
                                      const std::vector<std::int32_t>& ids, int batch, int len,
                                      const TensorT<T>& self_bias, const TensorT<T>* cross_memory,
                                      const TensorT<T>* cross_bias, bool apply_dropout,
                                      Rng* dropout_rng) const {
  if (len > config_.max_positions)
    throw ShapeError("sequence length " + std::to_string(len) + " exceeds max_positions " +
                     std::to_string(config_.max_positions));
  const int d = config_.d_model;
  const bool use_dropout = apply_dropout && config_.dropout > 0.0 && dropout_rng != nullptr;
  auto maybe_dropout = [&](TensorT<T> x) {
    return use_dropout ? dropout(x, config_.dropout, *dropout_rng) : x;
  };
  auto x = reshape(embedding_lookup(tower.tok_emb, ids), {batch, len, d});
  x = scale(x, static_cast<T>(std::sqrt(static_cast<double>(d))));
  x = add(x, slice_rows(tower.pos_emb, len));
  x = maybe_dropout(x);
  const int cross_len = cross_memory ? cross_memory->dim(1) : 0;
  for (const auto& block : tower.blocks) {
    auto normed = layer_norm(x, block.ln1_g, block.ln1_b);
    x = add(x, maybe_dropout(attention(normed, normed, block.self_attn, self_bias, batch, len, len)));
    if (block.has_cross) {
      if (!cross_memory || !cross_bias)
        throw ContractError("decoder with cross-attention requires encoder memory");
      auto q_normed = layer_norm(x, block.ln_cross_g, block.ln_cross_b);
      x = add(x, maybe_dropout(attention(q_normed, *cross_memory, block.cross_attn, *cross_bias,
                                         batch, len, cross_len)));
    }
    auto ffn_in = layer_norm(x, block.ln2_g, block.ln2_b);
    auto hidden = gelu(add(matmul(reshape(ffn_in, {batch * len, d}), block.ffn_w1), block.ffn_b1));
    auto ffn_out = reshape(add(matmul(hidden, block.ffn_w2), block.ffn_b2), {batch, len, d});
    x = add(x, maybe_dropout(ffn_out));
  }
  return layer_norm(x, tower.final_ln_g, tower.final_ln_b);
}

template <class T>
StepDistributionsT<T> TransformerT<T>::forward_pass(const ParallelBatch& batch,
                                                    const std::vector<std::int32_t>& decoder_input,
                                                    bool apply_dropout, Rng* dropout_rng) const {
  const int b = batch.batch_size;
  const int t = batch.tgt_len;
  if (static_cast<std::int64_t>(decoder_input.size()) != static_cast<std::int64_t>(b) * t)
    throw ShapeError("decoder input does not match the batch layout");
  for (int row = 0; row < b; ++row) {
    if (decoder_input[static_cast<std::size_t>(row) * t] != Vocabulary::kBos)
      throw ContractError("decoder input rows must begin with BOS");
  }
  TensorT<T> memory;
  TensorT<T> cross_bias;
  const bool encdec = config_.mode == ModelConfig::Mode::kEncoderDecoder;
  if (encdec) {
    if (!batch.has_source()) throw ShapeError("encoder-decoder model requires a source batch");
    auto enc_bias = key_pad_bias(batch.source_mask, b, batch.src_len, batch.src_len);
    memory = run_tower(encoder_, batch.source, b, batch.src_len, enc_bias, nullptr, nullptr,
                       apply_dropout, dropout_rng);
    cross_bias = key_pad_bias(batch.source_mask, b, t, batch.src_len);
  }
  auto decoded = run_tower(decoder_, decoder_input, b, t, causal_bias(t),
                           encdec ? &memory : nullptr, encdec ? &cross_bias : nullptr,
                           apply_dropout, dropout_rng);
  auto logits = reshape(add(matmul(reshape(decoded, {b * t, config_.d_model}), out_w_), out_b_),
                        {b, t, config_.vocab_size});
  StepDistributionsT<T> out;
  out.probs = softmax_lastdim(logits);
  out.log_probs = log_softmax_lastdim(logits);
  out.batch = b;
  out.steps = t;
  out.vocab = config_.vocab_size;
  return out;
}

template <class T>
EncodedSourceT<T> TransformerT<T>::encode(const ParallelBatch& batch) const {
  if (config_.mode != ModelConfig::Mode::kEncoderDecoder)
    throw ContractError("encode: model has no encoder");
  NoGradGuard guard;
  EncodedSourceT<T> out;
  out.batch = batch.batch_size;
  out.src_len = batch.src_len;
  out.mask = batch.source_mask;
  auto bias = key_pad_bias(batch.source_mask, out.batch, out.src_len, out.src_len);
  out.memory =
      run_tower(encoder_, batch.source, out.batch, out.src_len, bias, nullptr, nullptr, false, nullptr);
  return out;
}

template <class T>
EncodedSourceT<T> TransformerT<T>::encode_single(const std::vector<std::int32_t>& source_with_eos) const {
  ParallelBatch b;
  b.batch_size = 1;
  b.src_len = static_cast<int>(source_with_eos.size());
  b.tgt_len = 1;
  b.source = source_with_eos;
  b.source_mask.assign(source_with_eos.size(), 1.0f);
  b.target_input = {Vocabulary::kBos};
  b.target_output = {Vocabulary::kEos};
  b.target_mask = {1.0f};
  return encode(b);
}

template <class T>
std::vector<T> TransformerT<T>::next_token_log_probs(const EncodedSourceT<T>* source,
                                                     const std::vector<std::int32_t>& prefix) const {
  NoGradGuard guard;
  std::vector<std::int32_t> input;
  input.reserve(prefix.size() + 1);
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), prefix.begin(), prefix.end());
  const int t = static_cast<int>(input.size());
  TensorT<T> cross_bias;
  const TensorT<T>* memory = nullptr;
  if (config_.mode == ModelConfig::Mode::kEncoderDecoder) {
    if (!source) throw ContractError("encoder-decoder decoding requires encoded source");
    cross_bias = key_pad_bias(source->mask, 1, t, source->src_len);
    memory = &source->memory;
  }
  auto decoded = run_tower(decoder_, input, 1, t, causal_bias(t), memory,
                           memory ? &cross_bias : nullptr, false, nullptr);
  // Only the final row is needed; project it alone.
  std::vector<T> row(decoded.values().end() - config_.d_model, decoded.values().end());
  auto final_state = TensorT<T>::from_values({1, config_.d_model}, std::move(row));
  auto logits = add(matmul(final_state, out_w_), out_b_);
  auto log_probs = log_softmax_lastdim(logits);
  return log_probs.values();
}

}  // namespace dysi
