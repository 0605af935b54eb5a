#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tut/attention.hpp"
#include "tut/ops.hpp"
#include "tut/optim.hpp"
#include "tut/rng.hpp"
#include "tut/tensor.hpp"

namespace tut {

enum class Architecture { UTrans, Standard };
enum class RefinementInput { Probabilities, Logits };

std::string to_string(Architecture a);
std::string to_string(RefinementInput r);
Architecture parse_architecture(const std::string& s);
RefinementInput parse_refinement_input(const std::string& s);

struct ModelConfig {
  int refinement_stages = 3;
  int layers = 5;
  AttentionConfig attention;
  Index hidden_dim = 128;
  Index ffn_dim = 128;
  Index refine_hidden_dim = 64;
  Index refine_ffn_dim = 64;
  Index input_dim = 2048;
  Index num_classes = 17;
  double input_dropout = 0.4;
  double ffn_dropout = 0.3;
  Architecture architecture = Architecture::UTrans;
  RefinementInput refinement_input = RefinementInput::Probabilities;
  // ScaleShared tables are shared between encoder and decoder unless set.
  bool rpe_split_coders = false;
  // Table size for learnable absolute encodings.
  Index max_positions = 8192;
  double norm_eps = 1e-5;

  int num_stages() const { return refinement_stages + 1; }
  Index stage_dim(int stage) const { return stage == 0 ? hidden_dim : refine_hidden_dim; }
  Index stage_ffn_dim(int stage) const { return stage == 0 ? ffn_dim : refine_ffn_dim; }
  Index stage_input_dim(int stage) const { return stage == 0 ? input_dim : num_classes; }

  /// Shortest sequence accepted by the forward pass.
  Index min_length() const { return architecture == Architecture::UTrans ? (Index{1} << layers) : 1; }

  /// Lengths of H_en^0 … H_en^N for an input of `length` frames.
  std::vector<Index> encoder_lengths(Index length) const {
    std::vector<Index> lens{length};
    for (int l = 1; l <= layers; ++l)
      lens.push_back(architecture == Architecture::UTrans ? (lens.back() + 1) / 2 : lens.back());
    return lens;
  }

  void validate() const;
};

/// Published settings for the three benchmark datasets (50salads, gtea, breakfast).
ModelConfig model_preset(const std::string& dataset);

struct ForwardContext {
  bool train = false;
  DropoutStreams* dropout = nullptr;

  CounterRng stream(const std::string& name) const { return dropout ? dropout->draw(name) : CounterRng(hash_name(name)); }
};

template <typename Scalar>
struct CoderLayerParams {
  std::string name;  // e.g. "stage0.enc1"
  int scale = 0;
  Tensor<Scalar> qkv_w, qkv_b;
  Tensor<Scalar> ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  Tensor<Scalar> norm1_w, norm1_b, norm2_w, norm2_b;
  Tensor<Scalar> rpe;  // undefined unless relative encoding is active
};

template <typename Scalar>
struct StageParams {
  int index = 0;
  Index dim = 0;
  Tensor<Scalar> proj_w, proj_b, cls_w, cls_b;
  Tensor<Scalar> ape;  // learnable absolute table, if any
  std::vector<CoderLayerParams<Scalar>> encoder;
  std::vector<CoderLayerParams<Scalar>> decoder;
};

template <typename Scalar>
struct StageResult {
  Tensor<Scalar> logits;
  Tensor<Scalar> probs;
  AttentionRecord<Scalar> encoder_first;
  AttentionRecord<Scalar> decoder_last;
  std::vector<Index> encoder_lengths;
  Index attention_entries = 0;
};

template <typename Scalar>
struct StageOutputs {
  std::vector<StageResult<Scalar>> stages;

  Index length() const { return stages.front().logits.rows(); }
  Index attention_entries() const {
    Index n = 0;
    for (const auto& s : stages) n += s.attention_entries;
    return n;
  }
  /// Per-frame argmax of the last stage.
  std::vector<int> prediction() const {
    const auto& logits = stages.back().logits.value();
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Index t = 0; t < logits.rows(); ++t) logits.row(t).maxCoeff(&out[static_cast<std::size_t>(t)]);
    return out;
  }
};

/// Keeps rows 0, 2, 4, …; the result has ⌈T/2⌉ rows.
template <typename Scalar>
Tensor<Scalar> downsample_nearest(const Tensor<Scalar>& x) {
  if (x.rows() == 0) throw EmptyInputError("downsample_nearest: empty sequence");
  std::vector<Index> idx;
  for (Index t = 0; t < x.rows(); t += 2) idx.push_back(t);
  return gather_rows(x, std::move(idx));
}

/// Row t of the result is row ⌊t/2⌋ of the input; requires rows = ⌈T/2⌉.
template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& x, Index target_length) {
  if (x.rows() != (target_length + 1) / 2)
    throw DimensionError("upsample_nearest: " + std::to_string(x.rows()) + " rows cannot restore length " +
                         std::to_string(target_length));
  std::vector<Index> idx;
  for (Index t = 0; t < target_length; ++t) idx.push_back(t / 2);
  return gather_rows(x, std::move(idx));
}

template <typename Scalar>
struct EncoderLayerOutput {
  Tensor<Scalar> hidden;
  AttentionRecord<Scalar> record;
  Index recorded_length = 0;  // length before downsampling
};

template <typename Scalar>
struct DecoderLayerOutput {
  Tensor<Scalar> hidden;
  AttentionRecord<Scalar> record;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> feed_forward(const Tensor<Scalar>& x, const CoderLayerParams<Scalar>& p, const ModelConfig& cfg,
                            const ForwardContext& ctx) {
  Tensor<Scalar> inner = relu(linear(x, p.ffn1_w, p.ffn1_b));
  inner = dropout(inner, cfg.ffn_dropout, ctx.stream(p.name + ".ffn"), ctx.train);
  return linear(inner, p.ffn2_w, p.ffn2_b);
}

template <typename Scalar>
AttentionDropout attention_dropout(const CoderLayerParams<Scalar>& p, const ModelConfig& cfg, const ForwardContext& ctx) {
  if (!ctx.train || cfg.attention.dropout <= 0.0) return {};
  return {cfg.attention.dropout, ctx.stream(p.name + ".attn"), true};
}

// attention → residual → IN → FFN → residual → IN
template <typename Scalar>
std::pair<Tensor<Scalar>, AttentionRecord<Scalar>> attention_block(const Tensor<Scalar>& query_in, const Tensor<Scalar>& q,
                                                                   const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                                                   const CoderLayerParams<Scalar>& p,
                                                                   const ModelConfig& cfg, const ForwardContext& ctx) {
  const Scalar eps = static_cast<Scalar>(cfg.norm_eps);
  const Tensor<Scalar>* rpe = p.rpe.defined() ? &p.rpe : nullptr;
  AttentionResult<Scalar> attn = attend(q, k, v, cfg.attention, rpe, attention_dropout(p, cfg, ctx));
  Tensor<Scalar> h2 = instance_norm_temporal(add(attn.output, query_in), p.norm1_w, p.norm1_b, eps);
  Tensor<Scalar> h3 = instance_norm_temporal(add(feed_forward(h2, p, cfg, ctx), h2), p.norm2_w, p.norm2_b, eps);
  return {h3, std::move(attn.record)};
}

}  // namespace detail

template <typename Scalar>
EncoderLayerOutput<Scalar> encoder_layer(const Tensor<Scalar>& prev, const CoderLayerParams<Scalar>& p,
                                         const ModelConfig& cfg, const ForwardContext& ctx) {
  if (prev.rows() == 0) throw EmptyInputError("encoder_layer: empty sequence");
  const Index d = prev.cols();
  Tensor<Scalar> h1 = prev;
  if (cfg.architecture == Architecture::UTrans) {
    if (prev.rows() < 2) throw ConfigError("too many layers for sequence length");
    h1 = downsample_nearest(prev);
  }
  Tensor<Scalar> qkv = linear(h1, p.qkv_w, p.qkv_b);
  auto [out, record] = detail::attention_block(h1, slice_cols(qkv, 0, d), slice_cols(qkv, d, d), slice_cols(qkv, 2 * d, d), p, cfg, ctx);
  return {out, std::move(record), prev.rows()};
}

template <typename Scalar>
DecoderLayerOutput<Scalar> decoder_layer(const Tensor<Scalar>& prev, const Tensor<Scalar>& peer, const CoderLayerParams<Scalar>& p,
                                         const ModelConfig& cfg, const ForwardContext& ctx) {
  const Index d = prev.cols();
  Tensor<Scalar> h1 = prev;
  if (cfg.architecture == Architecture::UTrans) h1 = upsample_nearest(prev, peer.rows());
  if (h1.rows() != peer.rows())
    throw DimensionError("decoder_layer: query length " + std::to_string(h1.rows()) + " differs from encoder peer length " +
                         std::to_string(peer.rows()));
  Tensor<Scalar> q = linear(h1, slice_cols(p.qkv_w, 0, d), slice_cols(p.qkv_b, 0, d));
  Tensor<Scalar> kv = linear(peer, slice_cols(p.qkv_w, d, 2 * d), slice_cols(p.qkv_b, d, 2 * d));
  auto [out, record] = detail::attention_block(h1, q, slice_cols(kv, 0, d), slice_cols(kv, d, d), p, cfg, ctx);
  return {out, std::move(record)};
}

/// input dropout (raw features only) → projection → [absolute PE] → encoder
/// → decoder → classifier. Decoder layer l reads encoder output N − l, where
/// output 0 is the projected stage input.
template <typename Scalar>
StageResult<Scalar> stage_forward(const Tensor<Scalar>& x, const StageParams<Scalar>& sp, const ModelConfig& cfg,
                                  const ForwardContext& ctx) {
  const Index T = x.rows();
  if (T < cfg.min_length())
    throw ConfigError("too many layers for sequence length: T=" + std::to_string(T) + " < 2^" + std::to_string(cfg.layers));
  const std::string prefix = "stage" + std::to_string(sp.index);
  Tensor<Scalar> in = x;
  if (sp.index == 0) in = dropout(in, cfg.input_dropout, ctx.stream(prefix + ".input"), ctx.train);
  Tensor<Scalar> h = linear(in, sp.proj_w, sp.proj_b);
  if (cfg.attention.pe_mode == PeMode::AbsSinusoidal) {
    h = add(h, Tensor<Scalar>::constant(sinusoidal_encoding<Scalar>(T, sp.dim)));
  } else if (cfg.attention.pe_mode == PeMode::AbsLearnable) {
    if (T > sp.ape.rows())
      throw ConfigError("sequence of " + std::to_string(T) + " frames exceeds max_positions=" + std::to_string(sp.ape.rows()));
    h = add(h, slice_rows(sp.ape, 0, T));
  }

  StageResult<Scalar> result;
  std::vector<Tensor<Scalar>> enc_out{h};
  result.encoder_lengths.push_back(T);
  for (std::size_t l = 0; l < sp.encoder.size(); ++l) {
    auto layer = encoder_layer(enc_out.back(), sp.encoder[l], cfg, ctx);
    result.attention_entries += layer.record.entry_count();
    if (l == 0) result.encoder_first = layer.record;
    enc_out.push_back(layer.hidden);
    result.encoder_lengths.push_back(layer.hidden.rows());
  }
  const std::size_t n = sp.decoder.size();
  Tensor<Scalar> dec = enc_out.back();
  for (std::size_t l = 1; l <= n; ++l) {
    auto layer = decoder_layer(dec, enc_out[n - l], sp.decoder[l - 1], cfg, ctx);
    result.attention_entries += layer.record.entry_count();
    if (l == n) result.decoder_last = layer.record;
    dec = layer.hidden;
  }
  result.logits = linear(dec, sp.cls_w, sp.cls_b);
  result.probs = softmax_lastdim(result.logits);
  return result;
}

/// One generation stage and `refinement_stages` refinement stages with
/// named parameters.
template <typename Scalar>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    for (int s = 0; s < cfg_.num_stages(); ++s) stages_.push_back(build_stage(s, seed));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }
  const std::vector<StageParams<Scalar>>& stages() const { return stages_; }

  StageOutputs<Scalar> forward(const Matrix<Scalar>& features, const ForwardContext& ctx) const {
    return forward(Tensor<Scalar>::constant(features), ctx);
  }

  StageOutputs<Scalar> forward(const Tensor<Scalar>& features, const ForwardContext& ctx) const {
    if (features.cols() != cfg_.input_dim)
      throw DimensionError("model input has " + std::to_string(features.cols()) + " channels, expected " +
                           std::to_string(cfg_.input_dim));
    StageOutputs<Scalar> out;
    Tensor<Scalar> x = features;
    for (const auto& sp : stages_) {
      out.stages.push_back(stage_forward(x, sp, cfg_, ctx));
      const auto& last = out.stages.back();
      x = cfg_.refinement_input == RefinementInput::Probabilities ? last.probs : last.logits;
    }
    return out;
  }

 private:
  Tensor<Scalar> uniform(const std::string& name, Index rows, Index cols, double bound, std::uint64_t seed) {
    CounterRng rng(mix64(seed ^ hash_name(name)));
    Matrix<Scalar> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
    return params_.add(name, std::move(m));
  }

  void linear_params(const std::string& name, Index in, Index out, std::uint64_t seed, Tensor<Scalar>& w, Tensor<Scalar>& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w = uniform(name + ".w", in, out, bound, seed);
    b = uniform(name + ".b", 1, out, bound, seed);
  }

  Tensor<Scalar> rpe_table(int stage, const std::string& coder, int layer, int scale) {
    const std::string name = rpe_table_name(cfg_.attention.rpe_share, stage, coder, layer, scale, cfg_.rpe_split_coders);
    if (params_.contains(name)) return params_.at(name);
    return params_.add(name, Matrix<Scalar>::Zero(cfg_.attention.window, cfg_.attention.heads));
  }

  CoderLayerParams<Scalar> build_layer(int stage, const std::string& coder, int layer, int scale, Index d, Index f,
                                       std::uint64_t seed) {
    CoderLayerParams<Scalar> p;
    p.name = "stage" + std::to_string(stage) + "." + coder + std::to_string(layer);
    p.scale = scale;
    linear_params(p.name + ".qkv", d, 3 * d, seed, p.qkv_w, p.qkv_b);
    linear_params(p.name + ".ffn1", d, f, seed, p.ffn1_w, p.ffn1_b);
    linear_params(p.name + ".ffn2", f, d, seed, p.ffn2_w, p.ffn2_b);
    p.norm1_w = params_.add(p.name + ".norm1.w", Matrix<Scalar>::Ones(1, d));
    p.norm1_b = params_.add(p.name + ".norm1.b", Matrix<Scalar>::Zero(1, d));
    p.norm2_w = params_.add(p.name + ".norm2.w", Matrix<Scalar>::Ones(1, d));
    p.norm2_b = params_.add(p.name + ".norm2.b", Matrix<Scalar>::Zero(1, d));
    if (cfg_.attention.pe_mode == PeMode::Relative) p.rpe = rpe_table(stage, coder, layer, scale);
    return p;
  }

  StageParams<Scalar> build_stage(int s, std::uint64_t seed) {
    StageParams<Scalar> sp;
    sp.index = s;
    sp.dim = cfg_.stage_dim(s);
    const Index f = cfg_.stage_ffn_dim(s);
    const std::string prefix = "stage" + std::to_string(s);
    linear_params(prefix + ".proj", cfg_.stage_input_dim(s), sp.dim, seed, sp.proj_w, sp.proj_b);
    if (cfg_.attention.pe_mode == PeMode::AbsLearnable) {
      sp.ape = uniform(prefix + ".ape.w", cfg_.max_positions, sp.dim, 0.02, seed);
    }
    const bool resample = cfg_.architecture == Architecture::UTrans;
    for (int l = 1; l <= cfg_.layers; ++l) sp.encoder.push_back(build_layer(s, "enc", l, resample ? l : 0, sp.dim, f, seed));
    for (int l = 1; l <= cfg_.layers; ++l)
      sp.decoder.push_back(build_layer(s, "dec", l, resample ? cfg_.layers - l : 0, sp.dim, f, seed));
    linear_params(prefix + ".cls", sp.dim, cfg_.num_classes, seed, sp.cls_w, sp.cls_b);
    return sp;
  }

  ModelConfig cfg_;
  ParamStore<Scalar> params_;
  std::vector<StageParams<Scalar>> stages_;
};

template <typename Scalar>
StageOutputs<Scalar> model_forward(const Matrix<Scalar>& features, const Model<Scalar>& model, const ForwardContext& ctx) {
  return model.forward(features, ctx);
}

/// Retained attention entries for one forward pass of `length` frames,
/// counted from the layer lengths without running the model.
Index model_attention_entries(const ModelConfig& cfg, Index length);

}  // namespace tut
