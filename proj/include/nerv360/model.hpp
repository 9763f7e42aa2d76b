#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nerv360/conditioning.hpp"
#include "nerv360/geometry.hpp"
#include "nerv360/layers.hpp"
#include "nerv360/tensor.hpp"

namespace nerv360 {

struct ModelConfig {
  std::vector<int> strides{3, 2, 2, 2};
  int c1 = 64;  // encoder width
  int d = 1;    // embedding channels
  int c2 = 0;   // expanded channels; 0 means "solve from param_target"
  double reduction = 1.2;
  PEConfig pe;
  int generator_hidden = 128;
  std::int64_t param_target = 2'200'000;
  int min_channels = 8;
  // Ablation switches; the defaults are the full method.
  bool expand_before_extract = true;
  bool stat_view_inputs = true;

  Index stride_product() const;
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DecoderStage {
  Index in_channels = 0;
  Index out_channels = 0;
  Index upsample = 1;
};

// out_j = max(round(in_j / r), min_channels); upsample factors follow the strides.
std::vector<DecoderStage> decoder_plan(const ModelConfig& cfg, Index c2);

// Expansion layer + decoder stages + STAT/TAT generators + output head.
std::int64_t decoder_parameter_count(const ModelConfig& cfg, Index c2);

class InfeasibleTarget : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Smallest c2 whose decoder parameter count lies in [0.95 * target, target].
Index solve_decoder_width(std::int64_t param_target, const ModelConfig& cfg);

// Returns cfg with c2 filled in from param_target when it is 0.
ModelConfig resolve_config(ModelConfig cfg);

// Per-channel affine modulation: out[c] = gamma[c] * f[c] + beta[c].
template <typename Scalar>
Tensor<Scalar> stat(const Tensor<Scalar>& f, const AffineParams<Scalar>& p);

// Returns dL/df and writes dL/dgamma, dL/dbeta into grad_params.
template <typename Scalar>
Tensor<Scalar> stat_backward(const Tensor<Scalar>& f, const AffineParams<Scalar>& p,
                             const Tensor<Scalar>& grad_out, AffineParams<Scalar>& grad_params);

// 3x3 conv to out*s^2 channels, depth-to-space by s, then sin().
template <typename Scalar>
class SNeRVBlock {
 public:
  struct Cache {
    Tensor<Scalar> input;
    Tensor<Scalar> pre_activation;
  };

  SNeRVBlock() = default;
  SNeRVBlock(const std::string& name, Index in_channels, Index out_channels, Index stride);

  void init(std::mt19937_64& rng) { conv.init(rng); }
  Shape output_shape(const Shape& in) const;
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* cache = nullptr) const;
  Tensor<Scalar> backward(Cache& cache, const Tensor<Scalar>& grad_out, bool input_grad = true);
  void collect(ParameterList<Scalar>& out) { conv.collect(out); }

  Conv2d<Scalar> conv;
  Index stride = 1;
  Index out_channels = 0;
};

// x + Conv3x3(GELU(STAT(x; gamma, beta))) with its own conditioning generator.
template <typename Scalar>
class StatResidualBlock {
 public:
  struct Cache {
    Tensor<Scalar> input;
    Tensor<Scalar> modulated;
    Tensor<Scalar> activated;
    AffineParams<Scalar> params;
    typename AffineGenerator<Scalar>::Cache generator;
  };

  StatResidualBlock() = default;
  StatResidualBlock(const std::string& name, Index channels, ConditioningInputs inputs,
                    const PEConfig& pe, Index hidden);

  void init(std::mt19937_64& rng);
  Tensor<Scalar> forward(const Tensor<Scalar>& x, const NormalizedView& view,
                         Cache* cache = nullptr) const;
  Tensor<Scalar> backward(Cache& cache, const Tensor<Scalar>& grad_out);
  void collect(ParameterList<Scalar>& out);

  AffineGenerator<Scalar> generator;
  Conv2d<Scalar> conv;
};

// Strided 3x3 conv -> channel LayerNorm -> GELU per stage, then 1x1 to d.
template <typename Scalar>
class Encoder {
 public:
  struct StageCache {
    Tensor<Scalar> input;
    typename ChannelLayerNorm<Scalar>::Cache norm;
    Tensor<Scalar> normed;
  };
  struct Cache {
    std::vector<StageCache> stages;
    Tensor<Scalar> projection_input;
  };

  Encoder() = default;
  explicit Encoder(const ModelConfig& cfg);

  void init(std::mt19937_64& rng);
  Shape output_shape(const Shape& frame) const;
  Tensor<Scalar> forward(const Tensor<Scalar>& frame, Cache* cache = nullptr) const;
  void backward(Cache& cache, const Tensor<Scalar>& grad_out);
  void collect(ParameterList<Scalar>& out);

  std::vector<Conv2d<Scalar>> convs;
  std::vector<ChannelLayerNorm<Scalar>> norms;
  Conv2d<Scalar> projection;
  Index stride_product = 1;
};

// Stride-1 SNeRV block d -> c2 followed by time-conditioned modulation.
template <typename Scalar>
class ChannelExpansion {
 public:
  struct Cache {
    typename SNeRVBlock<Scalar>::Cache block;
    Tensor<Scalar> block_output;
    AffineParams<Scalar> params;
    typename AffineGenerator<Scalar>::Cache generator;
  };

  ChannelExpansion() = default;
  explicit ChannelExpansion(const ModelConfig& cfg);

  void init(std::mt19937_64& rng);
  Shape output_shape(const Shape& in) const { return block.output_shape(in); }
  // `override_params` replaces the generated (gamma, beta) when non-null.
  Tensor<Scalar> forward(const Tensor<Scalar>& y, double t_hat, Cache* cache = nullptr,
                         const AffineParams<Scalar>* override_params = nullptr) const;
  Tensor<Scalar> backward(Cache& cache, const Tensor<Scalar>& grad_out);
  void collect(ParameterList<Scalar>& out);

  SNeRVBlock<Scalar> block;
  AffineGenerator<Scalar> tat;
};

template <typename Scalar>
class ViewportDecoder {
 public:
  struct Cache {
    std::vector<typename SNeRVBlock<Scalar>::Cache> upsample;
    std::vector<typename StatResidualBlock<Scalar>::Cache> residual;
    Tensor<Scalar> head_input;
    Tensor<Scalar> output;
  };

  ViewportDecoder() = default;
  ViewportDecoder(const ModelConfig& cfg, Index c2);

  void init(std::mt19937_64& rng);
  Shape output_shape(const Shape& in) const;
  Tensor<Scalar> forward(const Tensor<Scalar>& y_vp, const NormalizedView& view,
                         Cache* cache = nullptr) const;
  Tensor<Scalar> backward(Cache& cache, const Tensor<Scalar>& grad_out);
  void collect(ParameterList<Scalar>& out);

  std::vector<SNeRVBlock<Scalar>> upsample;
  std::vector<StatResidualBlock<Scalar>> residual;
  Conv2d<Scalar> head;
  bool half_activations = false;
};

// Intermediates of one training forward pass.
template <typename Scalar>
struct ForwardTrace {
  typename Encoder<Scalar>::Cache encoder;
  typename ChannelExpansion<Scalar>::Cache expansion;
  typename ViewportDecoder<Scalar>::Cache decoder;
  BilinearPlan plan;
  Shape embedding_shape;
};

struct ShapeReport {
  Shape frame;
  Shape embedding;
  Shape expanded;
  Shape embedding_viewport;
  Shape output;
};

template <typename Scalar>
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }

  Shape embedding_shape(const Shape& frame) const;
  // Propagates shapes through every layer without computing activations.
  ShapeReport trace_shapes(const Shape& frame, const ViewportSpec& spec) const;

  Tensor<Scalar> encode(const Tensor<Scalar>& frame) const;
  Tensor<Scalar> expand_channels(const Tensor<Scalar>& y, double t_hat) const;
  Tensor<Scalar> decode_viewport(const Tensor<Scalar>& y_vp, const NormalizedView& view) const;

  // Decoder-side path from a cached embedding: expand, extract, decode.
  Tensor<Scalar> render_viewport(const Tensor<Scalar>& embedding, const ViewState& state,
                                 const ViewportSpec& spec, std::int64_t num_frames) const;

  Tensor<Scalar> forward(const Tensor<Scalar>& frame, const ViewState& state,
                         const ViewportSpec& spec, std::int64_t num_frames) const;
  Tensor<Scalar> forward(const Tensor<Scalar>& frame, const ViewState& state,
                         const ViewportSpec& spec, std::int64_t num_frames,
                         ForwardTrace<Scalar>& trace) const;
  // Accumulates dL/dparams; consumes the trace.
  void backward(ForwardTrace<Scalar>& trace, const Tensor<Scalar>& grad_output);

  ParameterList<Scalar> parameters();
  std::vector<const Parameter<Scalar>*> parameters() const;
  void zero_grad();
  Index parameter_count() const;
  Index decoder_parameter_count() const;
  std::size_t parameter_bytes() const { return parameter_count() * sizeof(Scalar); }

  void set_half_precision_activations(bool on) { decoder_.half_activations = on; }

  const Encoder<Scalar>& encoder() const { return encoder_; }
  const ChannelExpansion<Scalar>& expansion() const { return expansion_; }
  const ViewportDecoder<Scalar>& decoder() const { return decoder_; }
  Encoder<Scalar>& encoder() { return encoder_; }
  ChannelExpansion<Scalar>& expansion() { return expansion_; }
  ViewportDecoder<Scalar>& decoder() { return decoder_; }

 private:
  Tensor<Scalar> embedding_to_viewport(const Tensor<Scalar>& embedding, const ViewState& state,
                                       const ViewportSpec& spec, std::int64_t num_frames,
                                       ForwardTrace<Scalar>* trace) const;

  ModelConfig cfg_;
  Encoder<Scalar> encoder_;
  ChannelExpansion<Scalar> expansion_;
  ViewportDecoder<Scalar> decoder_;
};

}  // namespace nerv360
