#include "nerv360/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nerv360 {

// ---------------------------------------------------------------- config

Index ModelConfig::stride_product() const {
  return std::accumulate(strides.begin(), strides.end(), Index{1},
                         [](Index a, int s) { return a * s; });
}

void ModelConfig::validate() const {
  if (strides.empty()) throw std::invalid_argument("model needs at least one stride");
  for (int s : strides) {
    if (s < 1) throw std::invalid_argument("strides must be >= 1");
  }
  if (c1 < 1 || d < 1) throw std::invalid_argument("c1 and d must be >= 1");
  if (c2 != 0 && c2 < d) throw std::invalid_argument("c2 must be >= d");
  if (!(reduction > 1.0)) throw std::invalid_argument("reduction factor must exceed 1");
  if (generator_hidden < 1) throw std::invalid_argument("generator_hidden must be >= 1");
  if (min_channels < 1) throw std::invalid_argument("min_channels must be >= 1");
  pe.validate();
}

std::vector<DecoderStage> decoder_plan(const ModelConfig& cfg, Index c2) {
  std::vector<DecoderStage> plan;
  Index in = c2;
  for (int s : cfg.strides) {
    const Index out = std::max<Index>(std::lround(static_cast<double>(in) / cfg.reduction),
                                      cfg.min_channels);
    plan.push_back({in, out, s});
    in = out;
  }
  return plan;
}

std::int64_t decoder_parameter_count(const ModelConfig& cfg, Index c2) {
  const Index hidden = cfg.generator_hidden;
  const auto view_inputs =
      cfg.stat_view_inputs ? ConditioningInputs::time_and_view : ConditioningInputs::time;
  std::int64_t total = cfg.d * 9 * c2 + c2;
  total += affine_generator_parameters(ConditioningInputs::time, cfg.pe, hidden, c2);
  Index last = c2;
  for (const auto& st : decoder_plan(cfg, c2)) {
    const Index expanded = st.out_channels * st.upsample * st.upsample;
    total += st.in_channels * 9 * expanded + expanded;
    total += st.out_channels * 9 * st.out_channels + st.out_channels;
    total += affine_generator_parameters(view_inputs, cfg.pe, hidden, st.out_channels);
    last = st.out_channels;
  }
  total += last * 9 * 3 + 3;
  return total;
}

Index solve_decoder_width(std::int64_t param_target, const ModelConfig& cfg) {
  const Index start = std::max<Index>(cfg.d, cfg.min_channels);
  const std::int64_t floor_count = decoder_parameter_count(cfg, start);
  if (param_target < floor_count) {
    throw InfeasibleTarget("parameter target " + std::to_string(param_target) +
                           " is below the minimum decoder size " + std::to_string(floor_count));
  }
  const double lower = 0.95 * static_cast<double>(param_target);
  for (Index c2 = start;; ++c2) {
    const std::int64_t count = decoder_parameter_count(cfg, c2);
    if (count > param_target) break;
    if (static_cast<double>(count) >= lower) return c2;
  }
  throw InfeasibleTarget("no decoder width lands within 5% of " + std::to_string(param_target));
}

ModelConfig resolve_config(ModelConfig cfg) {
  cfg.validate();
  if (cfg.c2 == 0) cfg.c2 = static_cast<int>(solve_decoder_width(cfg.param_target, cfg));
  return cfg;
}

// ------------------------------------------------------------------ STAT

template <typename Scalar>
Tensor<Scalar> stat(const Tensor<Scalar>& f, const AffineParams<Scalar>& p) {
  if (p.gamma.size() != f.channels() || p.beta.size() != f.channels()) {
    throw ShapeError("stat: " + std::to_string(p.gamma.size()) + " affine channels for a " +
                     to_string(f.shape()) + " feature map");
  }
  Tensor<Scalar> out(f.shape());
  out.mat() = (f.mat().array().colwise() * p.gamma.array()).colwise() + p.beta.array();
  return out;
}

template <typename Scalar>
Tensor<Scalar> stat_backward(const Tensor<Scalar>& f, const AffineParams<Scalar>& p,
                             const Tensor<Scalar>& grad_out, AffineParams<Scalar>& grad_params) {
  require_shape(grad_out, f.shape(), "stat backward");
  grad_params.gamma = (grad_out.mat().array() * f.mat().array()).rowwise().sum().matrix();
  grad_params.beta = grad_out.mat().rowwise().sum();
  Tensor<Scalar> df(f.shape());
  df.mat() = grad_out.mat().array().colwise() * p.gamma.array();
  return df;
}

// ----------------------------------------------------------- SNeRVBlock

template <typename Scalar>
SNeRVBlock<Scalar>::SNeRVBlock(const std::string& name, Index in_channels, Index out_channels,
                               Index stride_)
    : conv(name + ".conv", in_channels, out_channels * stride_ * stride_, 3, 1),
      stride(stride_),
      out_channels(out_channels) {
  if (stride_ < 1) throw std::invalid_argument("SNeRV stride must be >= 1");
}

template <typename Scalar>
Shape SNeRVBlock<Scalar>::output_shape(const Shape& in) const {
  const Shape c = conv.output_shape(in);
  return {out_channels, c.height * stride, c.width * stride};
}

template <typename Scalar>
Tensor<Scalar> SNeRVBlock<Scalar>::forward(const Tensor<Scalar>& x, Cache* cache) const {
  Tensor<Scalar> pre = depth_to_space(conv.forward(x), stride);
  Tensor<Scalar> out = sine(pre);
  if (cache) {
    cache->input = x;
    cache->pre_activation = std::move(pre);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> SNeRVBlock<Scalar>::backward(Cache& cache, const Tensor<Scalar>& grad_out,
                                            bool input_grad) {
  Tensor<Scalar> d_pre = sine_backward(cache.pre_activation, grad_out);
  cache.pre_activation.release();
  Tensor<Scalar> dx = conv.backward(cache.input, space_to_depth(d_pre, stride), input_grad);
  cache.input.release();
  return dx;
}

// ---------------------------------------------------- StatResidualBlock

template <typename Scalar>
StatResidualBlock<Scalar>::StatResidualBlock(const std::string& name, Index channels,
                                             ConditioningInputs inputs, const PEConfig& pe,
                                             Index hidden)
    : generator(name + ".stat", inputs, pe, hidden, channels),
      conv(name + ".conv", channels, channels, 3, 1) {}

template <typename Scalar>
void StatResidualBlock<Scalar>::init(std::mt19937_64& rng) {
  generator.init(rng);
  conv.init(rng);
}

template <typename Scalar>
void StatResidualBlock<Scalar>::collect(ParameterList<Scalar>& out) {
  generator.collect(out);
  conv.collect(out);
}

template <typename Scalar>
Tensor<Scalar> StatResidualBlock<Scalar>::forward(const Tensor<Scalar>& x,
                                                  const NormalizedView& view, Cache* cache) const {
  AffineParams<Scalar> params =
      generator.forward(view, cache ? &cache->generator : nullptr);
  Tensor<Scalar> modulated = stat(x, params);
  Tensor<Scalar> activated = gelu(modulated);
  Tensor<Scalar> out = conv.forward(activated);
  add_inplace(out, x);
  if (cache) {
    cache->input = x;
    cache->modulated = std::move(modulated);
    cache->activated = std::move(activated);
    cache->params = std::move(params);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> StatResidualBlock<Scalar>::backward(Cache& cache, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> d_act = conv.backward(cache.activated, grad_out);
  cache.activated.release();
  Tensor<Scalar> d_mod = gelu_backward(cache.modulated, d_act);
  cache.modulated.release();
  AffineParams<Scalar> d_params;
  Tensor<Scalar> dx = stat_backward(cache.input, cache.params, d_mod, d_params);
  cache.input.release();
  generator.backward(cache.generator, d_params);
  add_inplace(dx, grad_out);
  return dx;
}

// -------------------------------------------------------------- Encoder

template <typename Scalar>
Encoder<Scalar>::Encoder(const ModelConfig& cfg)
    : projection("encoder.projection", cfg.c1, cfg.d, 1, 1), stride_product(cfg.stride_product()) {
  Index in = 3;
  for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
    const std::string name = "encoder.stage" + std::to_string(i);
    convs.emplace_back(name + ".conv", in, cfg.c1, 3, cfg.strides[i]);
    norms.emplace_back(name + ".norm", cfg.c1);
    in = cfg.c1;
  }
}

template <typename Scalar>
void Encoder<Scalar>::init(std::mt19937_64& rng) {
  for (auto& c : convs) c.init(rng);
  projection.init(rng);
}

template <typename Scalar>
void Encoder<Scalar>::collect(ParameterList<Scalar>& out) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect(out);
    norms[i].collect(out);
  }
  projection.collect(out);
}

template <typename Scalar>
Shape Encoder<Scalar>::output_shape(const Shape& frame) const {
  if (frame.channels != 3) throw ShapeError("encoder expects 3-channel frames, got " + to_string(frame));
  if (frame.height % stride_product != 0 || frame.width % stride_product != 0) {
    throw ShapeError("frame " + to_string(frame) + " is not divisible by the stride product " +
                     std::to_string(stride_product));
  }
  Shape s = frame;
  for (const auto& c : convs) s = c.output_shape(s);
  return projection.output_shape(s);
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::forward(const Tensor<Scalar>& frame, Cache* cache) const {
  output_shape(frame.shape());
  if (cache) cache->stages.assign(convs.size(), StageCache{});
  Tensor<Scalar> x = frame;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    Tensor<Scalar> conv_out = convs[i].forward(x);
    Tensor<Scalar> normed = norms[i].forward(conv_out, cache ? &cache->stages[i].norm : nullptr);
    conv_out.release();
    Tensor<Scalar> next = gelu(normed);
    if (cache) {
      cache->stages[i].input = std::move(x);
      cache->stages[i].normed = std::move(normed);
    }
    x = std::move(next);
  }
  Tensor<Scalar> out = projection.forward(x);
  if (cache) cache->projection_input = std::move(x);
  return out;
}

template <typename Scalar>
void Encoder<Scalar>::backward(Cache& cache, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> dx = projection.backward(cache.projection_input, grad_out);
  cache.projection_input.release();
  for (std::size_t k = convs.size(); k-- > 0;) {
    auto& st = cache.stages[k];
    Tensor<Scalar> d_norm = gelu_backward(st.normed, dx);
    st.normed.release();
    Tensor<Scalar> d_conv = norms[k].backward(st.norm, d_norm);
    st.norm = {};
    dx = convs[k].backward(st.input, d_conv, k > 0);
    st.input.release();
  }
}

// ------------------------------------------------------ ChannelExpansion

template <typename Scalar>
ChannelExpansion<Scalar>::ChannelExpansion(const ModelConfig& cfg)
    : block("expansion", cfg.d, cfg.c2, 1),
      tat("expansion.tat", ConditioningInputs::time, cfg.pe, cfg.generator_hidden, cfg.c2) {
  if (cfg.c2 < 1) throw std::invalid_argument("ChannelExpansion needs a resolved c2");
}

template <typename Scalar>
void ChannelExpansion<Scalar>::init(std::mt19937_64& rng) {
  block.init(rng);
  tat.init(rng);
}

template <typename Scalar>
void ChannelExpansion<Scalar>::collect(ParameterList<Scalar>& out) {
  block.collect(out);
  tat.collect(out);
}

template <typename Scalar>
Tensor<Scalar> ChannelExpansion<Scalar>::forward(const Tensor<Scalar>& y, double t_hat,
                                                 Cache* cache,
                                                 const AffineParams<Scalar>* override_params) const {
  Tensor<Scalar> h = block.forward(y, cache ? &cache->block : nullptr);
  AffineParams<Scalar> params =
      override_params ? *override_params
                      : tat.forward(NormalizedView{t_hat, 0.0, 0.0},
                                    cache ? &cache->generator : nullptr);
  Tensor<Scalar> out = stat(h, params);
  if (cache) {
    cache->block_output = std::move(h);
    cache->params = std::move(params);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ChannelExpansion<Scalar>::backward(Cache& cache, const Tensor<Scalar>& grad_out) {
  AffineParams<Scalar> d_params;
  Tensor<Scalar> dh = stat_backward(cache.block_output, cache.params, grad_out, d_params);
  cache.block_output.release();
  tat.backward(cache.generator, d_params);
  return block.backward(cache.block, dh);
}

// ------------------------------------------------------- ViewportDecoder

template <typename Scalar>
ViewportDecoder<Scalar>::ViewportDecoder(const ModelConfig& cfg, Index c2) {
  const auto inputs =
      cfg.stat_view_inputs ? ConditioningInputs::time_and_view : ConditioningInputs::time;
  Index last = c2;
  const auto plan = decoder_plan(cfg, c2);
  for (std::size_t j = 0; j < plan.size(); ++j) {
    const std::string name = "decoder.stage" + std::to_string(j);
    upsample.emplace_back(name + ".snerv", plan[j].in_channels, plan[j].out_channels,
                          plan[j].upsample);
    residual.emplace_back(name + ".residual", plan[j].out_channels, inputs, cfg.pe,
                          cfg.generator_hidden);
    last = plan[j].out_channels;
  }
  head = Conv2d<Scalar>("decoder.head", last, 3, 3, 1);
}

template <typename Scalar>
void ViewportDecoder<Scalar>::init(std::mt19937_64& rng) {
  for (std::size_t j = 0; j < upsample.size(); ++j) {
    upsample[j].init(rng);
    residual[j].init(rng);
  }
  head.init(rng);
}

template <typename Scalar>
void ViewportDecoder<Scalar>::collect(ParameterList<Scalar>& out) {
  for (std::size_t j = 0; j < upsample.size(); ++j) {
    upsample[j].collect(out);
    residual[j].collect(out);
  }
  head.collect(out);
}

template <typename Scalar>
Shape ViewportDecoder<Scalar>::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& up : upsample) s = up.output_shape(s);
  return head.output_shape(s);
}

template <typename Scalar>
Tensor<Scalar> ViewportDecoder<Scalar>::forward(const Tensor<Scalar>& y_vp,
                                                const NormalizedView& view, Cache* cache) const {
  output_shape(y_vp.shape());
  if (cache) {
    cache->upsample.assign(upsample.size(), {});
    cache->residual.assign(residual.size(), {});
  }
  Tensor<Scalar> x = y_vp;
  for (std::size_t j = 0; j < upsample.size(); ++j) {
    x = upsample[j].forward(x, cache ? &cache->upsample[j] : nullptr);
    if (half_activations) round_to_half(x);
    x = residual[j].forward(x, view, cache ? &cache->residual[j] : nullptr);
    if (half_activations) round_to_half(x);
  }
  Tensor<Scalar> out = sigmoid(head.forward(x));
  if (cache) {
    cache->head_input = std::move(x);
    cache->output = out;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ViewportDecoder<Scalar>::backward(Cache& cache, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> dx = head.backward(cache.head_input, sigmoid_backward(cache.output, grad_out));
  cache.head_input.release();
  cache.output.release();
  for (std::size_t j = upsample.size(); j-- > 0;) {
    dx = residual[j].backward(cache.residual[j], dx);
    dx = upsample[j].backward(cache.upsample[j], dx);
  }
  return dx;
}

// ---------------------------------------------------------------- Model

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(resolve_config(cfg)),
      encoder_(cfg_),
      expansion_(cfg_),
      decoder_(cfg_, cfg_.c2) {
  std::mt19937_64 rng(seed);
  encoder_.init(rng);
  expansion_.init(rng);
  decoder_.init(rng);
}

template <typename Scalar>
Shape Model<Scalar>::embedding_shape(const Shape& frame) const {
  return encoder_.output_shape(frame);
}

template <typename Scalar>
ShapeReport Model<Scalar>::trace_shapes(const Shape& frame, const ViewportSpec& spec) const {
  ShapeReport r;
  r.frame = frame;
  r.embedding = encoder_.output_shape(frame);
  const ViewportSpec embed_spec = spec.downscaled(cfg_.stride_product());
  if (cfg_.expand_before_extract) {
    r.expanded = expansion_.output_shape(r.embedding);
    r.embedding_viewport = {r.expanded.channels, embed_spec.out_h, embed_spec.out_w};
  } else {
    r.embedding_viewport =
        expansion_.output_shape({r.embedding.channels, embed_spec.out_h, embed_spec.out_w});
    r.expanded = r.embedding_viewport;
  }
  r.output = decoder_.output_shape(r.embedding_viewport);
  return r;
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::encode(const Tensor<Scalar>& frame) const {
  return encoder_.forward(frame);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::expand_channels(const Tensor<Scalar>& y, double t_hat) const {
  return expansion_.forward(y, t_hat);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::decode_viewport(const Tensor<Scalar>& y_vp,
                                              const NormalizedView& view) const {
  return decoder_.forward(y_vp, view);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::embedding_to_viewport(const Tensor<Scalar>& embedding,
                                                    const ViewState& state,
                                                    const ViewportSpec& spec,
                                                    std::int64_t num_frames,
                                                    ForwardTrace<Scalar>* trace) const {
  const NormalizedView view = normalize_view(state, num_frames);
  const ViewportSpec embed_spec = spec.downscaled(cfg_.stride_product());
  BilinearPlan plan = make_bilinear_plan(
      viewport_grid(state.theta, state.phi, embed_spec, embedding.height(), embedding.width()));
  auto* exp_cache = trace ? &trace->expansion : nullptr;
  Tensor<Scalar> y_vp;
  if (cfg_.expand_before_extract) {
    y_vp = bilinear_sample(expansion_.forward(embedding, view.t, exp_cache), plan);
  } else {
    y_vp = expansion_.forward(bilinear_sample(embedding, plan), view.t, exp_cache);
  }
  Tensor<Scalar> out = decoder_.forward(y_vp, view, trace ? &trace->decoder : nullptr);
  if (trace) {
    trace->plan = std::move(plan);
    trace->embedding_shape = embedding.shape();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::render_viewport(const Tensor<Scalar>& embedding,
                                              const ViewState& state, const ViewportSpec& spec,
                                              std::int64_t num_frames) const {
  return embedding_to_viewport(embedding, state, spec, num_frames, nullptr);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& frame, const ViewState& state,
                                      const ViewportSpec& spec, std::int64_t num_frames) const {
  return embedding_to_viewport(encode(frame), state, spec, num_frames, nullptr);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& frame, const ViewState& state,
                                      const ViewportSpec& spec, std::int64_t num_frames,
                                      ForwardTrace<Scalar>& trace) const {
  const Tensor<Scalar> embedding = encoder_.forward(frame, &trace.encoder);
  return embedding_to_viewport(embedding, state, spec, num_frames, &trace);
}

template <typename Scalar>
void Model<Scalar>::backward(ForwardTrace<Scalar>& trace, const Tensor<Scalar>& grad_output) {
  const Tensor<Scalar> d_vp = decoder_.backward(trace.decoder, grad_output);
  Tensor<Scalar> d_embedding;
  if (cfg_.expand_before_extract) {
    d_embedding = expansion_.backward(trace.expansion, bilinear_sample_backward(d_vp, trace.plan));
  } else {
    d_embedding = bilinear_sample_backward(expansion_.backward(trace.expansion, d_vp), trace.plan);
  }
  encoder_.backward(trace.encoder, d_embedding);
}

template <typename Scalar>
ParameterList<Scalar> Model<Scalar>::parameters() {
  ParameterList<Scalar> out;
  encoder_.collect(out);
  expansion_.collect(out);
  decoder_.collect(out);
  return out;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> Model<Scalar>::parameters() const {
  auto list = const_cast<Model*>(this)->parameters();
  return {list.begin(), list.end()};
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Scalar>
Index Model<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename Scalar>
Index Model<Scalar>::decoder_parameter_count() const {
  ParameterList<Scalar> list;
  auto& self = const_cast<Model&>(*this);
  self.expansion_.collect(list);
  self.decoder_.collect(list);
  Index n = 0;
  for (const auto* p : list) n += p->size();
  return n;
}

#define NERV360_INSTANTIATE_MODEL(S)                                                        \
  template Tensor<S> stat(const Tensor<S>&, const AffineParams<S>&);                        \
  template Tensor<S> stat_backward(const Tensor<S>&, const AffineParams<S>&,                \
                                   const Tensor<S>&, AffineParams<S>&);                     \
  template class SNeRVBlock<S>;                                                             \
  template class StatResidualBlock<S>;                                                      \
  template class Encoder<S>;                                                                \
  template class ChannelExpansion<S>;                                                       \
  template class ViewportDecoder<S>;                                                        \
  template class Model<S>;

NERV360_INSTANTIATE_MODEL(float)
NERV360_INSTANTIATE_MODEL(double)

}  // namespace nerv360
