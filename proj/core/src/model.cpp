#include "mmfusion/model.hpp"

#include <cmath>
#include <string>

#include "mmfusion/error.hpp"

namespace mmfusion {

ModelDims ModelDims::compact() {
  ModelDims dims;
  dims.seq_len = 6;
  dims.text_dim = 5;
  dims.conv_filters = 4;
  dims.text_hidden = 6;
  dims.global_dim = 7;
  dims.visual_hidden = 6;
  dims.n_regions = 4;
  dims.region_dim = 3;
  dims.d = 4;
  return dims;
}

void validate(const ModelDims& dims) {
  if (dims.seq_len < kTextKernelSizes.back() || dims.seq_len < kPool) {
    fail(ErrorKind::configuration, "sequence length " + std::to_string(dims.seq_len) +
                                       " is shorter than the widest text kernel");
  }
  if (dims.d < 2) fail(ErrorKind::configuration, "representation width must be at least 2");
  for (std::size_t v : {dims.text_dim, dims.conv_filters, dims.text_hidden, dims.global_dim, dims.visual_hidden,
                        dims.n_regions, dims.region_dim}) {
    if (v == 0) fail(ErrorKind::configuration, "model dimensions must be positive");
  }
}

void validate(const SampleFeatures& sample, const ModelDims& dims) {
  auto expect = [&](const Tensor<float>& t, const Shape& shape, const char* what) {
    if (t.shape() != shape) {
      fail(ErrorKind::dimension, "sample " + std::to_string(sample.id) + ": " + what + " has shape " +
                                     shape_string(t.shape()) + ", expected " + shape_string(shape));
    }
  };
  expect(sample.tokens, {dims.seq_len, dims.text_dim}, "tokens");
  expect(sample.image_global, {dims.global_dim}, "image_global");
  expect(sample.image_regions, {dims.n_regions, dims.region_dim}, "image_regions");
  if (sample.label > 1) {
    fail(ErrorKind::dimension, "sample " + std::to_string(sample.id) + ": label must be 0 or 1");
  }
}

namespace {

template <typename T, typename Fn>
void for_each_param(ModelParams<T>& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.text_conv.size(); ++i) {
    const std::string base = "text.conv" + std::to_string(kTextKernelSizes[i]);
    fn(base + ".kernel", p.text_conv[i].kernel);
    fn(base + ".bias", p.text_conv[i].bias);
  }
  for (std::size_t i = 0; i < p.text_residual.size(); ++i) {
    const std::string base = "text.residual" + std::to_string(i + 1);
    fn(base + ".kernel", p.text_residual[i].kernel);
    fn(base + ".bias", p.text_residual[i].bias);
  }
  auto dense = [&](const std::string& base, Dense<T>& d) {
    fn(base + ".weight", d.weight);
    fn(base + ".bias", d.bias);
  };
  dense("text.hidden", p.text_hidden);
  dense("text.out", p.text_out);
  dense("image.hidden", p.image_hidden);
  dense("image.out", p.image_out);
  dense("image.region", p.region_proj);
  auto attention = [&](const std::string& base, AttentionParams<T>& a) {
    fn(base + ".w_query", a.w_query);
    fn(base + ".w_key", a.w_key);
    fn(base + ".w_value", a.w_value);
    for (std::size_t i = 0; i < a.branches.size(); ++i) dense(base + ".branch" + std::to_string(i), a.branches[i]);
    dense(base + ".merge", a.merge);
    fn(base + ".norm.gain", a.norm_gain);
    fn(base + ".norm.bias", a.norm_bias);
  };
  attention("attn.t2i", p.text_to_image);
  attention("attn.i2t", p.image_to_text);
  attention("attn.i2i", p.image_to_image);
  dense("fusion.self_flatten", p.self_flatten);
  dense("fusion.combine", p.combine);
  dense("fusion.output", p.output);
}

template <typename T>
Dense<T> dense_shape(std::size_t in, std::size_t out) {
  return Dense<T>{Tensor<T>({in, out}), Tensor<T>({out})};
}

template <typename T>
AttentionParams<T> attention_shape(std::size_t query_width, std::size_t key_width, std::size_t d) {
  AttentionParams<T> a;
  a.w_query = Tensor<T>({query_width, d});
  a.w_key = Tensor<T>({key_width, d});
  a.w_value = Tensor<T>({key_width, d});
  for (auto& b : a.branches) b = dense_shape<T>(d, d);
  a.merge = dense_shape<T>(d, d);
  a.norm_gain = Tensor<T>({d}, T(1));
  a.norm_bias = Tensor<T>({d});
  return a;
}

template <typename T>
ModelParams<T> shaped_params(const ModelDims& dims) {
  validate(dims);
  ModelParams<T> p;
  p.dims = dims;
  for (std::size_t i = 0; i < kTextKernelSizes.size(); ++i) {
    p.text_conv[i] = ConvLayer<T>{Tensor<T>({kTextKernelSizes[i], dims.text_dim, dims.conv_filters}),
                                  Tensor<T>({dims.conv_filters})};
  }
  for (auto& layer : p.text_residual) {
    layer = ConvLayer<T>{Tensor<T>({kResidualKernel, dims.conv_filters, dims.conv_filters}),
                         Tensor<T>({dims.conv_filters})};
  }
  p.text_hidden = dense_shape<T>(dims.text_flat(), dims.text_hidden);
  p.text_out = dense_shape<T>(dims.text_hidden, dims.d);
  p.image_hidden = dense_shape<T>(dims.global_dim, dims.visual_hidden);
  p.image_out = dense_shape<T>(dims.visual_hidden, dims.d);
  p.region_proj = dense_shape<T>(dims.region_dim, dims.d);
  p.text_to_image = attention_shape<T>(dims.d, dims.d, dims.d);
  p.image_to_text = attention_shape<T>(dims.d, dims.conv_filters, dims.d);
  p.image_to_image = attention_shape<T>(dims.d, dims.d, dims.d);
  p.self_flatten = dense_shape<T>(dims.n_regions * dims.d, dims.d);
  p.combine = dense_shape<T>(dims.combined_width(), dims.d);
  p.output = dense_shape<T>(dims.d, 1);
  return p;
}

bool is_bias_like(const std::string& name) {
  return name.ends_with(".bias") || name.ends_with(".gain");
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() {
  std::vector<NamedTensor<T>> out;
  for_each_param(*this, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
std::vector<ConstNamedTensor<T>> ModelParams<T>::named() const {
  std::vector<ConstNamedTensor<T>> out;
  for_each_param(const_cast<ModelParams<T>&>(*this),
                 [&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : named()) total += p.tensor->size();
  return total;
}

template <typename T>
void ModelParams<T>::set_requires_grad(bool flag) {
  for (auto& p : named()) p.tensor->set_requires_grad(flag);
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& p : named()) p.tensor->zero_grad();
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = shaped_params<U>(dims);
  auto src = named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
  return out;
}

template <typename T>
ModelParams<T> zero_params(const ModelDims& dims) {
  return shaped_params<T>(dims);
}

template <typename T>
ModelParams<T> init_params(std::uint64_t seed, const ModelDims& dims) {
  ModelParams<T> p = shaped_params<T>(dims);
  const RngStream root(seed);
  for (auto& [name, tensor] : p.named()) {
    if (is_bias_like(name)) continue;  // biases stay zero, gains stay one
    const Shape& s = tensor->shape();
    // Conv kernels [k x C_in x F] spread both fans over the k taps.
    const double fan_in = s.size() == 3 ? double(s[0] * s[1]) : double(s[0]);
    const double fan_out = s.size() == 3 ? double(s[0] * s[2]) : double(s[1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    RngStream rng = root.derive(name);
    for (T& v : tensor->data()) v = static_cast<T>(rng.uniform(-limit, limit));
  }
  return p;
}

template <typename T>
TextHeadOutput<T> text_head(Var<T> tokens, const ModelParams<T>& params, const ForwardOptions& options,
                            std::size_t batch) {
  const ModelDims& dims = params.dims;
  if (tokens.rows() != batch * dims.seq_len || tokens.cols() != dims.text_dim) {
    fail(ErrorKind::dimension, "text_head: tokens " + shape_string(tokens.shape()) + " do not hold " +
                                   std::to_string(batch) + " posts of " +
                                   shape_string({dims.seq_len, dims.text_dim}));
  }
  Tape<T>& tape = tokens.tape();
  const bool training = options.mode == Mode::train;

  std::vector<Var<T>> pooled;
  for (const auto& conv : params.text_conv) {
    auto c = ops::conv1d_same(tokens, tape.bind(conv.kernel), tape.bind(conv.bias), dims.seq_len);
    pooled.push_back(ops::maxpool1d(ops::relu(c), kPool, dims.seq_len));
  }
  // Branch outputs stacked along the position axis, per post.
  Var<T> h = ops::concat_rows(pooled, batch);
  for (const auto& conv : params.text_residual) {
    auto c = ops::conv1d_same(h, tape.bind(conv.kernel), tape.bind(conv.bias), dims.text_positions());
    h = ops::residual_add(h, ops::relu(c));
  }
  TextHeadOutput<T> out;
  out.text_map = h;

  auto flat = ops::reshape(h, {batch, dims.text_flat()});
  auto hidden = ops::relu(ops::linear(flat, tape.bind(params.text_hidden.weight), tape.bind(params.text_hidden.bias)));
  hidden = ops::dropout(hidden, options.dropout, training, *options.rng);
  out.text_vec = ops::linear(hidden, tape.bind(params.text_out.weight), tape.bind(params.text_out.bias));
  return out;
}

template <typename T>
VisualHeadOutput<T> visual_head(Var<T> image_global, Var<T> image_regions, const ModelParams<T>& params,
                                const ForwardOptions& options, std::size_t batch) {
  const ModelDims& dims = params.dims;
  if (image_global.rows() != batch || image_global.cols() != dims.global_dim) {
    fail(ErrorKind::dimension, "visual_head: global features " + shape_string(image_global.shape()) +
                                   " do not hold " + std::to_string(batch) + " vectors of " +
                                   std::to_string(dims.global_dim));
  }
  if (image_regions.rows() != batch * dims.n_regions || image_regions.cols() != dims.region_dim) {
    fail(ErrorKind::dimension, "visual_head: region features " + shape_string(image_regions.shape()) +
                                   " do not hold " + std::to_string(batch) + " posts of " +
                                   shape_string({dims.n_regions, dims.region_dim}));
  }
  Tape<T>& tape = image_global.tape();
  const bool training = options.mode == Mode::train;

  auto hidden = ops::linear(image_global, tape.bind(params.image_hidden.weight), tape.bind(params.image_hidden.bias));
  hidden = ops::relu(ops::dropout(hidden, options.dropout, training, *options.rng));
  VisualHeadOutput<T> out;
  out.image_vec = ops::linear(hidden, tape.bind(params.image_out.weight), tape.bind(params.image_out.bias));
  out.region_map =
      ops::linear(image_regions, tape.bind(params.region_proj.weight), tape.bind(params.region_proj.bias));
  return out;
}

template <typename T>
AttentionBlockOutput<T> attention_block(Var<T> query_src, Var<T> kv_src, const AttentionParams<T>& params,
                                        const ForwardOptions& options, std::size_t batch) {
  Tape<T>& tape = query_src.tape();
  const bool training = options.mode == Mode::train;
  const std::size_t d = params.w_query.cols();

  auto q = ops::matmul(query_src, tape.bind(params.w_query));
  auto k = ops::matmul(kv_src, tape.bind(params.w_key));
  auto v = ops::matmul(kv_src, tape.bind(params.w_value));
  auto scores = ops::scale(ops::matmul_grouped(q, k, batch, true), 1.0 / std::sqrt(static_cast<double>(d)));
  auto weights = ops::softmax_rows(scores);
  auto attended = ops::matmul_grouped(weights, v, batch);

  std::vector<Var<T>> branches;
  for (const auto& fc : params.branches) {
    auto b = ops::relu(ops::linear(attended, tape.bind(fc.weight), tape.bind(fc.bias)));
    branches.push_back(ops::dropout(b, options.dropout, training, *options.rng));
  }
  auto peak = ops::elementwise_max(branches);
  auto merged = ops::relu(ops::linear(peak, tape.bind(params.merge.weight), tape.bind(params.merge.bias)));
  merged = ops::dropout(merged, options.dropout, training, *options.rng);
  auto fused = ops::layer_norm(ops::residual_add(merged, peak), tape.bind(params.norm_gain),
                               tape.bind(params.norm_bias));
  return AttentionBlockOutput<T>{fused, weights};
}

template <typename T>
FusionOutput<T> fuse_and_classify(Var<T> text_vec, Var<T> image_vec, Var<T> r_text_image, Var<T> r_image_text,
                                  Var<T> r_image_image, const ModelParams<T>& params,
                                  const ForwardOptions& options, std::size_t batch) {
  Tape<T>& tape = text_vec.tape();
  const bool training = options.mode == Mode::train;
  const std::size_t flat_width = r_image_image.size() / batch;
  if (r_image_image.size() % batch != 0) {
    fail(ErrorKind::dimension, "fuse_and_classify: self-attention output " + shape_string(r_image_image.shape()) +
                                   " does not split into " + std::to_string(batch) + " posts");
  }
  auto flat = ops::reshape(r_image_image, {batch, flat_width});
  auto self_flat =
      ops::relu(ops::linear(flat, tape.bind(params.self_flatten.weight), tape.bind(params.self_flatten.bias)));
  self_flat = ops::dropout(self_flat, options.dropout, training, *options.rng);

  auto as_rows = [&](Var<T> v) { return v.shape().size() == 2 ? v : ops::reshape(v, {batch, v.size() / batch}); };
  auto combined = ops::concat_cols<T>(
      {as_rows(text_vec), as_rows(image_vec), as_rows(r_text_image), as_rows(r_image_text), self_flat});
  auto hidden = ops::relu(ops::linear(combined, tape.bind(params.combine.weight), tape.bind(params.combine.bias)));
  hidden = ops::dropout(hidden, options.dropout, training, *options.rng);
  auto logit = ops::linear(hidden, tape.bind(params.output.weight), tape.bind(params.output.bias));
  return FusionOutput<T>{self_flat, combined, ops::sigmoid(logit)};
}

template <typename T>
ForwardGraph<T> record_forward(Tape<T>& tape, std::span<const SampleFeatures* const> samples,
                               const ModelParams<T>& params, const ForwardOptions& options) {
  const ModelDims& dims = params.dims;
  const std::size_t batch = samples.size();
  if (batch == 0) fail(ErrorKind::configuration, "forward needs at least one sample");
  if (options.mode == Mode::train && options.dropout > 0.0 && options.rng == nullptr) {
    fail(ErrorKind::usage, "train-mode forward with dropout needs a random stream");
  }
  RngStream unused(0);
  ForwardOptions opts = options;
  if (opts.rng == nullptr) opts.rng = &unused;

  std::vector<T> tokens, global, regions;
  tokens.reserve(batch * dims.seq_len * dims.text_dim);
  global.reserve(batch * dims.global_dim);
  regions.reserve(batch * dims.n_regions * dims.region_dim);
  for (const SampleFeatures* s : samples) {
    validate(*s, dims);
    tokens.insert(tokens.end(), s->tokens.data().begin(), s->tokens.data().end());
    global.insert(global.end(), s->image_global.data().begin(), s->image_global.data().end());
    regions.insert(regions.end(), s->image_regions.data().begin(), s->image_regions.data().end());
  }
  auto tokens_v = tape.constant({batch * dims.seq_len, dims.text_dim}, std::move(tokens));
  auto global_v = tape.constant({batch, dims.global_dim}, std::move(global));
  auto regions_v = tape.constant({batch * dims.n_regions, dims.region_dim}, std::move(regions));

  ForwardGraph<T> g;
  g.batch = batch;
  g.text = text_head(tokens_v, params, opts, batch);
  g.visual = visual_head(global_v, regions_v, params, opts, batch);
  g.text_to_image = attention_block(g.text.text_vec, g.visual.region_map, params.text_to_image, opts, batch);
  g.image_to_text = attention_block(g.visual.image_vec, g.text.text_map, params.image_to_text, opts, batch);
  g.image_to_image = attention_block(g.visual.region_map, g.visual.region_map, params.image_to_image, opts, batch);
  g.fusion = fuse_and_classify(g.text.text_vec, g.visual.image_vec, g.text_to_image.fused, g.image_to_text.fused,
                               g.image_to_image.fused, params, opts, batch);
  return g;
}

namespace {

template <typename T>
Tensor<T> slice_block(Var<T> v, std::size_t batch, std::size_t index, Shape shape) {
  auto values = v.values();
  const std::size_t n = values.size() / batch;
  auto first = values.begin() + static_cast<std::ptrdiff_t>(index * n);
  return Tensor<T>(std::move(shape), std::vector<T>(first, first + static_cast<std::ptrdiff_t>(n)));
}

}  // namespace

template <typename T>
std::vector<ForwardTrace<T>> extract_traces(const ForwardGraph<T>& g) {
  const std::size_t b = g.batch;
  std::vector<ForwardTrace<T>> traces(b);
  const std::size_t positions = g.text.text_map.rows() / b;
  const std::size_t filters = g.text.text_map.cols();
  const std::size_t d = g.text.text_vec.cols();
  const std::size_t regions = g.visual.region_map.rows() / b;
  for (std::size_t i = 0; i < b; ++i) {
    ForwardTrace<T>& t = traces[i];
    t.text_map = slice_block(g.text.text_map, b, i, {positions, filters});
    t.text_vec = slice_block(g.text.text_vec, b, i, {d});
    t.image_vec = slice_block(g.visual.image_vec, b, i, {d});
    t.region_map = slice_block(g.visual.region_map, b, i, {regions, d});
    t.r_text_image = slice_block(g.text_to_image.fused, b, i, {d});
    t.r_image_text = slice_block(g.image_to_text.fused, b, i, {d});
    t.r_image_image = slice_block(g.image_to_image.fused, b, i, {regions, d});
    t.r_image_flat = slice_block(g.fusion.self_flat, b, i, {d});
    t.combined = slice_block(g.fusion.combined, b, i, {g.fusion.combined.cols()});
    t.probability = g.fusion.probability.values()[i];
    t.attn_text_image = slice_block(g.text_to_image.weights, b, i, {1, regions});
    t.attn_image_text = slice_block(g.image_to_text.weights, b, i, {1, positions});
    t.attn_image_image = slice_block(g.image_to_image.weights, b, i, {regions, regions});
  }
  return traces;
}

template <typename T>
ForwardTrace<T> forward(const SampleFeatures& sample, const ModelParams<T>& params, Mode mode, RngStream& rng,
                        double dropout) {
  Tape<T> tape(false);
  const SampleFeatures* one[] = {&sample};
  auto graph = record_forward<T>(tape, one, params, ForwardOptions{mode, dropout, &rng});
  return std::move(extract_traces(graph).front());
}

template <typename T>
std::vector<T> predict(std::span<const SampleFeatures> samples, const ModelParams<T>& params, std::size_t chunk) {
  std::vector<T> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::vector<const SampleFeatures*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&samples[i]);
    Tape<T> tape(false);
    auto graph = record_forward<T>(tape, ptrs, params, ForwardOptions{Mode::eval, 0.0, nullptr});
    auto p = graph.fusion.probability.values();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

#define MMFUSION_INSTANTIATE_MODEL(T)                                                                     \
  template struct ModelParams<T>;                                                                        \
  template ModelParams<T> init_params<T>(std::uint64_t, const ModelDims&);                                \
  template ModelParams<T> zero_params<T>(const ModelDims&);                                               \
  template TextHeadOutput<T> text_head(Var<T>, const ModelParams<T>&, const ForwardOptions&, std::size_t); \
  template VisualHeadOutput<T> visual_head(Var<T>, Var<T>, const ModelParams<T>&, const ForwardOptions&,  \
                                           std::size_t);                                                  \
  template AttentionBlockOutput<T> attention_block(Var<T>, Var<T>, const AttentionParams<T>&,             \
                                                   const ForwardOptions&, std::size_t);                   \
  template FusionOutput<T> fuse_and_classify(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, const ModelParams<T>&, \
                                             const ForwardOptions&, std::size_t);                         \
  template ForwardGraph<T> record_forward(Tape<T>&, std::span<const SampleFeatures* const>,                \
                                          const ModelParams<T>&, const ForwardOptions&);                  \
  template std::vector<ForwardTrace<T>> extract_traces(const ForwardGraph<T>&);                           \
  template ForwardTrace<T> forward(const SampleFeatures&, const ModelParams<T>&, Mode, RngStream&, double); \
  template std::vector<T> predict(std::span<const SampleFeatures>, const ModelParams<T>&, std::size_t);

MMFUSION_INSTANTIATE_MODEL(float)
MMFUSION_INSTANTIATE_MODEL(double)

#undef MMFUSION_INSTANTIATE_MODEL

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace mmfusion
