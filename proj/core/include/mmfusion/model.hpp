#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmfusion/ops.hpp"
#include "mmfusion/rng.hpp"
#include "mmfusion/tape.hpp"
#include "mmfusion/tensor.hpp"

namespace mmfusion {

inline constexpr std::array<std::size_t, 4> kTextKernelSizes{2, 3, 4, 5};
inline constexpr std::size_t kResidualKernel = 3;
inline constexpr std::size_t kPool = 3;
inline constexpr std::size_t kAttentionBranches = 4;
inline constexpr double kDefaultDropout = 0.3;

// Layer widths of the fusion network. standard() is the published
// configuration; compact() keeps the same topology at toy widths so the
// finite-difference checks stay cheap.
struct ModelDims {
  std::size_t seq_len = 32;         // tokens per post
  std::size_t text_dim = 3072;      // last four encoder layers, concatenated
  std::size_t conv_filters = 768;
  std::size_t text_hidden = 768;    // FC before the text vector
  std::size_t global_dim = 4096;    // image encoder second-last layer
  std::size_t visual_hidden = 2048; // FC before the image vector
  std::size_t n_regions = 49;       // 7 x 7 grid of the third-last layer
  std::size_t region_dim = 512;
  std::size_t d = 32;               // representation and attention width

  static ModelDims standard() { return ModelDims{}; }
  static ModelDims compact();

  std::size_t pooled_length() const { return seq_len / kPool; }
  std::size_t text_positions() const { return kTextKernelSizes.size() * pooled_length(); }
  std::size_t text_flat() const { return text_positions() * conv_filters; }
  std::size_t combined_width() const { return 5 * d; }

  bool operator==(const ModelDims&) const = default;
};

void validate(const ModelDims& dims);

enum class Mode { train, eval };

// One post's pre-extracted encoder outputs. label: 0 = real, 1 = fake.
struct SampleFeatures {
  std::uint64_t id = 0;
  Tensor<float> tokens;         // seq_len x text_dim
  Tensor<float> image_global;   // global_dim
  Tensor<float> image_regions;  // n_regions x region_dim
  std::uint8_t label = 0;
};

void validate(const SampleFeatures& sample, const ModelDims& dims);

template <typename T>
struct Dense {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out
};

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;  // k x C_in x F
  Tensor<T> bias;    // F
};

template <typename T>
struct AttentionParams {
  Tensor<T> w_query;  // query width x d, no bias
  Tensor<T> w_key;    // key width x d
  Tensor<T> w_value;  // key width x d
  std::array<Dense<T>, kAttentionBranches> branches;
  Dense<T> merge;
  Tensor<T> norm_gain;
  Tensor<T> norm_bias;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
struct ConstNamedTensor {
  std::string name;
  const Tensor<T>* tensor;
};

template <typename T>
struct ModelParams {
  ModelDims dims;

  std::array<ConvLayer<T>, kTextKernelSizes.size()> text_conv;
  std::array<ConvLayer<T>, 2> text_residual;
  Dense<T> text_hidden;  // flattened T_m -> text_hidden
  Dense<T> text_out;     // text_hidden -> d (T_f)

  Dense<T> image_hidden;  // global -> visual_hidden
  Dense<T> image_out;     // visual_hidden -> d (I_f)
  Dense<T> region_proj;   // region_dim -> d, row-wise (I_m)

  AttentionParams<T> text_to_image;   // query T_f, keys I_m
  AttentionParams<T> image_to_text;   // query I_f, keys T_m
  AttentionParams<T> image_to_image;  // query and keys I_m

  Dense<T> self_flatten;  // n_regions * d -> d
  Dense<T> combine;       // 5d -> d
  Dense<T> output;        // d -> 1

  // Stable name -> tensor enumeration; the order is the checkpoint order.
  std::vector<NamedTensor<T>> named();
  std::vector<ConstNamedTensor<T>> named() const;
  std::size_t parameter_count() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  template <typename U>
  ModelParams<U> cast() const;
};

// Fan-based uniform init (limit sqrt(6 / (fan_in + fan_out))) for weights,
// zero biases, unit layer-norm gain.
template <typename T>
ModelParams<T> init_params(std::uint64_t seed, const ModelDims& dims = ModelDims::standard());

// Parameters with identical shapes and every entry zero (layer-norm gain one).
template <typename T>
ModelParams<T> zero_params(const ModelDims& dims = ModelDims::standard());

struct ForwardOptions {
  Mode mode = Mode::eval;
  double dropout = kDefaultDropout;
  RngStream* rng = nullptr;  // required in train mode with dropout > 0
};

template <typename T>
struct TextHeadOutput {
  Var<T> text_map;  // (batch * positions) x conv_filters (T_m)
  Var<T> text_vec;  // batch x d (T_f)
};

template <typename T>
struct VisualHeadOutput {
  Var<T> image_vec;   // batch x d (I_f)
  Var<T> region_map;  // (batch * n_regions) x d (I_m)
};

template <typename T>
struct AttentionBlockOutput {
  Var<T> fused;    // (batch * query rows) x d
  Var<T> weights;  // (batch * query rows) x key rows, post-softmax
};

// Every block takes `batch` posts stacked along rows and treats each post
// independently.
template <typename T>
TextHeadOutput<T> text_head(Var<T> tokens, const ModelParams<T>& params, const ForwardOptions& options,
                            std::size_t batch);

template <typename T>
VisualHeadOutput<T> visual_head(Var<T> image_global, Var<T> image_regions, const ModelParams<T>& params,
                                const ForwardOptions& options, std::size_t batch);

template <typename T>
AttentionBlockOutput<T> attention_block(Var<T> query_src, Var<T> kv_src, const AttentionParams<T>& params,
                                        const ForwardOptions& options, std::size_t batch);

// Returns batch x 1 fake-news probabilities and the batch x 5d concatenation.
template <typename T>
struct FusionOutput {
  Var<T> self_flat;    // batch x d (R_II')
  Var<T> combined;     // batch x 5d
  Var<T> probability;  // batch x 1
};

template <typename T>
FusionOutput<T> fuse_and_classify(Var<T> text_vec, Var<T> image_vec, Var<T> r_text_image, Var<T> r_image_text,
                                  Var<T> r_image_image, const ModelParams<T>& params,
                                  const ForwardOptions& options, std::size_t batch);

template <typename T>
struct ForwardGraph {
  std::size_t batch = 0;
  TextHeadOutput<T> text;
  VisualHeadOutput<T> visual;
  AttentionBlockOutput<T> text_to_image;
  AttentionBlockOutput<T> image_to_text;
  AttentionBlockOutput<T> image_to_image;
  FusionOutput<T> fusion;
};

// Records the whole network for a batch of posts on `tape`.
template <typename T>
ForwardGraph<T> record_forward(Tape<T>& tape, std::span<const SampleFeatures* const> samples,
                               const ModelParams<T>& params, const ForwardOptions& options);

// Per-post intermediate values, shapes as in the published architecture.
template <typename T>
struct ForwardTrace {
  Tensor<T> text_map;       // positions x conv_filters
  Tensor<T> text_vec;       // d
  Tensor<T> image_vec;      // d
  Tensor<T> region_map;     // n_regions x d
  Tensor<T> r_text_image;   // d
  Tensor<T> r_image_text;   // d
  Tensor<T> r_image_image;  // n_regions x d
  Tensor<T> r_image_flat;   // d
  Tensor<T> combined;       // 5d
  T probability = T(0.5);
  Tensor<T> attn_text_image;   // 1 x n_regions
  Tensor<T> attn_image_text;   // 1 x positions
  Tensor<T> attn_image_image;  // n_regions x n_regions
};

template <typename T>
std::vector<ForwardTrace<T>> extract_traces(const ForwardGraph<T>& graph);

template <typename T>
ForwardTrace<T> forward(const SampleFeatures& sample, const ModelParams<T>& params, Mode mode, RngStream& rng,
                        double dropout = kDefaultDropout);

// Eval-mode probabilities for many posts, evaluated in chunks.
template <typename T>
std::vector<T> predict(std::span<const SampleFeatures> samples, const ModelParams<T>& params,
                       std::size_t chunk = 64);

}  // namespace mmfusion
