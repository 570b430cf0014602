#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capslstm/capsule.hpp"
#include "capslstm/layers.hpp"
#include "capslstm/tensor.hpp"

namespace capslstm {

// Architecture hyper-parameters. Defaults build the full-size stack of
// 40,243,650 parameters: ConvLSTM2D(128, 3x3) -> Conv2D(256, 9x9, s1, relu)
// -> PrimaryCaps(256, 9x9, s2, D=8) -> CapsuleLayer(2x16, r=3) -> LSTM(1024)
// -> Dense 1024/512/256/64 (relu) -> Dense 2 (softmax).
struct ModelConfig {
  std::size_t frames = 5;
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t channels = 3;
  std::size_t convlstm_filters = 128;
  std::size_t convlstm_kernel = 3;
  std::size_t conv_filters = 256;
  std::size_t conv_kernel = 9;
  std::size_t conv_stride = 1;
  std::size_t primary_filters = 256;
  std::size_t primary_kernel = 9;
  std::size_t primary_stride = 2;
  std::size_t capsule_dim = 8;
  std::size_t secondary_capsules = 2;
  std::size_t secondary_dim = 16;
  std::size_t routing_iterations = 3;
  std::size_t lstm_units = 1024;
  std::vector<std::size_t> dense_units = {1024, 512, 256, 64};
  std::size_t classes = 2;
  std::uint64_t seed = 20220101;

  static ModelConfig paper_default() { return {}; }
  // 5 frames of 32x32, 8 ConvLSTM filters, 16 conv channels, D=4, Dout=8,
  // LSTM 32, dense 32/16/16/8.
  static ModelConfig scaled_down();

  // Throws ConfigError when the layer chain cannot be assembled.
  void validate() const;

  Shape clip_shape() const { return {frames, height, width, channels}; }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerSummary {
  std::string name;
  std::string type;
  Shape output_shape;  // without the batch axis
  std::size_t parameters = 0;
};

// Keras-style text table with one row per layer plus the totals rows.
std::string render_summary(std::span<const LayerSummary> rows);
std::size_t total_parameters(std::span<const LayerSummary> rows);

// Layers whose output is a spatial [H,W,K] map (Grad-CAM targets).
inline constexpr std::string_view kConvLstmName = "conv_lst_m2d";
inline constexpr std::string_view kConv1Name = "conv1";
inline constexpr std::string_view kPrimaryConvName = "primarycap_conv2d";

template <typename T>
struct ParamRef {
  std::string name;  // "<layer>/<param>"
  Parameter<T>* param;
};

template <typename T>
struct ConstParamRef {
  std::string name;
  const Parameter<T>* param;
};

template <typename T>
class Model {
 public:
  // Everything a backward pass needs from one clip's forward pass.
  struct Trace {
    typename ConvLstm2D<T>::Cache convlstm;
    typename Conv2D<T>::Cache conv1;
    typename PrimaryCaps<T>::Cache primary;
    typename CapsuleLayer<T>::Cache secondary;
    typename Lstm<T>::Cache lstm;
    std::vector<typename Dense<T>::Cache> dense;
    Tensor<T> logits;
    Tensor<T> probs;

    // Output of a spatial layer by name; throws ArgumentError otherwise.
    const Tensor<T>& activation(std::string_view layer) const;
  };

  struct BatchResult {
    T loss;
    Tensor<T> probs;  // [B, classes]
  };

  explicit Model(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<LayerSummary> summary() const;
  std::size_t parameter_count() const;
  std::vector<std::string> layer_names() const;
  static bool is_spatial_layer(std::string_view name);

  // Seeded Glorot initialization of every parameter, in layer order.
  void initialize(std::uint64_t seed);

  // clip [F,H,W,C]
  Trace trace(const Tensor<T>& clip) const;
  Tensor<T> logits(const Tensor<T>& clip) const;
  // batch [B,F,H,W,C] -> probabilities [B, classes]
  Tensor<T> forward(const Tensor<T>& batch) const;

  // Mean categorical cross-entropy over the batch; accumulates the gradient of
  // that mean into every parameter's grad.
  BatchResult train_batch(const Tensor<T>& batch, const Tensor<T>& onehot);
  T backward(const Tensor<T>& batch, const Tensor<T>& onehot) { return train_batch(batch, onehot).loss; }

  // Accumulates parameter gradients for an upstream gradient on the logits.
  void backward_trace(const Trace& trace, const Tensor<T>& d_logits);
  // Gradient of sum(d_logits * logits) w.r.t. a spatial layer's output,
  // without touching parameter gradients.
  Tensor<T> layer_gradient(const Trace& trace, const Tensor<T>& d_logits, std::string_view layer) const;

  std::vector<ParamRef<T>> parameters();
  std::vector<ConstParamRef<T>> parameters() const;
  void zero_grad();

 private:
  void backprop(const Trace& trace, const Tensor<T>& d_logits, Model* sink, std::string_view capture,
                Tensor<T>* captured) const;
  void check_clip(const Tensor<T>& clip) const;

  ModelConfig config_;
  ConvLstm2D<T> convlstm_;
  Conv2D<T> conv1_;
  PrimaryCaps<T> primary_;
  CapsuleLayer<T> secondary_;
  Lstm<T> lstm_;
  std::vector<Dense<T>> dense_;
};

}  // namespace capslstm
