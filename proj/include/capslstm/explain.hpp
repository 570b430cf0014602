#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "capslstm/model.hpp"
#include "capslstm/tensor.hpp"

namespace capslstm {

struct Heatmap {
  Tensor<float> values;     // [Hc,Wc] in [0,1], at the source layer's resolution
  Tensor<float> upsampled;  // [H,W] in [0,1], at frame resolution
  std::string layer;
  std::size_t target_class = 0;
};

// Grad-CAM from a layer's activations A [H,W,K] and dScore/dA: channel weights
// are the spatial means of the gradient, map = ReLU(sum_k w_k A_k), then
// min-max normalized to [0,1]; a constant map becomes all zeros.
template <typename T>
Tensor<T> gradcam_map(const Tensor<T>& activations, const Tensor<T>& gradients);

// Grad-CAM of the target class's pre-softmax logit at `layer`. The clip's
// frames are fused by the ConvLSTM before any spatial layer, so one map
// describes the whole clip.
Heatmap gradcam(const Model<float>& model, const Tensor<float>& clip, std::size_t target_class,
                std::string_view layer = kConv1Name);

// Piecewise-linear jet ramp: 0 -> blue, 0.5 -> green, 1 -> red.
std::array<float, 3> jet_color(float value);

// (1 - alpha) * frame + alpha * jet(heatmap); frame [H,W,3] in [0,1].
Tensor<float> render_overlay(const Tensor<float>& heatmap, const Tensor<float>& frame, double alpha = 0.4);

// PPM P6 of [H,W,3] values in [0,1]; byte = floor(v * 255 + 0.5).
void write_image(const Tensor<float>& rgb, const std::filesystem::path& path);

}  // namespace capslstm
