#include "capslstm/explain.hpp"

#include <algorithm>
#include <cmath>

#include "capslstm/image.hpp"

namespace capslstm {

template <typename T>
Tensor<T> gradcam_map(const Tensor<T>& activations, const Tensor<T>& gradients) {
  if (activations.rank() != 3) {
    throw DimensionError("Grad-CAM activations must be [H,W,K], got " + shape_string(activations.shape()));
  }
  activations.require_same_shape(gradients, "Grad-CAM gradients");
  const std::size_t h = activations.extent(0), w = activations.extent(1), k = activations.extent(2);
  std::vector<T> weights(k, T{});
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < k; ++c) weights[c] += gradients[p * k + c];
  }
  for (auto& wc : weights) wc /= static_cast<T>(h * w);

  Tensor<T> map({h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    T acc{};
    for (std::size_t c = 0; c < k; ++c) acc += weights[c] * activations[p * k + c];
    map[p] = std::max(acc, T{});
  }
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const T low = *lo, high = *hi;
  if (!(high > low)) {
    map.fill(T{});
    return map;
  }
  for (auto& v : map.data()) v = std::clamp((v - low) / (high - low), T{}, T{1});
  return map;
}

template Tensor<float> gradcam_map(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> gradcam_map(const Tensor<double>&, const Tensor<double>&);

Heatmap gradcam(const Model<float>& model, const Tensor<float>& clip, std::size_t target_class,
                std::string_view layer) {
  const auto names = model.layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    std::string valid;
    for (const auto& n : names) {
      if (Model<float>::is_spatial_layer(n)) valid += (valid.empty() ? "" : ", ") + n;
    }
    throw ArgumentError("unknown layer '" + std::string(layer) + "'; valid layers: " + valid);
  }
  if (!Model<float>::is_spatial_layer(layer)) {
    throw ArgumentError("layer '" + std::string(layer) + "' has no spatial output for Grad-CAM");
  }
  if (target_class >= model.config().classes) {
    throw ArgumentError("target class " + std::to_string(target_class) + " out of range");
  }
  const auto trace = model.trace(clip);
  Tensor<float> d_logits({model.config().classes});
  d_logits[target_class] = 1.0f;
  const Tensor<float> grads = model.layer_gradient(trace, d_logits, layer);
  Heatmap hm;
  hm.layer = std::string(layer);
  hm.target_class = target_class;
  hm.values = gradcam_map(trace.activation(layer), grads);
  Tensor<float> as_image = hm.values.reshaped({hm.values.extent(0), hm.values.extent(1), 1});
  hm.upsampled = resize_bilinear(as_image, model.config().height, model.config().width)
                     .reshaped({model.config().height, model.config().width});
  for (auto& v : hm.upsampled.data()) v = std::clamp(v, 0.0f, 1.0f);
  return hm;
}

std::array<float, 3> jet_color(float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  if (v <= 0.5f) return {0.0f, 2.0f * v, 1.0f - 2.0f * v};
  return {2.0f * v - 1.0f, 2.0f - 2.0f * v, 0.0f};
}

Tensor<float> render_overlay(const Tensor<float>& heatmap, const Tensor<float>& frame, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("overlay alpha must lie in [0,1]");
  if (frame.rank() != 3 || frame.extent(2) != 3 || heatmap.rank() != 2 || heatmap.extent(0) != frame.extent(0) ||
      heatmap.extent(1) != frame.extent(1)) {
    throw DimensionError("overlay needs heatmap [H,W] and frame [H,W,3], got " + shape_string(heatmap.shape()) +
                         " and " + shape_string(frame.shape()));
  }
  const float a = static_cast<float>(alpha);
  Tensor<float> out(frame.shape());
  for (std::size_t p = 0; p < heatmap.size(); ++p) {
    const auto color = jet_color(heatmap[p]);
    for (std::size_t c = 0; c < 3; ++c) out[p * 3 + c] = (1.0f - a) * frame[p * 3 + c] + a * color[c];
  }
  return out;
}

void write_image(const Tensor<float>& rgb, const std::filesystem::path& path) {
  for (float v : rgb.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("image values must lie in [0,1]");
  }
  Tensor<float> scaled = rgb;
  scaled *= 255.0f;
  write_ppm(path, scaled);
}

}  // namespace capslstm
