#include "capslstm/model.hpp"

#include <cstdio>
#include <sstream>

#include "capslstm/loss.hpp"

namespace capslstm {

ModelConfig ModelConfig::scaled_down() {
  ModelConfig c;
  c.frames = 5;
  c.height = 32;
  c.width = 32;
  c.convlstm_filters = 8;
  c.conv_filters = 16;
  c.primary_filters = 16;
  c.capsule_dim = 4;
  c.secondary_dim = 8;
  c.lstm_units = 32;
  c.dense_units = {32, 16, 16, 8};
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("architecture.") + key + " must be positive");
  };
  positive(frames, "frames");
  positive(height, "height");
  positive(width, "width");
  positive(channels, "channels");
  positive(convlstm_filters, "convlstm_filters");
  positive(convlstm_kernel, "convlstm_kernel");
  positive(conv_filters, "conv_filters");
  positive(conv_kernel, "conv_kernel");
  positive(conv_stride, "conv_stride");
  positive(primary_filters, "primary_filters");
  positive(primary_kernel, "primary_kernel");
  positive(primary_stride, "primary_stride");
  positive(capsule_dim, "capsule_dim");
  positive(secondary_capsules, "secondary_capsules");
  positive(secondary_dim, "secondary_dim");
  positive(routing_iterations, "routing_iterations");
  positive(lstm_units, "lstm_units");
  positive(classes, "classes");
  for (std::size_t u : dense_units) positive(u, "dense_units[]");
  if (primary_filters % capsule_dim != 0) {
    throw ConfigError("architecture.primary_filters (" + std::to_string(primary_filters) +
                      ") not divisible by architecture.capsule_dim (" + std::to_string(capsule_dim) + ")");
  }
  if (convlstm_kernel > height + convlstm_kernel - 1 || convlstm_kernel > width + convlstm_kernel - 1) {
    throw ConfigError("architecture.convlstm_kernel larger than the padded frame");
  }
  if (conv_kernel > height || conv_kernel > width) {
    throw ConfigError("architecture.conv_kernel (" + std::to_string(conv_kernel) + ") exceeds frame size " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t h1 = conv_output_extent(height, conv_kernel, conv_stride, Padding::Valid);
  const std::size_t w1 = conv_output_extent(width, conv_kernel, conv_stride, Padding::Valid);
  if (primary_kernel > h1 || primary_kernel > w1) {
    throw ConfigError("architecture.primary_kernel (" + std::to_string(primary_kernel) +
                      ") exceeds conv1 output " + std::to_string(h1) + "x" + std::to_string(w1));
  }
}

namespace {

std::string group_thousands(std::size_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::string batch_shape_string(const Shape& shape) {
  std::string s = "(None";
  for (std::size_t e : shape) s += ", " + std::to_string(e);
  return s + ")";
}

std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

std::size_t primary_capsule_count(const ModelConfig& c) {
  const std::size_t h1 = conv_output_extent(c.height, c.conv_kernel, c.conv_stride, Padding::Valid);
  const std::size_t w1 = conv_output_extent(c.width, c.conv_kernel, c.conv_stride, Padding::Valid);
  const std::size_t h2 = conv_output_extent(h1, c.primary_kernel, c.primary_stride, Padding::Valid);
  const std::size_t w2 = conv_output_extent(w1, c.primary_kernel, c.primary_stride, Padding::Valid);
  return h2 * w2 * c.primary_filters / c.capsule_dim;
}

}  // namespace

std::size_t total_parameters(std::span<const LayerSummary> rows) {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.parameters;
  return n;
}

std::string render_summary(std::span<const LayerSummary> rows) {
  constexpr std::size_t kName = 38, kShape = 28;
  std::ostringstream out;
  const std::string rule(kName + kShape + 12, '=');
  out << pad_right("Layer (type)", kName) << pad_right("Output Shape", kShape) << "Param #\n" << rule << "\n";
  for (const auto& r : rows) {
    out << pad_right(r.name + " (" + r.type + ")", kName) << pad_right(batch_shape_string(r.output_shape), kShape)
        << r.parameters << "\n";
  }
  const std::size_t total = total_parameters(rows);
  out << rule << "\n"
      << "Total params " << group_thousands(total) << "\n"
      << "Trainable params " << group_thousands(total) << "\n"
      << "Non-trainable params 0\n";
  return out.str();
}

template <typename T>
const Tensor<T>& Model<T>::Trace::activation(std::string_view layer) const {
  if (layer == kConvLstmName) return conv1.input;
  if (layer == kConv1Name) return conv1.output;
  if (layer == kPrimaryConvName) return primary.conv.output;
  throw ArgumentError("layer '" + std::string(layer) + "' has no spatial activation");
}

template <typename T>
Model<T>::Model(ModelConfig config)
    : config_(validated(config)),
      convlstm_(std::string(kConvLstmName), config_.channels, config_.convlstm_filters, config_.convlstm_kernel),
      conv1_(std::string(kConv1Name), config_.convlstm_filters, config_.conv_filters, config_.conv_kernel,
             config_.conv_stride, Padding::Valid, Activation::Relu),
      primary_(std::string(kPrimaryConvName), config_.conv_filters, config_.primary_filters,
               config_.primary_kernel, config_.primary_stride, config_.capsule_dim),
      secondary_("secondarycap", primary_capsule_count(config_), config_.capsule_dim,
                 config_.secondary_capsules, config_.secondary_dim, config_.routing_iterations),
      lstm_("lstm_1", config_.secondary_dim, config_.lstm_units) {
  std::size_t in = config_.lstm_units;
  for (std::size_t i = 0; i < config_.dense_units.size(); ++i) {
    dense_.emplace_back("dense_" + std::to_string(i + 1), in, config_.dense_units[i], Activation::Relu);
    in = config_.dense_units[i];
  }
  dense_.emplace_back("dense_" + std::to_string(config_.dense_units.size() + 1), in, config_.classes,
                      Activation::Softmax);
  initialize(config_.seed);
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
  SeededRng rng(seed);
  convlstm_.initialize(rng);
  conv1_.initialize(rng);
  primary_.initialize(rng);
  secondary_.initialize(rng);
  lstm_.initialize(rng);
  for (auto& d : dense_) d.initialize(rng);
  zero_grad();
}

template <typename T>
std::vector<LayerSummary> Model<T>::summary() const {
  const Shape clip = config_.clip_shape();
  const Shape s1 = convlstm_.output_shape(clip);
  const Shape s2 = conv1_.output_shape(s1);
  const Shape s3 = primary_.conv_output_shape(s2);
  const Shape s4 = primary_.output_shape(s2);
  std::vector<LayerSummary> rows{
      {"input_1", "InputLayer", clip, 0},
      {convlstm_.name(), "ConvLSTM2D", s1, convlstm_.params.count()},
      {conv1_.name(), "Conv2D", s2, conv1_.params.count()},
      {primary_.name(), "Conv2D", s3, primary_.params().count()},
      {"primarycap_reshape", "Reshape", s4, 0},
      {"primarycap_squash", "Lambda", s4, 0},
      {secondary_.name(), "CapsuleLayer", secondary_.output_shape(), secondary_.params.count()},
      {lstm_.name(), "LSTM", {lstm_.units()}, lstm_.params.count()},
  };
  for (const auto& d : dense_) rows.push_back({d.name(), "Dense", {d.out_features()}, d.params.count()});
  return rows;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  const auto rows = summary();
  return total_parameters(rows);
}

template <typename T>
std::vector<std::string> Model<T>::layer_names() const {
  std::vector<std::string> names;
  for (const auto& r : summary()) names.push_back(r.name);
  return names;
}

template <typename T>
bool Model<T>::is_spatial_layer(std::string_view name) {
  return name == kConvLstmName || name == kConv1Name || name == kPrimaryConvName;
}

template <typename T>
void Model<T>::check_clip(const Tensor<T>& clip) const {
  if (clip.shape() != config_.clip_shape()) {
    throw DimensionError("clip must be " + shape_string(config_.clip_shape()) + ", got " +
                         shape_string(clip.shape()));
  }
}

template <typename T>
typename Model<T>::Trace Model<T>::trace(const Tensor<T>& clip) const {
  check_clip(clip);
  Trace tr;
  const Tensor<T> h = convlstm_.forward(clip, &tr.convlstm);
  const Tensor<T> f = conv1_.forward(h, &tr.conv1);
  const CapsuleBank<T> primary = primary_.forward(f, &tr.primary);
  const CapsuleBank<T> secondary = secondary_.forward(primary, &tr.secondary);
  Tensor<T> x = lstm_.forward(secondary.poses, &tr.lstm);
  tr.dense.resize(dense_.size());
  for (std::size_t i = 0; i + 1 < dense_.size(); ++i) x = dense_[i].forward(x, &tr.dense[i]);
  const Dense<T>& head = dense_.back();
  tr.dense.back().input = x;
  tr.logits = head.preactivation(x);
  tr.probs = softmax_axis(tr.logits, 0);
  tr.dense.back().output = tr.probs;
  return tr;
}

template <typename T>
Tensor<T> Model<T>::logits(const Tensor<T>& clip) const {
  check_clip(clip);
  const Tensor<T> h = convlstm_.forward(clip);
  const CapsuleBank<T> primary = primary_.forward(conv1_.forward(h));
  Tensor<T> x = lstm_.forward(secondary_.forward(primary).poses);
  for (std::size_t i = 0; i + 1 < dense_.size(); ++i) x = dense_[i].forward(x);
  return dense_.back().preactivation(x);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch) const {
  const Shape clip = config_.clip_shape();
  if (batch.rank() != clip.size() + 1 || !std::equal(clip.begin(), clip.end(), batch.shape().begin() + 1)) {
    throw DimensionError("batch must be [B," + shape_string(clip).substr(1) + ", got " +
                         shape_string(batch.shape()));
  }
  const std::size_t n = batch.extent(0);
  Tensor<T> probs({n, config_.classes});
  for (std::size_t b = 0; b < n; ++b) {
    const Tensor<T> p = softmax_axis(logits(batch.slice(b)), 0);
    std::copy_n(p.ptr(), config_.classes, probs.ptr() + b * config_.classes);
  }
  return probs;
}

template <typename T>
typename Model<T>::BatchResult Model<T>::train_batch(const Tensor<T>& batch, const Tensor<T>& onehot) {
  const Shape clip = config_.clip_shape();
  if (batch.rank() != clip.size() + 1) {
    throw DimensionError("batch must be [B," + shape_string(clip).substr(1) + ", got " +
                         shape_string(batch.shape()));
  }
  const std::size_t n = batch.extent(0);
  if (onehot.shape() != Shape{n, config_.classes}) {
    throw DimensionError("labels must be " + shape_string({n, config_.classes}) + ", got " +
                         shape_string(onehot.shape()));
  }
  std::vector<Trace> traces;
  traces.reserve(n);
  Tensor<T> probs({n, config_.classes});
  for (std::size_t b = 0; b < n; ++b) {
    traces.push_back(trace(batch.slice(b)));
    std::copy_n(traces.back().probs.ptr(), config_.classes, probs.ptr() + b * config_.classes);
  }
  const CrossEntropy<T> ce = categorical_cross_entropy(probs, onehot);
  for (std::size_t b = 0; b < n; ++b) backward_trace(traces[b], ce.grad_logits.slice(b));
  return {ce.loss, std::move(probs)};
}

template <typename T>
void Model<T>::backward_trace(const Trace& trace, const Tensor<T>& d_logits) {
  backprop(trace, d_logits, this, {}, nullptr);
}

template <typename T>
Tensor<T> Model<T>::layer_gradient(const Trace& trace, const Tensor<T>& d_logits, std::string_view layer) const {
  if (!is_spatial_layer(layer)) {
    throw ArgumentError("layer '" + std::string(layer) + "' is not a spatial convolutional layer");
  }
  Tensor<T> captured;
  backprop(trace, d_logits, nullptr, layer, &captured);
  return captured;
}

template <typename T>
void Model<T>::backprop(const Trace& tr, const Tensor<T>& d_logits, Model* sink, std::string_view capture,
                        Tensor<T>* captured) const {
  if (d_logits.size() != config_.classes) {
    throw DimensionError("logit gradient must have " + std::to_string(config_.classes) + " values");
  }
  auto grads = [sink](auto member) { return sink ? &(sink->*member).params : nullptr; };
  Tensor<T> g = dense_.back().backward_preactivation(tr.dense.back(), d_logits,
                                                     sink ? &sink->dense_.back().params : nullptr);
  for (std::size_t i = dense_.size() - 1; i-- > 0;) {
    g = dense_[i].backward(tr.dense[i], g, sink ? &sink->dense_[i].params : nullptr);
  }
  g = lstm_.backward(tr.lstm, g, grads(&Model::lstm_));
  g.reshape(secondary_.output_shape());
  g = secondary_.backward(tr.secondary, g, grads(&Model::secondary_));
  if (capture == kPrimaryConvName && !sink) {
    Tensor<T> d_conv = squash_backward(tr.primary.pre_squash, g);
    d_conv.reshape(tr.primary.conv.output.shape());
    *captured = std::move(d_conv);
    return;
  }
  g = primary_.backward(tr.primary, g, sink ? &sink->primary_.params() : nullptr);
  if (capture == kConv1Name && !sink) {
    *captured = std::move(g);
    return;
  }
  g = conv1_.backward(tr.conv1, g, grads(&Model::conv1_));
  if (capture == kConvLstmName && !sink) {
    *captured = std::move(g);
    return;
  }
  convlstm_.backward(tr.convlstm, g, grads(&Model::convlstm_));
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  auto collect = [&out](const std::string& layer, LayerParams<T>& params) {
    for (auto& p : params.entries()) out.push_back({layer + "/" + p.name, &p});
  };
  collect(convlstm_.name(), convlstm_.params);
  collect(conv1_.name(), conv1_.params);
  collect(primary_.name(), primary_.params());
  collect(secondary_.name(), secondary_.params);
  collect(lstm_.name(), lstm_.params);
  for (auto& d : dense_) collect(d.name(), d.params);
  return out;
}

template <typename T>
std::vector<ConstParamRef<T>> Model<T>::parameters() const {
  std::vector<ConstParamRef<T>> out;
  for (auto& r : const_cast<Model*>(this)->parameters()) out.push_back({std::move(r.name), r.param});
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& r : parameters()) r.param->grad.fill(T{});
}

template class Model<float>;
template class Model<double>;

}  // namespace capslstm
