// The road-detection FCN: encoder (two 3x3 convs + 2x2 max pool), a context
// module of seven exponentially dilated 3x3 convolutions plus a linear 1x1
// reduction, and a decoder (max unpool + two 3x3 convs) ending in a per-pixel
// two-class softmax. Also: receptive-field bookkeeping for the context stack.
#ifndef LODNN_MODEL_HPP
#define LODNN_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lodnn/adam.hpp"
#include "lodnn/autodiff.hpp"
#include "lodnn/common.hpp"
#include "lodnn/tensor.hpp"

namespace lodnn {

enum class LayerKind { Conv, DilatedConv, MaxPool, MaxUnpool, Elu, SpatialDropout, Softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int kernel_h = 0, kernel_w = 0;
  int dilation_w = 1, dilation_h = 1;
  int out_maps = 0;

  static LayerSpec dilated(int k, int dw, int dh, int maps) {
    return {LayerKind::DilatedConv, k, k, dw, dh, maps};
  }
  static LayerSpec conv(int k, int maps) { return {LayerKind::Conv, k, k, 1, 1, maps}; }
};

struct ModelConfig {
  int input_channels = 6;   // 1 for the occupancy-only variant
  int encoder_maps = 32;
  int context_maps = 128;
  int context_out_maps = 32;  // produced by the final 1x1 layer
  int decoder_maps = 32;
  int num_classes = 2;
  double dropout_p = 0.25;

  // Context module: seven 3x3 dilated layers with exponentially growing
  // (width, height) dilation, then one linear 1x1 reduction.
  static const std::vector<std::pair<int, int>>& context_dilations() {
    static const std::vector<std::pair<int, int>> d = {{1, 1},  {1, 2},   {2, 4},  {4, 8},
                                                       {8, 16}, {16, 32}, {32, 64}};
    return d;
  }

  std::vector<LayerSpec> context_layers() const {
    std::vector<LayerSpec> layers;
    for (const auto& [dw, dh] : context_dilations())
      layers.push_back(LayerSpec::dilated(3, dw, dh, context_maps));
    layers.push_back(LayerSpec::conv(1, context_out_maps));
    return layers;
  }

  void validate() const {
    if (input_channels < 1) throw ConfigError("model: input_channels must be >= 1");
    if (encoder_maps < 1 || context_maps < 1 || decoder_maps < 1)
      throw ConfigError("model: feature-map counts must be >= 1");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw ConfigError("model: dropout_p must be in [0, 1)");
    // The unpooling indices are recorded for encoder_maps channels, so the
    // context module must hand back exactly that many.
    if (context_out_maps != encoder_maps)
      throw ConfigError(
          "model: context layer 8 emits " + std::to_string(context_out_maps) +
          " maps but the decoder unpools " + std::to_string(encoder_maps) +
          " encoder channels; the two must match");
  }
};

// ---------------------------------------------------------------------------
// Receptive-field bookkeeping (pure integer arithmetic, width x height).
// A k x k convolution with dilation (dw, dh) grows the field by
// (dw*(kw-1), dh*(kh-1)); 1x1 layers leave it unchanged.
// ---------------------------------------------------------------------------

struct ReceptiveField {
  int width_px = 1;
  int height_px = 1;
};

inline std::vector<ReceptiveField> receptive_field(const std::vector<LayerSpec>& layers) {
  std::vector<ReceptiveField> out;
  ReceptiveField rf;
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::DilatedConv) {
      rf.width_px += l.dilation_w * (l.kernel_w - 1);
      rf.height_px += l.dilation_h * (l.kernel_h - 1);
    }
    out.push_back(rf);
  }
  return out;
}

// Human-readable context-module table (layer, filter, dilation, receptive
// field, feature maps, non-linearity).
inline std::string context_module_table(const ModelConfig& cfg) {
  const auto layers = cfg.context_layers();
  const auto rf = receptive_field(layers);
  std::ostringstream os;
  os << "layer  filter  dilation(w,h)  receptive_field(wxh)  feature_maps  non_linearity\n";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const bool linear = l.kernel_w == 1 && l.kernel_h == 1;
    os << std::left << std::setw(7) << (i + 1) << std::setw(8)
       << (std::to_string(l.kernel_w) + "x" + std::to_string(l.kernel_h));
    os << std::setw(15)
       << (linear ? std::string("-")
                  : "(" + std::to_string(l.dilation_w) + "," + std::to_string(l.dilation_h) + ")");
    os << std::setw(22) << (std::to_string(rf[i].width_px) + "x" + std::to_string(rf[i].height_px));
    os << std::setw(14) << l.out_maps;
    os << (linear ? "-" : "ELU") << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// The network.
// ---------------------------------------------------------------------------

template <typename T>
class LoDNN {
 public:
  LoDNN() = default;

  static LoDNN build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    LoDNN net;
    net.cfg_ = cfg;
    int param_idx = 0;
    auto add_conv = [&](const std::string& name, int in_c, int out_c, int k, int dw, int dh) {
      nn::ConvSpec spec;
      spec.in_channels = in_c;
      spec.out_channels = out_c;
      spec.kernel_h = k;
      spec.kernel_w = k;
      spec.dilation_w = dw;
      spec.dilation_h = dh;
      auto w = make_tensor<T>(out_c, in_c, k, k);
      // fan-in scaled uniform bound, zero bias
      const double fan_in = static_cast<double>(in_c) * k * k;
      const double bound = std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < w->size(); ++i)
        w->data[i] = static_cast<T>(
            uniform_range(counter_hash(seed, 0x57, param_idx, i), -bound, bound));
      auto b = make_tensor<T>(1, out_c, 1, 1);
      net.params_.push_back({name + ".weight", w});
      net.params_.push_back({name + ".bias", b});
      net.convs_.push_back(spec);
      ++param_idx;
      return static_cast<int>(net.convs_.size()) - 1;
    };

    net.enc1_ = add_conv("encoder.conv1", cfg.input_channels, cfg.encoder_maps, 3, 1, 1);
    net.enc2_ = add_conv("encoder.conv2", cfg.encoder_maps, cfg.encoder_maps, 3, 1, 1);
    const auto ctx = cfg.context_layers();
    int in_c = cfg.encoder_maps;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      const LayerSpec& l = ctx[i];
      net.ctx_.push_back(add_conv("context.conv" + std::to_string(i + 1), in_c, l.out_maps,
                                  l.kernel_w, l.dilation_w, l.dilation_h));
      in_c = l.out_maps;
    }
    net.dec1_ = add_conv("decoder.conv1", cfg.context_out_maps, cfg.decoder_maps, 3, 1, 1);
    net.dec2_ = add_conv("decoder.conv2", cfg.decoder_maps, cfg.num_classes, 3, 1, 1);
    return net;
  }

  // Forward pass to per-pixel class probabilities (N, num_classes, H, W).
  // Dropout fires only in training mode, keyed by (seed, layer, step).
  TensorPtr<T> forward(nn::Tape<T>* tape, const TensorPtr<T>& input, bool training,
                       std::uint64_t dropout_seed = 0, std::uint64_t step = 0) const {
    if (input->c != cfg_.input_channels)
      throw ContractViolation("forward: input has " + std::to_string(input->c) +
                              " channels, model expects " + std::to_string(cfg_.input_channels));
    if (input->h % 2 != 0 || input->w % 2 != 0)
      throw ContractViolation("forward: spatial size must be even, got " + input->shape_str());

    auto conv = [&](int idx, const TensorPtr<T>& x) {
      return nn::conv2d(tape, x, params_[2 * idx].value, params_[2 * idx + 1].value, convs_[idx]);
    };

    auto h = nn::elu(tape, conv(enc1_, input));
    h = nn::elu(tape, conv(enc2_, h));
    auto [pooled, indices] = nn::maxpool2(tape, h);
    h = pooled;
    ctx_shape_ = {h->h, h->w};
    for (std::size_t i = 0; i < ctx_.size(); ++i) {
      const bool linear = convs_[ctx_[i]].kernel_w == 1 && convs_[ctx_[i]].kernel_h == 1;
      h = conv(ctx_[static_cast<int>(i)], h);
      if (!linear) {
        h = nn::elu(tape, h);
        h = nn::spatial_dropout(tape, h, cfg_.dropout_p, training,
                                nn::DropoutKey{dropout_seed, static_cast<std::uint64_t>(i), step});
      }
    }
    h = nn::maxunpool2(tape, h, indices);
    h = nn::elu(tape, conv(dec1_, h));
    h = conv(dec2_, h);
    return nn::softmax_channels(tape, h);
  }

  // Road-probability image: class-1 plane of the softmax output.
  Tensorf confidence_map(const TensorPtr<T>& probs, int batch_index = 0) const {
    Tensorf out(1, 1, probs->h, probs->w);
    const std::size_t plane = static_cast<std::size_t>(probs->h) * probs->w;
    const std::size_t base = (static_cast<std::size_t>(batch_index) * probs->c + 1) * plane;
    for (std::size_t i = 0; i < plane; ++i)
      out.data[i] = static_cast<float>(probs->data[base + i]);
    return out;
  }

  std::vector<nn::Parameter<T>>& parameters() { return params_; }
  const std::vector<nn::Parameter<T>>& parameters() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  // Spatial size of the context-module input during the last forward pass.
  std::pair<int, int> context_input_hw() const { return ctx_shape_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += static_cast<std::int64_t>(p.value->size());
    return n;
  }

  // Adopts checkpoint tensors by name; shapes must match exactly.
  void load_parameters(const std::vector<nn::Parameter<float>>& stored) {
    if (stored.size() != params_.size())
      throw DataError("checkpoint/model config mismatch: " + std::to_string(stored.size()) +
                      " stored parameters vs " + std::to_string(params_.size()) + " in the model");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (stored[i].name != params_[i].name)
        throw DataError("checkpoint/model config mismatch at parameter " + stored[i].name);
      if (!(stored[i].value->n == params_[i].value->n && stored[i].value->c == params_[i].value->c &&
            stored[i].value->h == params_[i].value->h && stored[i].value->w == params_[i].value->w))
        throw DataError("checkpoint/model config mismatch: shape of " + stored[i].name);
      for (std::size_t j = 0; j < stored[i].value->size(); ++j)
        params_[i].value->data[j] = static_cast<T>(stored[i].value->data[j]);
    }
  }

 private:
  ModelConfig cfg_;
  std::vector<nn::Parameter<T>> params_;  // weight, bias per conv, in order
  std::vector<nn::ConvSpec> convs_;
  int enc1_ = -1, enc2_ = -1, dec1_ = -1, dec2_ = -1;
  std::vector<int> ctx_;
  mutable std::pair<int, int> ctx_shape_{0, 0};
};

}  // namespace lodnn

#endif  // LODNN_MODEL_HPP
