// Reverse-mode differentiable operators: dilated 2-D convolution, ELU,
// 2x2 max pool/unpool with indices, spatial dropout, per-pixel softmax,
// masked cross-entropy, and a sum reduction. Operators are templated on the
// scalar type; reductions accumulate in double regardless of T so that a
// float network and its double twin follow the same code path.
//
// Parallel loops always assign each output element to exactly one thread and
// reduce it sequentially, so results are bit-identical for any thread count.
#ifndef LODNN_AUTODIFF_HPP
#define LODNN_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "lodnn/common.hpp"
#include "lodnn/tensor.hpp"

namespace lodnn::nn {

// ---------------------------------------------------------------------------
// Tape: records backward closures during the forward pass; backward() replays
// them in reverse and releases the graph. A null tape means inference.
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and runs the recorded closures in reverse.
  void backward(const TensorPtr<T>& loss) {
    require(loss && loss->size() == 1, "backward expects a scalar loss");
    if (ops_.empty())
      throw ContractViolation("backward called twice without a new forward pass");
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

  void reset() { ops_.clear(); }
  std::size_t recorded_ops() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

namespace detail {

template <typename Fn>
void parallel_for(std::int64_t count, Fn&& fn) {
#ifdef _OPENMP
  int threads = num_threads();
  if (threads > 1 && count > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < count; ++i) fn(i);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation) with per-axis dilation and "same" padding.
// ---------------------------------------------------------------------------

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 3;
  int kernel_w = 3;
  int dilation_w = 1;  // width first, matching the (width, height) convention
  int dilation_h = 1;

  int pad_h() const { return dilation_h * (kernel_h - 1) / 2; }
  int pad_w() const { return dilation_w * (kernel_w - 1) / 2; }

  void validate() const {
    require(in_channels > 0 && out_channels > 0, "conv spec: channel counts must be positive");
    require(kernel_h > 0 && kernel_w > 0 && dilation_h > 0 && dilation_w > 0,
            "conv spec: kernel and dilation must be positive");
    require(kernel_h % 2 == 1 && kernel_w % 2 == 1,
            "conv spec: same-padding requires odd kernels");
  }
};

template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias, const ConvSpec& spec) {
  spec.validate();
  if (x->c != spec.in_channels)
    throw ContractViolation("conv2d: input " + x->shape_str() + " does not carry " +
                            std::to_string(spec.in_channels) + " channels");
  if (weight->n != spec.out_channels || weight->c != spec.in_channels ||
      weight->h != spec.kernel_h || weight->w != spec.kernel_w)
    throw ContractViolation("conv2d: weight " + weight->shape_str() + " does not match spec " +
                            std::to_string(spec.out_channels) + "x" +
                            std::to_string(spec.in_channels) + "x" +
                            std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w));
  if (bias->size() != static_cast<std::size_t>(spec.out_channels))
    throw ContractViolation("conv2d: bias " + bias->shape_str() + " does not match " +
                            std::to_string(spec.out_channels) + " output channels");

  const int N = x->n, IC = x->c, H = x->h, W = x->w;
  const int OC = spec.out_channels, KH = spec.kernel_h, KW = spec.kernel_w;
  const int dh = spec.dilation_h, dw = spec.dilation_w;
  const int ph = spec.pad_h(), pw = spec.pad_w();

  auto out = make_tensor<T>(N, OC, H, W);
  const T* xd = x->data.data();
  const T* wd = weight->data.data();
  const T* bd = bias->data.data();
  T* od = out->data.data();

  detail::parallel_for(static_cast<std::int64_t>(N) * OC * H, [&](std::int64_t job) {
    const int oy = static_cast<int>(job % H);
    const int oc = static_cast<int>((job / H) % OC);
    const int in = static_cast<int>(job / (static_cast<std::int64_t>(H) * OC));
    T* orow = od + ((static_cast<std::size_t>(in) * OC + oc) * H + oy) * W;
    for (int ox = 0; ox < W; ++ox) {
      double acc = static_cast<double>(bd[oc]);
      for (int ic = 0; ic < IC; ++ic) {
        const T* xplane = xd + (static_cast<std::size_t>(in) * IC + ic) * H * W;
        const T* wplane = wd + (static_cast<std::size_t>(oc) * IC + ic) * KH * KW;
        for (int ky = 0; ky < KH; ++ky) {
          const int iy = oy + dh * ky - ph;
          if (iy < 0 || iy >= H) continue;
          const T* xrow = xplane + static_cast<std::size_t>(iy) * W;
          const T* wrow = wplane + static_cast<std::size_t>(ky) * KW;
          for (int kx = 0; kx < KW; ++kx) {
            const int ix = ox + dw * kx - pw;
            if (ix < 0 || ix >= W) continue;
            acc += static_cast<double>(xrow[ix]) * static_cast<double>(wrow[kx]);
          }
        }
      }
      orow[ox] = static_cast<T>(acc);
    }
  });

  if (tape) {
    x->ensure_grad();
    weight->ensure_grad();
    bias->ensure_grad();
    out->ensure_grad();
    tape->record([x, weight, bias, out, spec]() {
      const int N = x->n, IC = x->c, H = x->h, W = x->w;
      const int OC = spec.out_channels, KH = spec.kernel_h, KW = spec.kernel_w;
      const int dh = spec.dilation_h, dw = spec.dilation_w;
      const int ph = spec.pad_h(), pw = spec.pad_w();
      const T* go = out->grad.data();
      const T* xd = x->data.data();
      const T* wd = weight->data.data();

      // d/d(input): gather over output taps that touch each input element.
      T* gx = x->grad.data();
      detail::parallel_for(static_cast<std::int64_t>(N) * IC * H, [&](std::int64_t job) {
        const int iy = static_cast<int>(job % H);
        const int ic = static_cast<int>((job / H) % IC);
        const int in = static_cast<int>(job / (static_cast<std::int64_t>(H) * IC));
        T* grow = gx + ((static_cast<std::size_t>(in) * IC + ic) * H + iy) * W;
        for (int ix = 0; ix < W; ++ix) {
          double acc = 0.0;
          for (int oc = 0; oc < OC; ++oc) {
            const T* gplane = go + (static_cast<std::size_t>(in) * OC + oc) * H * W;
            const T* wplane = wd + (static_cast<std::size_t>(oc) * IC + ic) * KH * KW;
            for (int ky = 0; ky < KH; ++ky) {
              const int oy = iy - dh * ky + ph;
              if (oy < 0 || oy >= H) continue;
              for (int kx = 0; kx < KW; ++kx) {
                const int ox = ix - dw * kx + pw;
                if (ox < 0 || ox >= W) continue;
                acc += static_cast<double>(gplane[static_cast<std::size_t>(oy) * W + ox]) *
                       static_cast<double>(wplane[static_cast<std::size_t>(ky) * KW + kx]);
              }
            }
          }
          grow[ix] += static_cast<T>(acc);
        }
      });

      // d/d(weight): one weight element per job keeps the reduction sequential.
      T* gw = weight->grad.data();
      detail::parallel_for(static_cast<std::int64_t>(OC) * IC * KH * KW, [&](std::int64_t job) {
        const int kx = static_cast<int>(job % KW);
        const int ky = static_cast<int>((job / KW) % KH);
        const int ic = static_cast<int>((job / (KW * KH)) % IC);
        const int oc = static_cast<int>(job / (static_cast<std::int64_t>(KW) * KH * IC));
        double acc = 0.0;
        for (int in = 0; in < N; ++in) {
          const T* gplane = go + (static_cast<std::size_t>(in) * OC + oc) * H * W;
          const T* xplane = xd + (static_cast<std::size_t>(in) * IC + ic) * H * W;
          const int iy0 = dh * ky - ph;
          for (int oy = 0; oy < H; ++oy) {
            const int iy = oy + iy0;
            if (iy < 0 || iy >= H) continue;
            const T* grow = gplane + static_cast<std::size_t>(oy) * W;
            const T* xrow = xplane + static_cast<std::size_t>(iy) * W;
            const int ix0 = dw * kx - pw;
            const int lo = std::max(0, -ix0);
            const int hi = std::min(W, W - ix0);
            for (int ox = lo; ox < hi; ++ox)
              acc += static_cast<double>(grow[ox]) * static_cast<double>(xrow[ox + ix0]);
          }
        }
        gw[job] += static_cast<T>(acc);
      });

      // d/d(bias)
      T* gb = bias->grad.data();
      detail::parallel_for(OC, [&](std::int64_t oc) {
        double acc = 0.0;
        for (int in = 0; in < N; ++in) {
          const T* gplane = go + (static_cast<std::size_t>(in) * OC + oc) * H * W;
          for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i)
            acc += static_cast<double>(gplane[i]);
        }
        gb[oc] += static_cast<T>(acc);
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// ELU, alpha = 1.
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> elu(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->n, x->c, x->h, x->w);
  for (std::size_t i = 0; i < x->size(); ++i) {
    const double v = static_cast<double>(x->data[i]);
    out->data[i] = static_cast<T>(v > 0.0 ? v : std::expm1(v));
  }
  if (tape) {
    x->ensure_grad();
    out->ensure_grad();
    tape->record([x, out]() {
      for (std::size_t i = 0; i < x->size(); ++i) {
        const double v = static_cast<double>(x->data[i]);
        const double d = v > 0.0 ? 1.0 : std::exp(v);
        x->grad[i] += static_cast<T>(static_cast<double>(out->grad[i]) * d);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling with stride 2; indices record the argmax (flat input index),
// ties broken toward the smallest flat index.
// ---------------------------------------------------------------------------

struct PoolIndices {
  int in_h = 0, in_w = 0;
  std::vector<std::int32_t> flat;  // one entry per output element
};

template <typename T>
std::pair<TensorPtr<T>, PoolIndices> maxpool2(Tape<T>* tape, const TensorPtr<T>& x) {
  if (x->h % 2 != 0 || x->w % 2 != 0)
    throw ContractViolation("maxpool2 requires even spatial size, got " + x->shape_str());
  const int N = x->n, C = x->c, H = x->h, W = x->w;
  const int OH = H / 2, OW = W / 2;
  auto out = make_tensor<T>(N, C, OH, OW);
  PoolIndices idx;
  idx.in_h = H;
  idx.in_w = W;
  idx.flat.resize(out->size());
  for (int in = 0; in < N; ++in)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          std::size_t best = x->index(in, c, 2 * oy, 2 * ox);
          T best_v = x->data[best];
          const int cand_y[2] = {2 * oy, 2 * oy + 1};
          const int cand_x[2] = {2 * ox, 2 * ox + 1};
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
              std::size_t j = x->index(in, c, cand_y[a], cand_x[b]);
              if (x->data[j] > best_v) {
                best_v = x->data[j];
                best = j;
              }
            }
          out->at(in, c, oy, ox) = best_v;
          idx.flat[out->index(in, c, oy, ox)] = static_cast<std::int32_t>(best);
        }
  if (tape) {
    x->ensure_grad();
    out->ensure_grad();
    auto flat = idx.flat;  // value copy: the tape owns its routing
    tape->record([x, out, flat]() {
      for (std::size_t i = 0; i < out->size(); ++i)
        x->grad[static_cast<std::size_t>(flat[i])] += out->grad[i];
    });
  }
  return {out, std::move(idx)};
}

template <typename T>
TensorPtr<T> maxunpool2(Tape<T>* tape, const TensorPtr<T>& x, const PoolIndices& idx) {
  require(idx.flat.size() == x->size(), "maxunpool2: indices do not match input size");
  require(idx.in_h == 2 * x->h && idx.in_w == 2 * x->w,
          "maxunpool2: output shape does not match pooled input");
  auto out = make_tensor<T>(x->n, x->c, idx.in_h, idx.in_w);
  for (std::size_t i = 0; i < x->size(); ++i) {
    const std::size_t j = static_cast<std::size_t>(idx.flat[i]);
    if (idx.flat[i] < 0 || j >= out->size())
      throw ContractViolation("maxunpool2: index out of bounds");
    out->data[j] = x->data[i];
  }
  if (tape) {
    x->ensure_grad();
    out->ensure_grad();
    auto flat = idx.flat;
    tape->record([x, out, flat]() {
      for (std::size_t i = 0; i < x->size(); ++i)
        x->grad[i] += out->grad[static_cast<std::size_t>(flat[i])];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial dropout: zeroes whole channels. The mask is a pure function of
// (seed, layer id, step, sample, channel), so a run replays exactly.
// ---------------------------------------------------------------------------

struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer_id = 0;
  std::uint64_t step = 0;
};

template <typename T>
TensorPtr<T> spatial_dropout(Tape<T>* tape, const TensorPtr<T>& x, double p_drop, bool training,
                             const DropoutKey& key) {
  require(p_drop >= 0.0 && p_drop < 1.0, "p_drop must be in [0, 1)");
  if (!training || p_drop == 0.0) {
    auto out = make_tensor<T>(x->n, x->c, x->h, x->w);
    out->data = x->data;
    if (tape) {
      x->ensure_grad();
      out->ensure_grad();
      tape->record([x, out]() {
        for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
      });
    }
    return out;
  }
  const int N = x->n, C = x->c;
  const std::size_t plane = static_cast<std::size_t>(x->h) * x->w;
  std::vector<T> scale(static_cast<std::size_t>(N) * C);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p_drop));
  for (int in = 0; in < N; ++in)
    for (int c = 0; c < C; ++c) {
      const double u = uniform01(counter_hash(key.seed, key.layer_id, key.step,
                                              static_cast<std::uint64_t>(in) * C + c));
      scale[static_cast<std::size_t>(in) * C + c] = u < p_drop ? T(0) : keep_scale;
    }
  auto out = make_tensor<T>(x->n, x->c, x->h, x->w);
  for (std::size_t ch = 0; ch < scale.size(); ++ch) {
    const T s = scale[ch];
    const T* src = x->data.data() + ch * plane;
    T* dst = out->data.data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * s;
  }
  if (tape) {
    x->ensure_grad();
    out->ensure_grad();
    tape->record([x, out, scale, plane]() {
      for (std::size_t ch = 0; ch < scale.size(); ++ch) {
        const T s = scale[ch];
        const T* g = out->grad.data() + ch * plane;
        T* gx = x->grad.data() + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) gx[i] += g[i] * s;
      }
    });
  }
  return out;
}

// Test hook: fraction of channels the mask would drop for a given key.
inline double dropout_drop_fraction(double p_drop, const DropoutKey& key, int channels) {
  int dropped = 0;
  for (int c = 0; c < channels; ++c)
    if (uniform01(counter_hash(key.seed, key.layer_id, key.step, c)) < p_drop) ++dropped;
  return static_cast<double>(dropped) / channels;
}

// ---------------------------------------------------------------------------
// Per-pixel softmax across channels, max-subtracted for stability.
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> softmax_channels(Tape<T>* tape, const TensorPtr<T>& x) {
  require(x->c >= 2, "softmax_channels needs at least 2 channels");
  const int N = x->n, C = x->c, H = x->h, W = x->w;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  auto out = make_tensor<T>(N, C, H, W);
  detail::parallel_for(static_cast<std::int64_t>(N) * H * W, [&](std::int64_t job) {
    const std::size_t px = static_cast<std::size_t>(job % (H * static_cast<std::int64_t>(W)));
    const int in = static_cast<int>(job / plane);
    const std::size_t base = static_cast<std::size_t>(in) * C * plane + px;
    double mx = static_cast<double>(x->data[base]);
    for (int c = 1; c < C; ++c)
      mx = std::max(mx, static_cast<double>(x->data[base + c * plane]));
    double sum = 0.0;
    for (int c = 0; c < C; ++c)
      sum += std::exp(static_cast<double>(x->data[base + c * plane]) - mx);
    for (int c = 0; c < C; ++c)
      out->data[base + c * plane] =
          static_cast<T>(std::exp(static_cast<double>(x->data[base + c * plane]) - mx) / sum);
  });
  if (tape) {
    x->ensure_grad();
    out->ensure_grad();
    tape->record([x, out, plane]() {
      const int N = x->n, C = x->c;
      for (int in = 0; in < N; ++in)
        for (std::size_t px = 0; px < plane; ++px) {
          const std::size_t base = static_cast<std::size_t>(in) * C * plane + px;
          double dot = 0.0;
          for (int c = 0; c < C; ++c)
            dot += static_cast<double>(out->grad[base + c * plane]) *
                   static_cast<double>(out->data[base + c * plane]);
          for (int c = 0; c < C; ++c) {
            const double y = static_cast<double>(out->data[base + c * plane]);
            const double g = static_cast<double>(out->grad[base + c * plane]);
            x->grad[base + c * plane] += static_cast<T>(y * (g - dot));
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masked cross-entropy over softmax probabilities. Labels are class indices
// per pixel (NotRoad = 0, Road = 1); Unknown = 2 pixels contribute nothing
// and are excluded from the normalizer.
// ---------------------------------------------------------------------------

struct CrossEntropyStats {
  std::int64_t counted_pixels = 0;
  std::int64_t masked_pixels = 0;
  std::int64_t clamp_events = 0;
};

template <typename T>
TensorPtr<T> cross_entropy(Tape<T>* tape, const TensorPtr<T>& probs,
                           const std::vector<std::uint8_t>& labels,
                           CrossEntropyStats* stats = nullptr) {
  const int N = probs->n, C = probs->c, H = probs->h, W = probs->w;
  require(labels.size() == static_cast<std::size_t>(N) * H * W,
          "cross_entropy: label count does not match probs spatial shape");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  constexpr double kClamp = 1e-12;

  std::int64_t counted = 0, clamped = 0;
  double sum_log = 0.0;
  for (int in = 0; in < N; ++in)
    for (std::size_t px = 0; px < plane; ++px) {
      const std::uint8_t lab = labels[static_cast<std::size_t>(in) * plane + px];
      if (lab == static_cast<std::uint8_t>(Label::Unknown)) continue;
      require(lab < C, "cross_entropy: label index exceeds channel count");
      double p = static_cast<double>(probs->data[(static_cast<std::size_t>(in) * C + lab) * plane + px]);
      if (p < kClamp) {
        p = kClamp;
        ++clamped;
      }
      sum_log += std::log(p);
      ++counted;
    }
  if (stats) {
    stats->counted_pixels = counted;
    stats->masked_pixels = static_cast<std::int64_t>(labels.size()) - counted;
    stats->clamp_events = clamped;
  }
  auto loss = make_tensor<T>(1, 1, 1, 1);
  loss->data[0] = counted > 0 ? static_cast<T>(-sum_log / static_cast<double>(counted)) : T(0);

  if (tape) {
    probs->ensure_grad();
    loss->ensure_grad();
    tape->record([probs, loss, labels, plane, counted]() {
      if (counted == 0) return;
      const int N = probs->n, C = probs->c;
      const double g0 = static_cast<double>(loss->grad[0]);
      for (int in = 0; in < N; ++in)
        for (std::size_t px = 0; px < plane; ++px) {
          const std::uint8_t lab = labels[static_cast<std::size_t>(in) * plane + px];
          if (lab == static_cast<std::uint8_t>(Label::Unknown)) continue;
          const std::size_t j = (static_cast<std::size_t>(in) * C + lab) * plane + px;
          double p = static_cast<double>(probs->data[j]);
          if (p < kClamp) p = kClamp;
          probs->grad[j] += static_cast<T>(-g0 / (p * static_cast<double>(counted)));
        }
    });
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Sum of all elements, as a scalar node.
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> reduce_sum(Tape<T>* tape, const TensorPtr<T>& x) {
  double acc = 0.0;
  for (const T& v : x->data) acc += static_cast<double>(v);
  auto out = make_tensor<T>(1, 1, 1, 1);
  out->data[0] = static_cast<T>(acc);
  if (tape) {
    x->ensure_grad();
    out->ensure_grad();
    tape->record([x, out]() {
      const T g = out->grad[0];
      for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += g;
    });
  }
  return out;
}

}  // namespace lodnn::nn

#endif  // LODNN_AUTODIFF_HPP
