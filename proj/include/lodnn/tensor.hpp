// Dense NCHW tensor with an optional same-shape gradient buffer, plus the
// "TVT1" container format used to exchange top-view image stacks on disk.
#ifndef LODNN_TENSOR_HPP
#define LODNN_TENSOR_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "lodnn/common.hpp"

namespace lodnn {

template <typename T>
struct Tensor {
  int n = 1, c = 1, h = 1, w = 1;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless a tape is recording

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
    require(n_ > 0 && c_ > 0 && h_ > 0 && w_ > 0, "tensor dimensions must be positive");
  }

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
  static Tensor full(int n, int c, int h, int w, T value) {
    Tensor t(n, c, h, w);
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }
  static Tensor scalar(T value) {
    Tensor t(1, 1, 1, 1);
    t.data[0] = value;
    return t;
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(int n, int c, int h, int w) {
  return std::make_shared<Tensor<T>>(n, c, h, w);
}

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// ---------------------------------------------------------------------------
// TVT1 container: magic "TVT1"; u32 LE channels, height, width; channel-major
// row-major binary32 LE payload; newline-separated channel-name footer.
// Round trips bit-exactly. Only single-image stacks (n == 1) are stored.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated field: " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32_le(os, bits);
}

inline float get_f32_le(std::istream& is, const std::string& what) {
  std::uint32_t bits = get_u32_le(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline void write_tvt(const std::string& path, const Tensorf& t,
                      const std::vector<std::string>& channel_names) {
  require(t.n == 1, "TVT stores single images, got batch " + std::to_string(t.n));
  require(static_cast<int>(channel_names.size()) == t.c,
          "channel name count must match channel count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("TVT1", 4);
  detail::put_u32_le(os, static_cast<std::uint32_t>(t.c));
  detail::put_u32_le(os, static_cast<std::uint32_t>(t.h));
  detail::put_u32_le(os, static_cast<std::uint32_t>(t.w));
  for (float v : t.data) detail::put_f32_le(os, v);
  for (std::size_t i = 0; i < channel_names.size(); ++i) {
    os << channel_names[i] << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

inline Tensorf read_tvt(const std::string& path, std::vector<std::string>* channel_names = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TVT1", 4) != 0)
    throw FormatError("not a TVT1 file: " + path);
  std::uint32_t c = detail::get_u32_le(is, "channels");
  std::uint32_t h = detail::get_u32_le(is, "height");
  std::uint32_t w = detail::get_u32_le(is, "width");
  if (c == 0 || h == 0 || w == 0 || c > 4096 || h > 65536 || w > 65536)
    throw FormatError("implausible TVT dimensions in " + path);
  Tensorf t(1, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = detail::get_f32_le(is, "payload");
  if (channel_names) {
    channel_names->clear();
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty()) channel_names->push_back(line);
    }
    if (channel_names->size() != c)
      throw FormatError("TVT channel-name footer has " + std::to_string(channel_names->size()) +
                        " entries, expected " + std::to_string(c));
  }
  return t;
}

}  // namespace lodnn

#endif  // LODNN_TENSOR_HPP
