// Adam optimizer over a named parameter set, plus the "LDNN" checkpoint
// container (parameters and optimizer state, bit-exact round trip).
#ifndef LODNN_ADAM_HPP
#define LODNN_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lodnn/common.hpp"
#include "lodnn/tensor.hpp"

namespace lodnn::nn {

template <typename T>
struct Parameter {
  std::string name;
  TensorPtr<T> value;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::int64_t t = 0;
  std::vector<Tensor<T>> m;  // first moments, aligned with the parameter list
  std::vector<Tensor<T>> v;  // second moments

  static AdamState init(const std::vector<Parameter<T>>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.push_back(Tensor<T>::zeros(p.value->n, p.value->c, p.value->h, p.value->w));
      s.v.push_back(Tensor<T>::zeros(p.value->n, p.value->c, p.value->h, p.value->w));
    }
    return s;
  }
};

// One Adam update with bias correction. Rejects non-finite gradients before
// touching any parameter, naming the offender.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
  require(params.size() == state.m.size() && params.size() == state.v.size(),
          "adam_step: state not initialized for this parameter set");
  for (const auto& p : params) {
    require(p.value->grad.size() == p.value->data.size(),
            "adam_step: missing gradient for parameter " + p.name);
    for (const T& g : p.value->grad)
      if (!std::isfinite(static_cast<double>(g)))
        throw DataError("non-finite gradient in parameter " + p.name + "; step aborted");
  }
  state.t += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& theta = *params[pi].value;
    Tensor<T>& m = state.m[pi];
    Tensor<T>& v = state.v[pi];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = static_cast<double>(theta.grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg.beta2) * g * g;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double m_hat = mi / b1t;
      const double v_hat = vi / b2t;
      theta.data[i] =
          static_cast<T>(static_cast<double>(theta.data[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

template <typename T>
void zero_gradients(std::vector<Parameter<T>>& params) {
  for (auto& p : params) {
    p.value->ensure_grad();
    p.value->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "LDNN", u32 version, u32 parameter count, then per
// record (u32 name length, name bytes, u32 rank, u32 dims..., f32 payload);
// then u32 optimizer record count and records in the same layout. The step
// counter and learning rate travel as 1-element records.
// ---------------------------------------------------------------------------

namespace ckpt_detail {

inline void write_record(std::ostream& os, const std::string& name, const std::vector<int>& dims,
                         const float* payload, std::size_t count) {
  lodnn::detail::put_u32_le(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  lodnn::detail::put_u32_le(os, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) lodnn::detail::put_u32_le(os, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < count; ++i) lodnn::detail::put_f32_le(os, payload[i]);
}

struct RawRecord {
  std::string name;
  std::vector<int> dims;
  std::vector<float> payload;
};

inline RawRecord read_record(std::istream& is) {
  RawRecord r;
  const std::uint32_t name_len = lodnn::detail::get_u32_le(is, "record name length");
  if (name_len > 4096) throw FormatError("implausible checkpoint record name length");
  r.name.resize(name_len);
  if (!is.read(r.name.data(), name_len)) throw FormatError("truncated record name");
  const std::uint32_t rank = lodnn::detail::get_u32_le(is, "record rank");
  if (rank > 8) throw FormatError("implausible checkpoint record rank");
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = lodnn::detail::get_u32_le(is, "record dim");
    if (d == 0 || d > (1u << 24)) throw FormatError("implausible checkpoint dimension");
    r.dims.push_back(static_cast<int>(d));
    count *= d;
  }
  r.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i) r.payload[i] = lodnn::detail::get_f32_le(is, "record payload");
  return r;
}

}  // namespace ckpt_detail

struct Checkpoint {
  std::vector<Parameter<float>> params;
  AdamState<float> adam;
  float lr = 0.0f;
  bool has_adam = false;
};

inline void save_checkpoint(const std::string& path, const std::vector<Parameter<float>>& params,
                            const AdamState<float>* adam = nullptr, float lr = 0.0f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write("LDNN", 4);
  lodnn::detail::put_u32_le(os, 1u);  // format version
  lodnn::detail::put_u32_le(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    const Tensor<float>& t = *p.value;
    ckpt_detail::write_record(os, p.name, {t.n, t.c, t.h, t.w}, t.data.data(), t.size());
  }
  std::uint32_t adam_records = adam ? static_cast<std::uint32_t>(2 * params.size() + 2) : 0u;
  lodnn::detail::put_u32_le(os, adam_records);
  if (adam) {
    require(adam->m.size() == params.size(), "adam state does not match parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor<float>& m = adam->m[i];
      ckpt_detail::write_record(os, "adam.m/" + params[i].name, {m.n, m.c, m.h, m.w},
                                m.data.data(), m.size());
      const Tensor<float>& v = adam->v[i];
      ckpt_detail::write_record(os, "adam.v/" + params[i].name, {v.n, v.c, v.h, v.w},
                                v.data.data(), v.size());
    }
    const float t_as_f = static_cast<float>(adam->t);
    ckpt_detail::write_record(os, "adam.t", {1}, &t_as_f, 1);
    ckpt_detail::write_record(os, "adam.lr", {1}, &lr, 1);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LDNN", 4) != 0)
    throw FormatError("not an LDNN checkpoint: " + path);
  const std::uint32_t version = lodnn::detail::get_u32_le(is, "version");
  if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t n_params = lodnn::detail::get_u32_le(is, "parameter count");
  std::map<std::string, std::size_t> by_name;
  for (std::uint32_t i = 0; i < n_params; ++i) {
    auto r = ckpt_detail::read_record(is);
    if (r.dims.size() != 4) throw FormatError("parameter record " + r.name + " is not rank 4");
    auto t = make_tensor<float>(r.dims[0], r.dims[1], r.dims[2], r.dims[3]);
    t->data = std::move(r.payload);
    by_name[r.name] = ck.params.size();
    ck.params.push_back({r.name, t});
  }
  const std::uint32_t n_adam = lodnn::detail::get_u32_le(is, "optimizer record count");
  if (n_adam > 0) {
    ck.has_adam = true;
    ck.adam.m.resize(ck.params.size());
    ck.adam.v.resize(ck.params.size());
    for (std::uint32_t i = 0; i < n_adam; ++i) {
      auto r = ckpt_detail::read_record(is);
      if (r.name == "adam.t") {
        ck.adam.t = static_cast<std::int64_t>(r.payload.at(0));
      } else if (r.name == "adam.lr") {
        ck.lr = r.payload.at(0);
      } else if (r.name.rfind("adam.m/", 0) == 0 || r.name.rfind("adam.v/", 0) == 0) {
        const bool is_m = r.name[5] == 'm';
        const std::string pname = r.name.substr(7);
        auto it = by_name.find(pname);
        if (it == by_name.end())
          throw FormatError("optimizer record for unknown parameter " + pname);
        if (r.dims.size() != 4) throw FormatError("optimizer record " + r.name + " is not rank 4");
        Tensor<float> t(r.dims[0], r.dims[1], r.dims[2], r.dims[3]);
        t.data = std::move(r.payload);
        (is_m ? ck.adam.m : ck.adam.v)[it->second] = std::move(t);
      } else {
        throw FormatError("unrecognized optimizer record " + r.name);
      }
    }
  }
  return ck;
}

}  // namespace lodnn::nn

#endif  // LODNN_ADAM_HPP
