#pragma once

// Binary checkpoint container shared by deep models and policies.
//
//   magic    8 bytes  "DTRUCKCK"
//   version  u32      (currently 1)
//   kind     str      e.g. "deep_model", "policy"
//   meta     u32 count, then (str key, str value) pairs
//   tensors  u32 count, then (str name, u32 ndim, u64 dims[ndim], f64 data[prod(dims)])
//
// str is a u32 byte length followed by the bytes. Every integer and double is
// little-endian regardless of host byte order. Tensor data is column-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/config.hpp"
#include "deeptruck/deepmodel.hpp"
#include "deeptruck/error.hpp"

namespace deeptruck {

inline constexpr char kCheckpointMagic[8] = {'D', 'T', 'R', 'U', 'C', 'K', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  bool operator==(const Tensor&) const = default;
};

struct Container {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<Tensor> tensors;

  const Tensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw Error(ErrorKind::Parse, "checkpoint has no tensor '" + name + "'");
  }

  const std::string& get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw Error(ErrorKind::Parse, "checkpoint has no metadata '" + key + "'");
    return it->second;
  }

  void add(const std::string& name, const MatrixXd& m) {
    Tensor t;
    t.name = name;
    t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.data.assign(m.data(), m.data() + m.size());
    tensors.push_back(std::move(t));
  }

  MatrixXd matrix(const std::string& name) const {
    const Tensor& t = tensor(name);
    if (t.shape.size() != 2) throw Error(ErrorKind::Shape, "tensor '" + name + "' is not a matrix");
    return Eigen::Map<const MatrixXd>(t.data.data(), static_cast<Index>(t.shape[0]), static_cast<Index>(t.shape[1]));
  }

  bool operator==(const Container&) const = default;
};

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  auto u = static_cast<std::make_unsigned_t<T>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

inline void put_double(std::ostream& out, double x) { put_le(out, std::bit_cast<std::uint64_t>(x)); }

inline void put_string(std::ostream& out, const std::string& s) {
  put_le(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error(ErrorKind::Parse, "truncated checkpoint");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

inline double get_double(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

inline std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  if (n > (1u << 28)) throw Error(ErrorKind::Parse, "implausible string length in checkpoint");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error(ErrorKind::Parse, "truncated checkpoint");
  return s;
}

}  // namespace detail

inline void write_container(std::ostream& out, const Container& c) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le(out, kCheckpointVersion);
  detail::put_string(out, c.kind);
  detail::put_le(out, static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    detail::put_string(out, k);
    detail::put_string(out, v);
  }
  detail::put_le(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    detail::put_string(out, t.name);
    detail::put_le(out, static_cast<std::uint32_t>(t.shape.size()));
    std::uint64_t n = 1;
    for (auto d : t.shape) {
      detail::put_le(out, d);
      n *= d;
    }
    if (n != t.data.size()) throw Error(ErrorKind::Shape, "tensor '" + t.name + "' data does not match its shape");
    for (double x : t.data) detail::put_double(out, x);
  }
}

inline Container read_container(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(ErrorKind::Parse, "not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::Parse, "unsupported checkpoint version " + std::to_string(version));
  Container c;
  c.kind = detail::get_string(in);
  const auto n_meta = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = detail::get_string(in);
    c.meta[k] = detail::get_string(in);
  }
  const auto n_tensors = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Tensor t;
    t.name = detail::get_string(in);
    const auto ndim = detail::get_le<std::uint32_t>(in);
    if (ndim > 8) throw Error(ErrorKind::Parse, "implausible tensor rank in checkpoint");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(detail::get_le<std::uint64_t>(in));
      n *= t.shape.back();
    }
    if (n > (1ull << 32)) throw Error(ErrorKind::Parse, "implausible tensor size in checkpoint");
    t.data.resize(n);
    for (auto& x : t.data) x = detail::get_double(in);
    c.tensors.push_back(std::move(t));
  }
  return c;
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint '" + path.string() + "'");
  write_container(out, c);
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

inline Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint '" + path.string() + "'");
  return read_container(in);
}

namespace detail {

inline std::string join_names(const std::vector<std::string>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + xs[i];
  return s;
}

inline MatrixXd column(const VectorXd& v) { return MatrixXd(v); }

}  // namespace detail

inline Container to_container(const DeepModelParams& p) {
  Container c;
  c.kind = "deep_model";
  const IoSpec& io = p.io();
  c.meta["u_dim"] = std::to_string(io.u_dim);
  c.meta["w_dim"] = std::to_string(io.w_dim);
  c.meta["y_dim"] = std::to_string(io.y_dim);
  c.meta["dt"] = format_double(io.dt);
  c.meta["channel_names"] = detail::join_names(io.names);
  c.meta["channel_units"] = detail::join_names(io.units);
  c.meta["output_order"] = "a,v,f_rate";
  c.meta["hidden"] = std::to_string(p.arch().hidden);
  std::string dec;
  for (std::size_t i = 0; i < p.arch().decoder_hidden.size(); ++i)
    dec += (i ? "," : "") + std::to_string(p.arch().decoder_hidden[i]);
  c.meta["decoder_hidden"] = dec;
  c.add("norm.input_offset", detail::column(io.input_offset));
  c.add("norm.input_scale", detail::column(io.input_scale));
  c.add("norm.output_offset", detail::column(io.output_offset));
  c.add("norm.output_scale", detail::column(io.output_scale));
  for (const auto& blk : p.layout().blocks()) c.add(blk.name, view(p.theta(), blk));
  return c;
}

inline DeepModelParams deep_model_from_container(const Container& c) {
  if (c.kind != "deep_model") throw Error(ErrorKind::Parse, "checkpoint holds '" + c.kind + "', not a deep model");
  IoSpec io = IoSpec::identity(parse_int(c.get("w_dim")), parse_double(c.get("dt")));
  io.names = split(c.get("channel_names"), ',');
  io.units = split(c.get("channel_units"), ',');
  io.input_offset = c.matrix("norm.input_offset").col(0);
  io.input_scale = c.matrix("norm.input_scale").col(0);
  io.output_offset = c.matrix("norm.output_offset").col(0);
  io.output_scale = c.matrix("norm.output_scale").col(0);
  ModelArch arch;
  arch.hidden = parse_int(c.get("hidden"));
  arch.decoder_hidden.clear();
  if (!c.get("decoder_hidden").empty())
    for (const auto& d : split(c.get("decoder_hidden"), ',')) arch.decoder_hidden.push_back(parse_int(d));
  DeepModelParams p(io, arch);
  for (const auto& blk : p.layout().blocks()) {
    const MatrixXd m = c.matrix(blk.name);
    if (m.rows() != blk.rows || m.cols() != blk.cols)
      throw Error(ErrorKind::Shape, "tensor '" + blk.name + "' has the wrong shape");
    view(p.theta(), blk) = m;
  }
  if (!p.theta().allFinite()) throw Error(ErrorKind::InvalidInput, "checkpoint holds non-finite weights");
  return p;
}

inline void save_deep_model(const std::filesystem::path& path, const DeepModelParams& p) {
  save_container(path, to_container(p));
}

inline DeepModelParams load_deep_model(const std::filesystem::path& path) {
  return deep_model_from_container(load_container(path));
}

}  // namespace deeptruck
