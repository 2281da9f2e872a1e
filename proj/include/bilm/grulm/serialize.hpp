#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "bilm/errors.hpp"
#include "bilm/grulm/models.hpp"

namespace bilm {

using AnyModel = std::variant<UniGruLm, BiGruLm>;

// Container layout (little-endian host order):
//   magic "BILMGRU\0", u32 version, u32 kind, u64 V, E, H, f64 dropout,
//   f64 c, u32 flags, u32 tensor count, then per tensor: u32 name length,
//   name, u64 rows, u64 cols, rows*cols f64 values.
inline constexpr std::array<char, 8> kModelMagic{'B', 'I', 'L', 'M', 'G', 'R', 'U', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T get(const char* what) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) throw FormatError(path_ + ": truncated file while reading " + what);
    return v;
  }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, std::streamsize(n));
    if (!in_) throw FormatError(path_ + ": truncated file while reading " + what);
  }

  const std::string& path() const { return path_; }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace detail

template <GruModel M>
void save_model(const M& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  const ModelDims d = model.dims();
  out.write(kModelMagic.data(), kModelMagic.size());
  detail::put(out, kModelVersion);
  detail::put(out, std::uint32_t(M::kind));
  detail::put(out, std::uint64_t(d.vocab));
  detail::put(out, std::uint64_t(d.embed));
  detail::put(out, std::uint64_t(d.hidden));
  detail::put(out, model.dropout);
  detail::put(out, norm_scalar(model));
  std::uint32_t flags = 0;
  if constexpr (M::kind == ModelKind::Bi) flags = model.normalize ? 1u : 0u;
  detail::put(out, flags);
  const auto params = model.parameters();
  detail::put(out, std::uint32_t(params.size()));
  for (const auto& p : params) {
    detail::put(out, std::uint32_t(p.name.size()));
    out.write(p.name.data(), std::streamsize(p.name.size()));
    detail::put(out, std::uint64_t(p.tensor->rows()));
    detail::put(out, std::uint64_t(p.tensor->cols()));
    out.write(reinterpret_cast<const char*>(p.tensor->data()), std::streamsize(p.tensor->size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed for " + path);
}

inline void save_model(const AnyModel& model, const std::string& path) {
  std::visit([&](const auto& m) { save_model(m, path); }, model);
}

inline AnyModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  detail::Reader r(in, path);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kModelMagic) throw FormatError(path + ": not a model file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelVersion) {
    throw FormatError(path + ": unsupported format version " + std::to_string(version) + " (expected " +
                      std::to_string(kModelVersion) + ")");
  }
  const auto kind = r.get<std::uint32_t>("model kind");
  ModelDims d;
  d.vocab = r.get<std::uint64_t>("V");
  d.embed = r.get<std::uint64_t>("E");
  d.hidden = r.get<std::uint64_t>("H");
  const double dropout = r.get<double>("dropout");
  const double c = r.get<double>("c");
  const auto flags = r.get<std::uint32_t>("flags");

  AnyModel model;
  try {
    if (kind == std::uint32_t(ModelKind::Uni)) {
      model = UniGruLm(d, dropout);
    } else if (kind == std::uint32_t(ModelKind::Bi)) {
      model = BiGruLm(d, dropout, (flags & 1u) != 0);
    } else {
      throw FormatError(path + ": unknown model kind " + std::to_string(kind));
    }
  } catch (const UsageError& e) {
    throw FormatError(path + ": invalid header: " + e.what());
  }

  const auto params = std::visit([](auto& m) { return m.parameters(); }, model);
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw FormatError(path + ": expected " + std::to_string(params.size()) + " tensors for a " +
                      to_string(ModelKind(kind)) + " model, file has " + std::to_string(count));
  }
  for (const auto& p : params) {
    const auto len = r.get<std::uint32_t>("tensor name length");
    if (len > 256) throw FormatError(path + ": implausible tensor name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "tensor name");
    if (name != p.name) throw FormatError(path + ": expected tensor '" + p.name + "', found '" + name + "'");
    const auto rows = r.get<std::uint64_t>("tensor rows");
    const auto cols = r.get<std::uint64_t>("tensor cols");
    if (rows != p.tensor->rows() || cols != p.tensor->cols()) {
      throw FormatError(path + ": tensor '" + name + "' is " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " but the header (V=" + std::to_string(d.vocab) + ", E=" + std::to_string(d.embed) +
                        ", H=" + std::to_string(d.hidden) + ") implies " + to_string(p.tensor->shape()));
    }
    r.bytes(reinterpret_cast<char*>(p.tensor->data()), p.tensor->size() * sizeof(double), "tensor values");
    if (!p.tensor->all_finite()) throw FormatError(path + ": tensor '" + name + "' has non-finite values");
  }
  if (kind == std::uint32_t(ModelKind::Bi) && std::get<BiGruLm>(model).c[0] != c) {
    throw FormatError(path + ": header c disagrees with tensor nce.c");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after last tensor");
  return model;
}

template <GruModel M>
M load_model_as(const std::string& path) {
  AnyModel any = load_model(path);
  if (auto* m = std::get_if<std::remove_const_t<M>>(&any)) return std::move(*m);
  throw FormatError(path + ": holds a " + std::visit([](const auto& m) { return std::string(to_string(m.kind)); }, any) +
                    " model, expected " + to_string(M::kind));
}

}  // namespace bilm
