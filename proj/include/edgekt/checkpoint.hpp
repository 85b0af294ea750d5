#pragma once
#include <filesystem>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "edgekt/model.hpp"

namespace edgekt {

// Checkpoint file layout (all integers little-endian):
//   magic   "EKTC" (4 bytes)
//   version u16 (currently 1)
//   spec    u32 length + UTF-8 canonical network spec text
//   count   u32 tensor count
//   tensor  u16 name length, name bytes, u8 ndim, ndim x u32 dims,
//           raw IEEE-754 binary32 values, row-major
// Tensors cover every trainable parameter plus each batchnorm layer's
// running mean/var, so a loaded model evaluates identically.

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (std::uint64_t(v) >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const std::string& what) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw DataError("checkpoint truncated while reading " + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return T(v);
}

inline void write_f32_array(std::ostream& os, const std::vector<float>& data) {
  for (float f : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_le<std::uint32_t>(os, bits);
  }
}

inline void read_f32_array(std::istream& is, std::vector<float>& data, const std::string& name) {
  for (float& f : data) {
    const std::uint32_t bits = read_le<std::uint32_t>(is, "tensor '" + name + "'");
    std::memcpy(&f, &bits, 4);
  }
}

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_le<std::uint16_t>(os, std::uint16_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
  write_le<std::uint8_t>(os, 4);
  write_le<std::uint32_t>(os, std::uint32_t(t.n));
  write_le<std::uint32_t>(os, std::uint32_t(t.c));
  write_le<std::uint32_t>(os, std::uint32_t(t.h));
  write_le<std::uint32_t>(os, std::uint32_t(t.w));
  write_f32_array(os, t.data);
}

}  // namespace detail

inline void save_checkpoint(Model& model, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write("EKTC", 4);
  detail::write_le<std::uint16_t>(os, kCheckpointVersion);
  const std::string spec_text = serialize_spec(model.spec());
  detail::write_le<std::uint32_t>(os, std::uint32_t(spec_text.size()));
  os.write(spec_text.data(), std::streamsize(spec_text.size()));

  const auto params = model.parameters();
  detail::write_le<std::uint32_t>(os, std::uint32_t(params.size() + model.buffers().size()));
  for (const auto* p : params) detail::write_tensor(os, p->name, p->var->value);
  for (const auto& [name, buf] : model.buffers()) detail::write_tensor(os, name, buf);
  if (!os) throw DataError("write failed for checkpoint: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "EKTC", 4) != 0)
    throw DataError("bad checkpoint magic in " + path);
  const auto version = detail::read_le<std::uint16_t>(is, "version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const auto spec_len = detail::read_le<std::uint32_t>(is, "spec length");
  std::string spec_text(spec_len, '\0');
  if (!is.read(spec_text.data(), spec_len)) throw DataError("checkpoint truncated in spec text");
  NetworkSpec spec = parse_spec(spec_text);

  Model model(spec, 0);
  const auto params = model.parameters();
  const std::size_t expected = params.size() + model.buffers().size();
  const auto count = detail::read_le<std::uint32_t>(is, "tensor count");
  if (count != expected)
    throw DataError("checkpoint lists " + std::to_string(count) + " tensors, spec declares " +
                    std::to_string(expected));

  std::set<std::string> filled;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_le<std::uint16_t>(is, "tensor name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw DataError("checkpoint truncated in tensor name");
    const auto ndim = detail::read_le<std::uint8_t>(is, "tensor '" + name + "'");
    if (ndim != 4) throw DataError("tensor '" + name + "' has unsupported rank");
    std::uint32_t dims[4];
    for (auto& d : dims) d = detail::read_le<std::uint32_t>(is, "tensor '" + name + "'");

    Tensor* dst = nullptr;
    if (auto* p = model.param(name)) {
      dst = &p->var->value;
    } else if (auto it = model.buffers().find(name); it != model.buffers().end()) {
      dst = &it->second;
    } else {
      throw DataError("tensor '" + name + "' is not declared by the embedded spec");
    }
    if (int(dims[0]) != dst->n || int(dims[1]) != dst->c || int(dims[2]) != dst->h ||
        int(dims[3]) != dst->w)
      throw DataError("tensor '" + name + "' shape disagrees with the embedded spec");
    if (!filled.insert(name).second) throw DataError("tensor '" + name + "' appears twice");
    detail::read_f32_array(is, dst->data, name);
  }
  if (filled.size() != expected) throw DataError("checkpoint is missing declared tensors");
  return model;
}

}  // namespace edgekt
