#include "netwarp/tensor_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "binary_io.hpp"

namespace netwarp {

namespace {
constexpr char kTensorMagic[4] = {'N', 'W', 'T', '1'};
constexpr char kArchiveMagic[4] = {'N', 'W', 'A', '1'};
// Guards against absurd allocations from corrupt headers.
constexpr std::uint64_t kMaxElements = 1ull << 32;
}  // namespace

void write_tensor(std::ostream& out, const Tensor<float>& t) {
  out.write(kTensorMagic, 4);
  const Shape& s = t.shape();
  detail::put_u32(out, static_cast<std::uint32_t>(s.n));
  detail::put_u32(out, static_cast<std::uint32_t>(s.c));
  detail::put_u32(out, static_cast<std::uint32_t>(s.h));
  detail::put_u32(out, static_cast<std::uint32_t>(s.w));
  for (float v : t.data()) detail::put_f32(out, v);
}

Tensor<float> read_tensor(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4) throw FormatError("truncated tensor header");
  if (!std::equal(magic, magic + 4, kTensorMagic)) throw FormatError("bad tensor magic");
  Shape s;
  s.n = detail::get_u32(in, "tensor dims");
  s.c = detail::get_u32(in, "tensor dims");
  s.h = detail::get_u32(in, "tensor dims");
  s.w = detail::get_u32(in, "tensor dims");
  const std::uint64_t count = static_cast<std::uint64_t>(s.n) * s.c * s.h * s.w;
  if (count > kMaxElements) throw FormatError("tensor too large: " + s.str());
  std::vector<float> data(count);
  for (auto& v : data) v = detail::get_f32(in, "tensor payload");
  return Tensor<float>(s, std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  write_tensor(out, t);
  if (!out) throw FormatError("write failed: " + path.string());
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return read_tensor(in);
}

void save_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out.write(kArchiveMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, tensor);
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<ArchiveEntry> load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kArchiveMagic)) {
    throw FormatError("bad archive magic: " + path.string());
  }
  const std::uint32_t count = detail::get_u32(in, "archive count");
  std::vector<ArchiveEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = detail::get_u32(in, "entry name length");
    if (len > 4096) throw FormatError("archive entry name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len)) throw FormatError("truncated entry name");
    entries.emplace_back(std::move(name), read_tensor(in));
  }
  return entries;
}

}  // namespace netwarp
