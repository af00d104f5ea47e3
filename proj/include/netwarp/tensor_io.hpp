#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "netwarp/tensor.hpp"

namespace netwarp {

// "NWT1" tensor blob: magic, four u32 LE dims (N, C, H, W), then N*C*H*W f32 LE values.
void write_tensor(std::ostream& out, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::filesystem::path& path);

using ArchiveEntry = std::pair<std::string, Tensor<float>>;

// Named-entry archive: magic "NWA1", u32 LE entry count, then per entry a u32 LE
// name length, the name bytes and one NWT1 blob.
void save_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> load_archive(const std::filesystem::path& path);

}  // namespace netwarp
