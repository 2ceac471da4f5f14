#pragma once

#include "tcseg/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace tcseg {

// Layout: "WCT1", u32 tensor count, then per tensor four u32 dims followed by
// the f64 values. All integers and floats little-endian.
void write_checkpoint(std::ostream& os, std::span<const Tensor> tensors);
std::vector<Tensor> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace tcseg
