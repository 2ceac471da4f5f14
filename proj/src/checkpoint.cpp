#include "tcseg/checkpoint.hpp"

#include "tcseg/binary_io.hpp"
#include "tcseg/errors.hpp"

#include <fstream>
#include <limits>

namespace tcseg {

void write_checkpoint(std::ostream& os, std::span<const Tensor> tensors) {
  os.write("WCT1", 4);
  io::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    for (std::size_t d : t.shape().dims) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("checkpoint: dim exceeds u32");
      io::write_u32(os, static_cast<std::uint32_t>(d));
    }
    for (std::size_t i = 0; i < t.size(); ++i) io::write_f64(os, t[i]);
  }
}

std::vector<Tensor> read_checkpoint(std::istream& is) {
  io::expect_magic(is, "WCT1");
  const std::uint32_t count = io::read_u32(is);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    Shape s;
    for (auto& d : s.dims) d = io::read_u32(is);
    Tensor t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = io::read_f64(is);
    out.push_back(std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(os, tensors);
  if (!os) throw DataError("write failed for checkpoint " + path.string());
}

std::vector<Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const std::runtime_error& e) {
    throw DataError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace tcseg
