#pragma once

// Tensor archive: the on-disk format for checkpoints and converted encoder
// weights.
//
//   bytes 0..7   "FCKTTNSR"
//   u32          format version (1)
//   u64          header length L
//   L bytes      UTF-8 JSON header: {"meta": {...}, "tensors": [{"name", "rows", "cols"}]}
//   payload      float64 little-endian, row-major, tensors in header order

#include "fckt/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace fckt {

struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> tensors;
};

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace fckt
