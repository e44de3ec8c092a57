#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segx/kv.hpp"
#include "segx/tensor.hpp"

namespace segx {

/// Element encoding of a container record.
enum class DType : std::uint8_t { F32 = 1, U8 = 2, F64 = 3 };

struct Record {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;  // U8 records hold integers 0..255
};

/// "SEGX" binary container shared by checkpoints, samples and adversarial
/// examples. Little-endian throughout:
///
///   "SEGX" | u32 version | u32 header_len | header (canonical key=value text)
///   | u32 record_count | records...
///   record: u32 name_len | name | u8 dtype | u32 rank | u32 dims[rank] | data
struct Container {
  static constexpr std::uint32_t kVersion = 1;

  KeyValues header;
  std::vector<Record> records;

  const Record& find(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::vector<std::uint8_t> encode(const Container& c);
Container decode(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

Record tensor_record(std::string name, const Tensor& t, DType dtype);
Tensor record_tensor(const Record& r);
Record mask_record(std::string name, const LabelMask& m);
LabelMask record_mask(const Record& r);

}  // namespace segx
