#pragma once

#include <string>
#include <variant>
#include <vector>

#include "tensor.hpp"

namespace scseg {

// Binary tensor container. Layout, all little-endian:
//   magic "SETF" | version u16 | entry count u32
//   per entry: name length u16, name bytes (UTF-8), dtype u8 (0 = f64,
//   1 = u32), rank u8, extents u64 per axis, raw payload.
// Round trips are bit-exact. Unknown versions and truncated files are
// rejected with explicit errors (truncation reports the byte offset and the
// entry being read).

inline constexpr uint16_t kTensorFileVersion = 1;

struct TensorFileEntry {
    std::string name;
    std::variant<Tensor, IntTensor> value;
};

// Writes atomically (temp file + rename). Names must be unique, valid UTF-8.
void write_tensor_file(const std::string& path, const std::vector<TensorFileEntry>& entries);

std::vector<TensorFileEntry> read_tensor_file(const std::string& path);

// Atomic small-file writer shared by every artifact the tool emits.
void write_file_atomic(const std::string& path, const std::string& contents);

} // namespace scseg
