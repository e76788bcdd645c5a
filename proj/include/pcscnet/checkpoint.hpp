#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "pcscnet/nn.hpp"

namespace pcsc {

inline constexpr uint32_t kCheckpointVersion = 1;

// Binary little-endian container of named matrices:
// "PCSC" | u32 version | u32 count | per entry: u16 name len, name bytes,
// u32 rows, u32 cols, rows*cols f64 values. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const std::vector<const Param*>& params);
std::vector<Param> load_checkpoint(const std::string& path);

} // namespace pcsc
