#pragma once

#include "vlconn/connectors.hpp"

#include <filesystem>
#include <iosfwd>

namespace vlconn {

// Parameter checkpoint layout:
//
//   VLCONN-CHECKPOINT 1
//   byte-order little-endian
//   tensors <n>
//   <name> <rows> <cols>        (n lines)
//   end
//   <payload>
//
// The payload holds every tensor's values as IEEE-754 binary64 in
// little-endian byte order, row-major, tensors in header order.
void write_checkpoint(std::ostream& os, const ConnectorParams& params);
ConnectorParams read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const ConnectorParams& params);
ConnectorParams load_checkpoint(const std::filesystem::path& path);

}  // namespace vlconn
