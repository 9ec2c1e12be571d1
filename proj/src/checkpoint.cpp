#include "vlconn/checkpoint.hpp"

#include "vlconn/errors.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace vlconn {

namespace {

constexpr std::string_view kMagic = "VLCONN-CHECKPOINT 1";

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

std::string next_line(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("checkpoint: truncated header");
  return line;
}

}  // namespace

void write_checkpoint(std::ostream& os, const ConnectorParams& params) {
  os << kMagic << "\n";
  os << "byte-order little-endian\n";
  os << "tensors " << params.entries().size() << "\n";
  for (const auto& e : params.entries()) {
    os << e.name << " " << e.tensor.value().rows() << " " << e.tensor.value().cols() << "\n";
  }
  os << "end\n";
  for (const auto& e : params.entries()) {
    const Matrix& m = e.tensor.value();
    for (Index i = 0; i < m.size(); ++i) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(m.data()[i]));
      os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

ConnectorParams read_checkpoint(std::istream& is) {
  if (next_line(is) != kMagic) throw FormatError("checkpoint: bad magic line");
  if (next_line(is) != "byte-order little-endian") {
    throw FormatError("checkpoint: unsupported byte order declaration");
  }
  std::size_t count = 0;
  {
    std::istringstream ls(next_line(is));
    std::string key;
    if (!(ls >> key >> count) || key != "tensors") throw FormatError("checkpoint: bad tensor count");
  }
  struct Header {
    std::string name;
    Index rows, cols;
  };
  std::vector<Header> headers;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(next_line(is));
    Header h;
    if (!(ls >> h.name >> h.rows >> h.cols) || h.rows < 0 || h.cols < 0) {
      throw FormatError("checkpoint: bad header line " + std::to_string(i + 1));
    }
    headers.push_back(h);
  }
  if (next_line(is) != "end") throw FormatError("checkpoint: missing end of header");
  ConnectorParams params;
  for (const auto& h : headers) {
    Matrix m(h.rows, h.cols);
    for (Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      if (!is.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw FormatError("checkpoint: payload truncated in tensor '" + h.name + "'");
      }
      m.data()[i] = std::bit_cast<double>(to_little(bits));
    }
    params.add(h.name, Tensor(std::move(m), true));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ConnectorParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

ConnectorParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace vlconn
