#include "serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace detm::detail {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write file: " + path.string());
  }
  out << bytes;
  if (!out) {
    throw std::runtime_error("short write: " + path.string());
  }
}

json parse_json_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  json j = json::parse(bytes, nullptr, false);
  if (j.is_discarded()) {
    throw std::runtime_error("invalid or truncated JSON in " + path.string());
  }
  return j;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_file(path, j.dump());
}

void check_version(const json& j, const std::filesystem::path& path) {
  const std::string found =
      j.contains("version") && j["version"].is_string()
          ? j["version"].get<std::string>()
          : std::string("<missing>");
  if (found != kFormatVersion) {
    throw std::runtime_error("version mismatch in " + path.string() +
                             ": found \"" + found + "\", expected \"" +
                             kFormatVersion + "\"");
  }
}

static const char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= len; i += 3) {
    unsigned v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += kB64Alphabet[v & 63];
  }
  if (i + 1 == len) {
    unsigned v = data[i] << 16;
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == len) {
    unsigned v = (data[i] << 16) | (data[i + 1] << 8);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  static int lookup[256];
  static bool ready = false;
  if (!ready) {
    for (int& v : lookup) v = -1;
    for (int i = 0; i < 64; ++i) lookup[static_cast<unsigned char>(kB64Alphabet[i])] = i;
    ready = true;
  }
  std::string out;
  out.reserve(text.size() / 4 * 3);
  int acc = 0, bits = 0;
  for (char c : text) {
    if (c == '=') break;
    int v = lookup[static_cast<unsigned char>(c)];
    if (v < 0) {
      throw std::runtime_error("invalid base64 payload");
    }
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xff);
    }
  }
  return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  // Row-major byte order, independent of Eigen's storage layout.
  std::string bytes(static_cast<std::size_t>(m.size()) * sizeof(double), '\0');
  std::size_t off = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      std::memcpy(bytes.data() + off, &v, sizeof(double));
      off += sizeof(double);
    }
  }
  return json{{"rows", m.rows()},
              {"cols", m.cols()},
              {"dtype", "f64le"},
              {"data", base64_encode(
                           reinterpret_cast<const unsigned char*>(bytes.data()),
                           bytes.size())}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") ||
      !j.contains("data")) {
    throw std::runtime_error("malformed tensor record");
  }
  if (j.value("dtype", "") != std::string("f64le")) {
    throw std::runtime_error("unsupported tensor dtype: " + j.value("dtype", std::string("<missing>")));
  }
  const auto rows = j["rows"].get<Eigen::Index>();
  const auto cols = j["cols"].get<Eigen::Index>();
  const std::string bytes = base64_decode(j["data"].get<std::string>());
  if (bytes.size() != static_cast<std::size_t>(rows) * cols * sizeof(double)) {
    throw std::runtime_error("tensor payload size mismatch");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t off = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v;
      std::memcpy(&v, bytes.data() + off, sizeof(double));
      m(r, c) = v;
      off += sizeof(double);
    }
  }
  return m;
}

json matrix_to_rows(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_rows(const json& j) {
  if (!j.is_array()) throw std::runtime_error("expected array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw std::runtime_error("ragged matrix rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

double json_number(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw std::runtime_error(std::string("missing numeric field \"") + key + "\"");
  }
  return j[key].get<double>();
}

}  // namespace detm::detail
