#pragma once

// Internal serialization helpers shared by the file formats. Not installed.

#include <Eigen/Dense>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace detm::detail {

using json = nlohmann::json;

inline constexpr const char* kFormatVersion = "detm-lab/1";

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

json parse_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

// Throws when j["version"] is absent or differs, naming both versions.
void check_version(const json& j, const std::filesystem::path& path);

std::string base64_encode(const unsigned char* data, std::size_t len);
std::string base64_decode(const std::string& text);

// Tensors travel as base64 of little-endian IEEE-754 doubles, so checkpoint
// round trips are bit-exact.
json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);

json matrix_to_rows(const Eigen::MatrixXd& m);       // human-readable variant
Eigen::MatrixXd matrix_from_rows(const json& j);

double json_number(const json& j, const char* key);

}  // namespace detm::detail
