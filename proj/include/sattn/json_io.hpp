// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace sattn {

/// Serializes with every floating-point number written as %.17g so output is
/// bit-exact on reload and byte-stable across runs. Object keys come out
/// sorted. indent < 0 gives a single line.
std::string dump_json(const nlohmann::json& doc, int indent = 2);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

/// %.17g formatting used by every CSV writer.
std::string format_real(double value);

nlohmann::json to_json_array(const Eigen::VectorXd& v);
nlohmann::json to_json_rowmajor(const Eigen::MatrixXd& m);
Eigen::VectorXd vector_from_json(const nlohmann::json& j, Eigen::Index expected);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols);

}  // namespace sattn
