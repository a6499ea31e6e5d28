#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "mrftid/pid.hpp"
#include "mrftid/process_model.hpp"
#include "mrftid/tuning.hpp"

namespace mrftid {

using nlohmann::json;

// Infinite values (ti of a PD controller, c2 of a PD rule) are written as null.
void to_json(json& j, const ProcessParams& p);
void from_json(const json& j, ProcessParams& p);
void to_json(json& j, const PidParams& c);
void from_json(const json& j, PidParams& c);
void to_json(json& j, const HomogeneousRule& r);
void from_json(const json& j, HomogeneousRule& r);
void to_json(json& j, const ParamBounds& b);
void from_json(const json& j, ParamBounds& b);
void to_json(json& j, const IseScenario& s);
void from_json(const json& j, IseScenario& s);
void to_json(json& j, const DesignOptions& o);
void from_json(const json& j, DesignOptions& o);

// Full round-trip formatting of a double ("%.17g"; inf and nan spelled out).
std::string format_double(double x);
double parse_double(const std::string& s);

// Dense matrix as comma-separated rows without a header.
void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

// FNV-1a 64 as 16 hex digits; used for manifest input hashes.
std::string content_hash(const void* data, std::size_t bytes);
std::string file_hash(const std::filesystem::path& path);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace mrftid
