#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fedsam/mdp.hpp"

namespace fedsam {

using Json = nlohmann::json;

// Doubles are written in shortest round-trip form, so reading a written file
// reproduces every entry bit for bit.
Json to_json(const Mdp& mdp);
Json to_json(const Policy& policy);
Json to_json(const FeatureMatrix& features);
Json matrix_to_json(const Eigen::Ref<const RowMatrix>& m);
Json vector_to_json(const Eigen::Ref<const Vector>& v);

Mdp mdp_from_json(const Json& j);
Policy policy_from_json(const Json& j);
FeatureMatrix features_from_json(const Json& j);
RowMatrix matrix_from_json(const Json& j);
Vector vector_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace fedsam
