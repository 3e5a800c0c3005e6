#include "fedsam/mdp_io.hpp"

#include <fstream>
#include <sstream>

#include "fedsam/error.hpp"

namespace fedsam {
namespace {

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  return j.at(key);
}

double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ValidationError(where + " must be a number");
  return j.get<double>();
}

}  // namespace

Json matrix_to_json(const Eigen::Ref<const RowMatrix>& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Json vector_to_json(const Eigen::Ref<const Vector>& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

RowMatrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw ValidationError("expected a non-empty nested array");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  RowMatrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ShapeError("ragged matrix at row " + std::to_string(r));
    for (std::size_t c = 0; c < cols; ++c)
      m(r, c) = number(j[r][c], "entry [" + std::to_string(r) + "][" + std::to_string(c) + "]");
  }
  return m;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("expected an array");
  Vector v(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) v(k) = number(j[k], "entry [" + std::to_string(k) + "]");
  return v;
}

Json to_json(const Mdp& mdp) {
  Json transition = Json::array();
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    Json per_action = Json::array();
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const auto row = mdp.next_state_distribution(s, a);
      per_action.push_back(Json(std::vector<double>(row.begin(), row.end())));
    }
    transition.push_back(std::move(per_action));
  }
  return Json{{"n_states", mdp.n_states()},
              {"n_actions", mdp.n_actions()},
              {"gamma", mdp.gamma()},
              {"transition", std::move(transition)},
              {"reward", matrix_to_json(mdp.rewards())}};
}

Mdp mdp_from_json(const Json& j) {
  const auto ns = field(j, "n_states").get<std::size_t>();
  const auto na = field(j, "n_actions").get<std::size_t>();
  const double gamma = number(field(j, "gamma"), "gamma");
  const Json& tr = field(j, "transition");
  if (!tr.is_array() || tr.size() != ns) throw ShapeError("transition must have n_states entries");
  std::vector<double> flat;
  flat.reserve(ns * na * ns);
  for (std::size_t s = 0; s < ns; ++s) {
    if (!tr[s].is_array() || tr[s].size() != na) throw ShapeError("transition[" + std::to_string(s) + "] must have n_actions entries");
    for (std::size_t a = 0; a < na; ++a) {
      const Json& row = tr[s][a];
      if (!row.is_array() || row.size() != ns)
        throw ShapeError("transition[" + std::to_string(s) + "][" + std::to_string(a) + "] must have n_states entries");
      for (const Json& p : row) flat.push_back(number(p, "transition entry"));
    }
  }
  return Mdp(ns, na, std::move(flat), matrix_from_json(field(j, "reward")), gamma);
}

Json to_json(const Policy& policy) { return Json{{"probs", matrix_to_json(policy.table())}}; }

Policy policy_from_json(const Json& j) { return Policy(matrix_from_json(field(j, "probs"))); }

Json to_json(const FeatureMatrix& features) {
  return Json{{"phi", matrix_to_json(RowMatrix(features.matrix()))}};
}

FeatureMatrix features_from_json(const Json& j) { return FeatureMatrix(Matrix(matrix_from_json(field(j, "phi")))); }

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace fedsam
