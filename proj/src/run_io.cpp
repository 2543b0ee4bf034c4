#include "bifctl/run_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bifctl/error.hpp"

namespace bifctl {

using Json = nlohmann::json;

namespace {

Json to_array(const Field& f) {
  return Json(std::vector<double>(f.data(), f.data() + f.size()));
}

Field from_array(const Json& j, const char* key, std::size_t n) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw InvalidArgument(std::string("state: missing array '") + key + "'");
  }
  const auto values = j.at(key).get<std::vector<double>>();
  if (values.size() != n) {
    throw InvalidArgument(std::string("state: '") + key + "' has " + std::to_string(values.size()) +
                          " entries, mesh has " + std::to_string(n) + " vertices");
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

std::string state_to_json(const TriMesh& mesh, const BranchPointState& state) {
  Json j;
  j["mesh_checksum"] = mesh.checksum();
  j["lambda"] = state.lambda;
  j["u"] = to_array(state.u);
  j["phi"] = to_array(state.phi);
  return j.dump();
}

BranchPointState state_from_json(const std::string& text, const TriMesh& mesh,
                                 bool check_checksum) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(std::string("state: ") + e.what());
  }
  if (!j.is_object() || !j.contains("lambda") || !j.at("lambda").is_number()) {
    throw InvalidArgument("state: missing numeric 'lambda'");
  }
  if (check_checksum) {
    if (!j.contains("mesh_checksum") || j.at("mesh_checksum") != mesh.checksum()) {
      throw InvalidArgument("state: mesh checksum does not match the mesh");
    }
  }
  BranchPointState s;
  s.lambda = j.at("lambda").get<double>();
  s.u = from_array(j, "u", mesh.num_vertices());
  s.phi = from_array(j, "phi", mesh.num_vertices());
  return s;
}

void write_state(const TriMesh& mesh, const BranchPointState& state,
                 const std::filesystem::path& path) {
  write_text(path, state_to_json(mesh, state) + "\n");
}

BranchPointState read_state(const std::filesystem::path& path, const TriMesh& mesh,
                            bool check_checksum) {
  return state_from_json(read_text(path), mesh, check_checksum);
}

std::string history_csv(const std::vector<HistoryRecord>& history) {
  std::ostringstream out;
  out << "iteration,objective,step,accepted,reason\n";
  char line[160];
  for (const HistoryRecord& r : history) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%d,%s\n", r.iteration, r.objective, r.step,
                  r.accepted ? 1 : 0, r.reason.c_str());
    out << line;
  }
  return out.str();
}

std::string summary_json(const RunSummary& s) {
  Json j;
  j["lambda_final"] = s.lambda_final ? Json(*s.lambda_final) : Json(nullptr);
  j["objective_final"] = s.objective_final ? Json(*s.objective_final) : Json(nullptr);
  j["iterations"] = s.iterations;
  j["accepted_steps"] = s.accepted_steps;
  j["rejected_steps"] = s.rejected_steps;
  j["wall_time_s"] = s.wall_time_s;
  j["status"] = s.status;
  if (!s.message.empty()) j["message"] = s.message;
  if (!s.births.empty()) j["births"] = s.births;
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace bifctl
