#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bifctl/mesh.hpp"
#include "bifctl/moore_spence.hpp"
#include "bifctl/shape.hpp"

namespace bifctl {

/// State JSON: {"mesh_checksum", "lambda", "u", "phi"}. The checksum ties the
/// coefficient vectors to the mesh they live on.
std::string state_to_json(const TriMesh& mesh, const BranchPointState& state);

/// Parses a state and checks it against `mesh`. With check_checksum false
/// only the vector lengths must match (moving-mesh reinterpretation).
BranchPointState state_from_json(const std::string& text, const TriMesh& mesh,
                                 bool check_checksum = true);

void write_state(const TriMesh& mesh, const BranchPointState& state,
                 const std::filesystem::path& path);
BranchPointState read_state(const std::filesystem::path& path, const TriMesh& mesh,
                            bool check_checksum = true);

/// CSV with header iteration,objective,step,accepted,reason.
std::string history_csv(const std::vector<HistoryRecord>& history);

struct RunSummary {
  std::optional<double> lambda_final;
  std::optional<double> objective_final;
  int iterations = 0;
  int accepted_steps = 0;
  int rejected_steps = 0;
  double wall_time_s = 0.0;
  std::string status = "ok";
  std::string message;
  std::vector<double> births;
};

std::string summary_json(const RunSummary& summary);

/// Writes text to path, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace bifctl
