#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bifctl/continuation.hpp"
#include "bifctl/shape.hpp"

namespace bifctl {

/// How the initial mesh is obtained.
struct MeshSpec {
  std::string shape = "disk";  // "disk" or "rounded_square"; ignored when path is set
  double h = 0.05;
  double edge = 2.0;
  double radius = 0.1;
  std::filesystem::path path;
  bool fix_boundary = false;
};

/// Parsed run configuration. Relative paths are resolved against the
/// directory of the configuration file.
struct RunConfig {
  std::string problem = "allen_cahn";
  MeshSpec mesh;
  DeflatedContinuationOptions diagram;
  double seed_lambda = 1.3;
  std::string seed_u = "zero";  // "zero" or a state JSON path
  int seed_n = 5;
  double lambda_star = 3.0;
  double epsilon = 1e-10;
  OptimizeOptions optimizer;
  std::filesystem::path output = "run";
};

/// Parses and validates a JSON configuration. Unknown keys, out-of-range
/// values and missing referenced files raise ConfigError.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");

/// Builds the mesh described by spec.
TriMesh build_mesh(const MeshSpec& spec);

/// Entry point of the bifctl executable. Subcommands: mesh, diagram, locate,
/// optimize, plot. Returns 0 on success, 1 on solver failure, 2 on a
/// configuration or usage error.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace bifctl
