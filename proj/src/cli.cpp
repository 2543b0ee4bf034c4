#include "bifctl/cli.hpp"

#include <chrono>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bifctl/plot.hpp"
#include "bifctl/run_io.hpp"

namespace bifctl {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Config parsing

void check_object(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::string join(const std::string& where, const char* key) {
  return where.empty() ? key : where + "." + key;
}

// Reads j[key] into out when present. Accepts lo < value < hi (open) or
// lo <= value <= hi (closed) per flag.
void read_number(const Json& j, const std::string& where, const char* key, double& out, double lo,
                 double hi, bool open_lo = false) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(join(where, key) + ": expected a number");
  const double x = v.get<double>();
  const bool ok = std::isfinite(x) && (open_lo ? x > lo : x >= lo) && x <= hi;
  if (!ok) {
    std::ostringstream msg;
    msg << join(where, key) << ": value " << x << " outside " << (open_lo ? "(" : "[") << lo << ", "
        << hi << "]";
    throw ConfigError(msg.str());
  }
  out = x;
}

void read_int(const Json& j, const std::string& where, const char* key, int& out, int lo, int hi) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(join(where, key) + ": expected an integer");
  const long long x = v.get<long long>();
  if (x < lo || x > hi) {
    throw ConfigError(join(where, key) + ": value " + std::to_string(x) + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  out = static_cast<int>(x);
}

void read_bool(const Json& j, const std::string& where, const char* key, bool& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) throw ConfigError(join(where, key) + ": expected a boolean");
  out = j.at(key).get<bool>();
}

void read_string(const Json& j, const std::string& where, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ConfigError(join(where, key) + ": expected a string");
  out = j.at(key).get<std::string>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void parse_mesh(const Json& j, const fs::path& base, MeshSpec& m) {
  check_object(j, "mesh", {"shape", "h", "edge", "radius", "path", "fix_boundary"});
  read_string(j, "mesh", "shape", m.shape);
  read_number(j, "mesh", "h", m.h, 0.0, 1.0, true);
  read_number(j, "mesh", "edge", m.edge, 0.0, 1e6, true);
  read_number(j, "mesh", "radius", m.radius, 0.0, 1e6, true);
  read_bool(j, "mesh", "fix_boundary", m.fix_boundary);
  if (j.contains("path")) {
    std::string p;
    read_string(j, "mesh", "path", p);
    m.path = resolve(base, p);
    if (!fs::exists(m.path)) throw ConfigError("mesh.path: file not found: " + m.path.string());
  } else if (m.shape != "disk" && m.shape != "rounded_square") {
    throw ConfigError("mesh.shape: expected \"disk\" or \"rounded_square\"");
  }
  if (m.path.empty() && m.shape == "rounded_square" && !(2 * m.radius < m.edge && m.h < m.radius)) {
    throw ConfigError("mesh: rounded_square needs 2 radius < edge and h < radius");
  }
}

void parse_diagnostic(const Json& j, Diagnostic& d) {
  if (j.is_string()) {
    if (j.get<std::string>() != "h1_norm") throw ConfigError("diagram.diagnostic: unknown diagnostic");
    d.kind = Diagnostic::Kind::H1Norm;
    return;
  }
  check_object(j, "diagram.diagnostic", {"point"});
  const Json& p = j.at("point");
  if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
    throw ConfigError("diagram.diagnostic.point: expected [x, y]");
  }
  d.kind = Diagnostic::Kind::PointValue;
  d.point = {p[0].get<double>(), p[1].get<double>()};
}

void parse_diagram(const Json& j, DeflatedContinuationOptions& d) {
  const std::string w = "diagram";
  check_object(j, w,
               {"lambda_start", "lambda_end", "dlambda", "max_branches", "seed_modes", "seed_eps",
                "attempts_per_seed", "arclength", "arclength_ds", "arclength_steps", "trivial_norm",
                "diagnostic", "deflation_power", "deflation_shift"});
  read_number(j, w, "lambda_start", d.lambda_start, -1e6, 1e6);
  read_number(j, w, "lambda_end", d.lambda_end, -1e6, 1e6);
  read_number(j, w, "dlambda", d.dlambda, 0.0, 1e3, true);
  read_int(j, w, "max_branches", d.max_branches, 0, 1000);
  read_int(j, w, "seed_modes", d.seed_modes, 0, 50);
  read_number(j, w, "seed_eps", d.seed_eps, 0.0, 10.0, true);
  read_int(j, w, "attempts_per_seed", d.attempts_per_seed, 1, 100);
  read_bool(j, w, "arclength", d.arclength_complement);
  read_number(j, w, "arclength_ds", d.arclength_ds, 0.0, 10.0, true);
  read_int(j, w, "arclength_steps", d.arclength_steps, 1, 100000);
  read_number(j, w, "trivial_norm", d.trivial_norm, 0.0, 10.0);
  read_number(j, w, "deflation_power", d.deflation.power, 0.0, 10.0, true);
  read_number(j, w, "deflation_shift", d.deflation.shift, 0.0, 1e3);
  if (j.contains("diagnostic")) parse_diagnostic(j.at("diagnostic"), d.diagnostic);
  if (d.lambda_end < d.lambda_start) throw ConfigError("diagram: lambda_end is below lambda_start");
}

}  // namespace

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_object(j, "config",
               {"problem", "mesh", "diagram", "seed", "target", "inner_product", "solver", "optimizer",
                "output"});
  RunConfig c;
  read_string(j, "", "problem", c.problem);
  if (c.problem != "allen_cahn") throw ConfigError("problem: only \"allen_cahn\" is supported");
  if (j.contains("mesh")) parse_mesh(j.at("mesh"), base_dir, c.mesh);
  if (j.contains("diagram")) parse_diagram(j.at("diagram"), c.diagram);

  if (j.contains("seed")) {
    const Json& s = j.at("seed");
    check_object(s, "seed", {"lambda", "u", "n"});
    read_number(s, "seed", "lambda", c.seed_lambda, -1e6, 1e6);
    read_int(s, "seed", "n", c.seed_n, 1, 50);
    read_string(s, "seed", "u", c.seed_u);
    if (c.seed_u != "zero") {
      const fs::path p = resolve(base_dir, c.seed_u);
      if (!fs::exists(p)) throw ConfigError("seed.u: file not found: " + p.string());
      c.seed_u = p.string();
    }
  }
  if (j.contains("target")) {
    const Json& t = j.at("target");
    check_object(t, "target", {"lambda_star", "epsilon", "C"});
    read_number(t, "target", "lambda_star", c.lambda_star, -1e6, 1e6);
    read_number(t, "target", "epsilon", c.epsilon, 0.0, kInf, true);
    read_number(t, "target", "C", c.optimizer.C, 0.0, kInf, true);
  }
  if (j.contains("inner_product")) {
    const Json& ip = j.at("inner_product");
    check_object(ip, "inner_product", {"kind", "mu", "lambda"});
    std::string kind = "h1_vector";
    read_string(ip, "inner_product", "kind", kind);
    if (kind == "h1_vector") {
      c.optimizer.inner_product.kind = InnerProductSpec::Kind::H1Vector;
    } else if (kind == "linear_elasticity") {
      c.optimizer.inner_product.kind = InnerProductSpec::Kind::LinearElasticity;
    } else {
      throw ConfigError("inner_product.kind: expected \"h1_vector\" or \"linear_elasticity\"");
    }
    read_number(ip, "inner_product", "mu", c.optimizer.inner_product.mu, 0.0, 1e6, true);
    read_number(ip, "inner_product", "lambda", c.optimizer.inner_product.lambda, 0.0, 1e6);
  }
  if (j.contains("solver")) {
    const Json& s = j.at("solver");
    check_object(s, "solver", {"newton_tol", "ms_tol", "max_iterations", "max_halvings"});
    read_number(s, "solver", "newton_tol", c.diagram.newton.tolerance, 0.0, 1.0, true);
    read_number(s, "solver", "ms_tol", c.optimizer.newton.tolerance, 0.0, 1.0, true);
    read_int(s, "solver", "max_iterations", c.optimizer.newton.max_iterations, 1, 10000);
    read_int(s, "solver", "max_halvings", c.optimizer.newton.max_halvings, 0, 60);
    c.diagram.newton.max_halvings = c.optimizer.newton.max_halvings;
  }
  if (j.contains("optimizer")) {
    const Json& o = j.at("optimizer");
    const std::string w = "optimizer";
    check_object(o, w,
                 {"initial_step", "max_step", "growth", "step_floor", "max_iterations", "lbfgs",
                  "lbfgs_memory", "preflight", "tangle_threshold"});
    OptimizeOptions& p = c.optimizer;
    read_number(o, w, "initial_step", p.initial_step, 0.0, 1e3, true);
    read_number(o, w, "max_step", p.max_step, 0.0, 1e3, true);
    read_number(o, w, "growth", p.growth, 1.0, 10.0);
    read_number(o, w, "step_floor", p.step_floor, 0.0, 1.0, true);
    read_int(o, w, "max_iterations", p.max_iterations, 0, 100000);
    read_bool(o, w, "lbfgs", p.lbfgs);
    read_int(o, w, "lbfgs_memory", p.lbfgs_memory, 1, 100);
    read_bool(o, w, "preflight", p.preflight);
    read_number(o, w, "tangle_threshold", p.tangle_threshold, 0.0, 1.0);
    if (p.initial_step > p.max_step) throw ConfigError("optimizer: initial_step exceeds max_step");
  }
  if (j.contains("output")) {
    std::string out;
    read_string(j, "", "output", out);
    c.output = resolve(base_dir, out);
  } else {
    c.output = base_dir / c.output;
  }
  return c;
}

TriMesh build_mesh(const MeshSpec& spec) {
  TriMesh mesh = !spec.path.empty()          ? read_mesh(spec.path)
                 : spec.shape == "disk"      ? gen_unit_disk(spec.h)
                                             : gen_rounded_square(spec.edge, spec.radius, spec.h);
  if (spec.fix_boundary) {
    std::vector<bool> fixed = mesh.fixed_vertices();
    const auto boundary = mesh.boundary_mask();
    for (std::size_t v = 0; v < fixed.size(); ++v) fixed[v] = fixed[v] || boundary[v];
    mesh = mesh.with_fixed(std::move(fixed));
  }
  return mesh;
}

namespace {

// ---------------------------------------------------------------------------
// Subcommands

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct LoadedConfig {
  RunConfig config;
  std::string text;
};

LoadedConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  LoadedConfig lc;
  lc.text = read_text(path);
  fs::path base = fs::path(path).parent_path();
  if (base.empty()) base = ".";
  lc.config = parse_config(lc.text, base);
  return lc;
}

TriMesh load_mesh(const MeshSpec& spec) {
  try {
    return build_mesh(spec);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("mesh: ") + e.what());
  }
}

Field seed_field(const RunConfig& c, const TriMesh& mesh) {
  if (c.seed_u == "zero") return Field::Zero(static_cast<Eigen::Index>(mesh.num_vertices()));
  try {
    return read_state(c.seed_u, mesh, false).u;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("seed.u: ") + e.what());
  }
}

int cmd_mesh(const MeshSpec& spec, const fs::path& out) {
  const auto t0 = Clock::now();
  const TriMesh mesh = load_mesh(spec);
  write_mesh(mesh, out);
  RunSummary summary;
  summary.wall_time_s = seconds_since(t0);
  write_text(out.parent_path() / "summary.json", summary_json(summary));
  std::cerr << "wrote " << out.string() << " (" << mesh.num_vertices() << " vertices, "
            << mesh.num_triangles() << " triangles)\n";
  return 0;
}

int cmd_diagram(const LoadedConfig& lc) {
  const auto t0 = Clock::now();
  const RunConfig& c = lc.config;
  const TriMesh mesh = load_mesh(c.mesh);
  write_text(c.output / "config.json", lc.text);
  const AllenCahn problem(mesh);
  const Diagram diagram = deflated_continuation(problem, c.diagram);
  write_diagram_csv(diagram, c.output / "diagram.csv");
  write_text(c.output / "diagram.svg", diagram_svg(diagram_csv(diagram)));

  RunSummary summary;
  summary.births = distinct_births(diagram);
  if (!summary.births.empty()) summary.lambda_final = summary.births.front();
  summary.iterations = static_cast<int>(diagram.branches.size());
  summary.wall_time_s = seconds_since(t0);
  write_text(c.output / "summary.json", summary_json(summary));
  std::cerr << "diagram: " << diagram.branches.size() << " branches, " << summary.births.size()
            << " births\n";
  return 0;
}

std::string candidates_csv(const MsInitialization& init) {
  std::ostringstream out;
  out << "index,mu,converged,lambda,distance,selected\n";
  out.precision(17);
  for (std::size_t i = 0; i < init.candidates.size(); ++i) {
    const MsCandidate& cand = init.candidates[i];
    out << i << ',' << cand.mu << ',' << (cand.converged ? 1 : 0) << ',';
    if (cand.converged) out << cand.state.lambda << ',' << cand.distance;
    else out << ',';
    out << ',' << (cand.converged && i == init.selected_index ? 1 : 0) << '\n';
  }
  return out.str();
}

int cmd_locate(const LoadedConfig& lc) {
  const auto t0 = Clock::now();
  const RunConfig& c = lc.config;
  const TriMesh mesh = load_mesh(c.mesh);
  const Field seed = seed_field(c, mesh);
  write_text(c.output / "config.json", lc.text);
  const AllenCahn problem(mesh);
  const MsInitialization init =
      ms_initialize(problem, seed, c.seed_lambda, c.seed_n, c.optimizer.newton);
  write_mesh(mesh, c.output / "mesh.json");
  write_state(mesh, init.selected, c.output / "state.json");
  write_text(c.output / "candidates.csv", candidates_csv(init));

  RunSummary summary;
  summary.lambda_final = init.selected.lambda;
  summary.objective_final = objective(init.selected, c.lambda_star);
  summary.wall_time_s = seconds_since(t0);
  write_text(c.output / "summary.json", summary_json(summary));
  std::cerr << "located branch point at lambda = " << init.selected.lambda << "\n";
  return 0;
}

int cmd_optimize(const LoadedConfig& lc) {
  const auto t0 = Clock::now();
  const RunConfig& c = lc.config;
  const TriMesh mesh = load_mesh(c.mesh);
  const Field seed = seed_field(c, mesh);
  const fs::path out = c.output;
  write_text(out / "config.json", lc.text);

  RunSummary summary;
  auto finish = [&](const ShapeIterate& it) {
    write_text(out / "history.csv", history_csv(it.history));
    write_mesh(it.mesh, out / "final_mesh.json");
    write_state(it.mesh, it.state, out / "final_state.json");
    summary.lambda_final = it.state.lambda;
    summary.objective_final = it.objective_value;
    summary.iterations = static_cast<int>(it.history.size());
    summary.accepted_steps = it.accepted_steps;
    summary.rejected_steps = it.rejected_steps;
    summary.wall_time_s = seconds_since(t0);
    write_text(out / "summary.json", summary_json(summary));
  };

  const AllenCahn problem(mesh);
  const MsInitialization init = ms_initialize(problem, seed, c.seed_lambda, c.seed_n, c.optimizer.newton);
  write_text(out / "candidates.csv", candidates_csv(init));
  write_mesh(mesh, out / "mesh_0.json");
  write_state(mesh, init.selected, out / "state_0.json");
  std::cerr << "initial branch point lambda = " << init.selected.lambda << "\n";

  OptimizeOptions opts = c.optimizer;
  opts.on_accept = [&](const ShapeIterate& it) {
    const std::string k = std::to_string(it.accepted_steps);
    write_mesh(it.mesh, out / ("mesh_" + k + ".json"));
    write_state(it.mesh, it.state, out / ("state_" + k + ".json"));
    std::cerr << "step " << k << ": lambda = " << it.state.lambda
              << ", objective = " << it.objective_value << "\n";
  };
  try {
    finish(optimize(mesh, init.selected, c.lambda_star, c.epsilon, opts));
  } catch (const OptimizationError& e) {
    summary.status = "failed";
    summary.message = e.what();
    finish(e.last());
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cmd_plot(const fs::path& input, const fs::path& out) {
  const auto t0 = Clock::now();
  if (!fs::exists(input)) throw ConfigError("plot: input not found: " + input.string());
  std::string svg;
  try {
    svg = plot_svg(read_text(input));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  write_text(out, svg);
  RunSummary summary;
  summary.wall_time_s = seconds_since(t0);
  write_text(out.parent_path() / "summary.json", summary_json(summary));
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Bifurcation analysis and branch-point shape control for the Allen-Cahn equation",
               "bifctl"};
  app.require_subcommand(1);

  MeshSpec mesh_spec;
  std::string mesh_out;
  auto* mesh_cmd = app.add_subcommand("mesh", "Generate a mesh");
  mesh_cmd->set_help_flag("--help", "Print this help message and exit");
  mesh_cmd->add_option("--shape", mesh_spec.shape, "disk or rounded_square")
      ->check(CLI::IsMember({"disk", "rounded_square"}));
  mesh_cmd->add_option("--h", mesh_spec.h, "Target edge length");
  mesh_cmd->add_option("--edge", mesh_spec.edge, "Square edge length");
  mesh_cmd->add_option("--radius", mesh_spec.radius, "Corner radius");
  mesh_cmd->add_flag("--fix-boundary", mesh_spec.fix_boundary, "Freeze boundary vertices");
  mesh_cmd->add_option("--out", mesh_out, "Output mesh JSON")->required();

  std::string config_path, mesh_override, out_override;
  double lambda_star = std::numeric_limits<double>::quiet_NaN();
  double lambda_seed = std::numeric_limits<double>::quiet_NaN();
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration JSON")->required();
    cmd->add_option("--mesh", mesh_override, "Mesh file overriding the config");
    cmd->add_option("--out", out_override, "Output directory overriding the config");
  };
  auto* diagram_cmd = app.add_subcommand("diagram", "Compute a bifurcation diagram");
  add_common(diagram_cmd);
  auto* locate_cmd = app.add_subcommand("locate", "Locate a branch point");
  add_common(locate_cmd);
  locate_cmd->add_option("--lambda-seed", lambda_seed, "Seed parameter value");
  auto* optimize_cmd = app.add_subcommand("optimize", "Move a branch point to a target parameter");
  add_common(optimize_cmd);
  optimize_cmd->add_option("--lambda-seed", lambda_seed, "Seed parameter value");
  optimize_cmd->add_option("--lambda-star", lambda_star, "Target parameter value");

  std::string plot_in, plot_out;
  auto* plot_cmd = app.add_subcommand("plot", "Render a diagram or history CSV as SVG");
  plot_cmd->add_option("--input", plot_in, "Diagram or history CSV")->required();
  plot_cmd->add_option("--out", plot_out, "Output SVG")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (mesh_cmd->parsed()) {
      if (!(mesh_spec.h > 0.0 && mesh_spec.h < 1.0)) throw ConfigError("--h must lie in (0, 1)");
      return cmd_mesh(mesh_spec, mesh_out);
    }
    if (plot_cmd->parsed()) return cmd_plot(plot_in, plot_out);

    LoadedConfig lc = load_config(config_path);
    if (!mesh_override.empty()) {
      if (!fs::exists(mesh_override)) throw ConfigError("--mesh: file not found: " + mesh_override);
      lc.config.mesh.path = mesh_override;
    }
    if (!out_override.empty()) lc.config.output = out_override;
    if (!std::isnan(lambda_seed)) lc.config.seed_lambda = lambda_seed;
    if (!std::isnan(lambda_star)) lc.config.lambda_star = lambda_star;
    if (diagram_cmd->parsed()) return cmd_diagram(lc);
    if (locate_cmd->parsed()) return cmd_locate(lc);
    return cmd_optimize(lc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  return run(std::vector<std::string>(argv, argv + argc));
}

}  // namespace bifctl
