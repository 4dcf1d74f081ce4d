#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "impulse/adjoint.hpp"
#include "impulse/certify.hpp"
#include "impulse/error.hpp"
#include "impulse/io.hpp"
#include "impulse/propagate.hpp"
#include "impulse/signals.hpp"
#include "impulse/system.hpp"
#include "impulse/tape.hpp"
#include "impulse/transform.hpp"

namespace impulse::cli {

namespace {

using nlohmann::ordered_json;

struct RunConfig {
  std::string system, control, ordinary, candidate_u, candidate_a;
  std::string out, traj_out;
  std::string format = "csv";
  std::string method = "impulsive";
  std::string nc1 = "derived";
  std::optional<double> step, tol;
  std::optional<std::size_t> samples;
  std::size_t grid_u = 9, grid_a = 9, check_times = 200, flow_steps = 200;
  std::uint64_t seed = 1;
  double sample_radius = 1.0;
  double roundtrip_tol = 1e-8;
  double refine_tol = 0.2;
  std::vector<int> ks{10, 20, 40};
};

ordered_json vec_json(const Vec& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

class Runner {
 public:
  Runner(const RunConfig& cfg, std::ostream& out, std::ostream& err) : cfg_(cfg), out_(out), err_(err) {}

  int validate() {
    const SystemSpec s = load_system_file(cfg_.system);
    const std::size_t count = cfg_.samples.value_or(200);
    const double tol = cfg_.tol.value_or(1e-8);
    const auto samples = sample_state_box(s, count, cfg_.sample_radius, cfg_.seed);
    const BracketReport br = check_commutativity(s, samples, tol);
    const LiftedReport lr = audit_lifted_commutativity(s, sample_lifted_points(s, count, cfg_.sample_radius), tol);

    ordered_json doc;
    doc["n"] = s.n();
    doc["m"] = s.m();
    doc["l"] = s.l();
    doc["tol"] = tol;
    doc["samples"] = count;
    doc["commutative"] = br.pass;
    doc["domain_errors"] = br.domain_errors;
    ordered_json pairs = ordered_json::array();
    double worst = 0.0;
    const BracketPairResult* worst_pair = nullptr;
    for (const auto& p : br.pairs) {
      ordered_json j;
      j["i"] = p.alpha + 1;
      j["j"] = p.beta + 1;
      j["max_norm"] = p.max_norm;
      j["pass"] = p.pass;
      if (p.argmax < samples.size()) j["argmax"] = {{"x", vec_json(samples[p.argmax].x)}, {"u", vec_json(samples[p.argmax].u)}};
      pairs.push_back(j);
      if (!worst_pair || p.max_norm > worst) {
        worst = p.max_norm;
        worst_pair = &p;
      }
    }
    doc["pairs"] = pairs;
    ordered_json lifted;
    lifted["max_norm"] = lr.max_norm;
    lifted["domain_errors"] = lr.domain_errors;
    lifted["pass"] = lr.pass;
    doc["lifted"] = lifted;
    const bool pass = br.pass && lr.pass;
    doc["pass"] = pass;
    emit(doc.dump(2) + "\n");
    if (worst_pair) {
      err_ << "commutativity: " << (br.pass ? "pass" : "FAIL") << ", worst pair (" << worst_pair->alpha + 1 << ","
           << worst_pair->beta + 1 << ") max bracket norm " << format_real(worst) << "\n";
    } else {
      err_ << "commutativity: pass (a single impulse field)\n";
    }
    return pass ? kExitPass : kExitFail;
  }

  int flowbox() {
    const SystemSpec s = load_system_file(cfg_.system);
    const TransformContext ctx = context(s);
    const std::size_t count = cfg_.samples.value_or(100);
    const double tol = cfg_.tol.value_or(1e-6);
    const auto samples = sample_state_box(s, count, cfg_.sample_radius, cfg_.seed);
    const FlowboxReport fb = verify_flowbox(ctx, samples, tol);

    Mat X(static_cast<Eigen::Index>(s.n()), static_cast<Eigen::Index>(count));
    Mat Z(static_cast<Eigen::Index>(s.m()), static_cast<Eigen::Index>(count));
    for (std::size_t k = 0; k < count; ++k) {
      X.col(static_cast<Eigen::Index>(k)) = samples[k].x;
      Z.col(static_cast<Eigen::Index>(k)) = samples[k].u;
    }
    std::vector<std::uint8_t> st1, st2;
    const Mat XI = phi_batch(ctx, X, Z, st1);
    const Mat back = phi_inverse_batch(ctx, XI, Z, st2);
    double round_trip = 0.0;
    std::size_t failures = 0;
    for (std::size_t k = 0; k < count; ++k) {
      if (st1[k] != kEvalOk || st2[k] != kEvalOk) {
        ++failures;
        continue;
      }
      const auto c = static_cast<Eigen::Index>(k);
      round_trip = std::max(round_trip, (back.col(c) - X.col(c)).lpNorm<Eigen::Infinity>());
    }
    const bool rt_pass = failures == 0 && round_trip <= cfg_.roundtrip_tol;

    ordered_json doc;
    doc["samples"] = count;
    doc["flowbox"] = {{"max_residual", fb.max_residual},
                      {"argmax_sample", fb.argmax_sample},
                      {"argmax_alpha", fb.argmax_alpha + 1},
                      {"domain_errors", fb.domain_errors},
                      {"tol", fb.tol},
                      {"pass", fb.pass}};
    doc["round_trip"] = {{"max_error", round_trip}, {"failures", failures}, {"tol", cfg_.roundtrip_tol}, {"pass", rt_pass}};
    doc["pass"] = fb.pass && rt_pass;
    emit(doc.dump(2) + "\n");
    err_ << "flow-box residual " << format_real(fb.max_residual) << ", round trip " << format_real(round_trip) << "\n";
    return fb.pass && rt_pass ? kExitPass : kExitFail;
  }

  int simulate() {
    const SystemSpec s = load_system_file(cfg_.system);
    const TransformContext ctx = context(s);
    const ControlSignal u = load_control_file(cfg_.control, s);
    const OrdinarySignal a = ordinary_signal(s, cfg_.ordinary);
    const Trajectory traj = trajectory(ctx, u, a);
    emit(render(trajectory_table(s, traj), format()));
    err_ << "x(T) = [";
    const Vec& xT = traj.back().x_at(Side::Pointwise);
    for (Eigen::Index i = 0; i < xT.size(); ++i) err_ << (i ? ", " : "") << format_real(xT[i]);
    err_ << "]\n";
    return kExitPass;
  }

  int adjoint() {
    const SystemSpec s = load_system_file(cfg_.system);
    const TransformContext ctx = context(s);
    const ControlSignal u = load_control_file(cfg_.control, s);
    const OrdinarySignal a = ordinary_signal(s, cfg_.ordinary);
    const Trajectory traj = trajectory(ctx, u, a);
    AdjointArc arc = solve_transformed_adjoint(ctx, traj);
    int code = kExitPass;
    try {
      pull_back_adjoint(ctx, arc, traj);
    } catch (const DomainError& e) {
      if (!arc.pulled_back) throw;
      err_ << "terminal check failed: " << e.what() << "\n";
      code = kExitFail;
    }
    emit(render(adjoint_table(s, arc), format()));
    if (!cfg_.traj_out.empty()) write_text_file(cfg_.traj_out, render(trajectory_table(s, traj), format()));
    err_ << "terminal residual |p(T) - grad gamma| = " << format_real(arc.terminal_residual) << "\n";
    return code;
  }

  int certify_cmd() {
    const SystemSpec s = load_system_file(cfg_.system);
    const TransformContext ctx = context(s);
    const ControlSignal u = load_control_file(cfg_.candidate_u, s);
    const OrdinarySignal a = ordinary_signal(s, cfg_.candidate_a);
    CertifyOptions opt;
    opt.step = step(s);
    opt.tol = cfg_.tol.value_or(1e-6);
    opt.grid_u = cfg_.grid_u;
    opt.grid_a = cfg_.grid_a;
    opt.check_times = cfg_.check_times;
    opt.seed = cfg_.seed;
    opt.nc1 = cfg_.nc1 == "printed" ? Nc1Orientation::Printed : Nc1Orientation::Derived;
    const Certificate cert = certify(ctx, u, a, opt);
    emit(report_to_json(cert.report));
    if (!cfg_.traj_out.empty()) write_text_file(cfg_.traj_out, render(trajectory_table(s, cert.trajectory), format()));
    for (const auto& r : cert.report.conditions) {
      err_ << (r.pass ? "pass " : "FAIL ") << r.condition << " margin " << format_real(r.margin) << " at t="
           << format_real(r.argmin.t) << "\n";
    }
    err_ << "overall: " << (cert.report.overall_pass ? "pass" : "FAIL") << "\n";
    return cert.report.overall_pass ? kExitPass : kExitFail;
  }

  int robustness() {
    const SystemSpec s = load_system_file(cfg_.system);
    const TransformContext ctx = context(s);
    const OrdinarySignal a = ordinary_signal(s, cfg_.ordinary);
    const std::size_t count = cfg_.samples.value_or(50);
    const double h = step(s);
    const auto pairs = random_robustness_pairs(s, count, cfg_.seed);
    const double tol = cfg_.tol.value_or(1e-9);
    const RobustnessReport coarse = robustness_gap(ctx, pairs, a, h, tol);
    const RobustnessReport fine = robustness_gap(ctx, pairs, a, 0.5 * h, tol);

    Table t;
    t.columns = {"pair", "lhs", "rhs", "ratio", "ratio_refined", "inconsistent"};
    for (std::size_t i = 0; i < count; ++i) {
      t.rows.push_back({static_cast<long long>(i + 1), coarse.rows[i].lhs, coarse.rows[i].rhs, coarse.rows[i].ratio,
                        fine.rows[i].ratio, static_cast<long long>(coarse.rows[i].inconsistent ? 1 : 0)});
    }
    emit(render(t, format()));
    const double change =
        coarse.max_ratio > 0.0 ? std::abs(fine.max_ratio - coarse.max_ratio) / coarse.max_ratio : 0.0;
    const bool pass = std::isfinite(coarse.max_ratio) && std::isfinite(fine.max_ratio) && coarse.inconsistent == 0 &&
                      fine.inconsistent == 0 && change <= cfg_.refine_tol;
    err_ << "max ratio " << format_real(coarse.max_ratio) << " (h), " << format_real(fine.max_ratio)
         << " (h/2), relative change " << format_real(change) << ", inconsistent " << coarse.inconsistent << "\n";
    return pass ? kExitPass : kExitFail;
  }

  int approx() {
    const SystemSpec s = load_system_file(cfg_.system);
    const TransformContext ctx = context(s);
    const ControlSignal u = load_control_file(cfg_.control, s);
    const OrdinarySignal a = ordinary_signal(s, cfg_.ordinary);
    const ApproximationTable table = approximation_check(ctx, u, a, cfg_.ks, step(s));
    Table t;
    t.columns = {"k", "distance", "ratio"};
    for (const auto& row : table.rows) t.rows.push_back({static_cast<long long>(row.k), row.distance, row.ratio});
    emit(render(t, format()));
    err_ << "L1 gaps " << (table.decreasing ? "decreasing" : "NOT decreasing") << "\n";
    return table.decreasing ? kExitPass : kExitFail;
  }

 private:
  TransformContext context(const SystemSpec& s) const {
    TransformOptions o;
    o.steps = cfg_.flow_steps;
    return TransformContext(s, o);
  }

  double step(const SystemSpec& s) const { return cfg_.step.value_or(s.T() / 1000.0); }

  TableFormat format() const { return cfg_.format == "json" ? TableFormat::Json : TableFormat::Csv; }

  // Without a file, a holds the point of A closest to the origin.
  OrdinarySignal ordinary_signal(const SystemSpec& s, const std::string& path) const {
    if (!path.empty()) return load_ordinary_file(path, s);
    Vec a(static_cast<Eigen::Index>(s.l()));
    for (std::size_t i = 0; i < s.l(); ++i) a[static_cast<Eigen::Index>(i)] = std::clamp(0.0, s.A()[i].lo, s.A()[i].hi);
    return OrdinarySignal::constant(s.T(), a);
  }

  Trajectory trajectory(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a) const {
    const double h = step(ctx.system());
    return cfg_.method == "smooth" ? integrate_smooth(ctx, u, a, h) : integrate_impulsive(ctx, u, a, h);
  }

  void emit(const std::string& text) {
    if (cfg_.out.empty()) {
      out_ << text;
    } else {
      write_text_file(cfg_.out, text);
    }
  }

  const RunConfig& cfg_;
  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Simulation, adjoints and optimality certificates for impulsive control systems", "impulse"};
  app.require_subcommand(1, 1);

  auto system = [&](CLI::App* c) {
    c->add_option("--system", cfg.system, "System definition (JSON)")->required()->check(CLI::ExistingFile);
    c->add_option("--flow-steps", cfg.flow_steps, "RK4 steps per unit flow time in the coordinate change")
        ->check(CLI::Range(10, 1000000));
    c->add_option("--out", cfg.out, "Output file (default: standard output)");
  };
  auto signals = [&](CLI::App* c) {
    c->add_option("--control", cfg.control, "Control signal u (JSON)")->required()->check(CLI::ExistingFile);
    c->add_option("--ordinary", cfg.ordinary, "Ordinary control a (JSON); default: a held at the point of A nearest 0")
        ->check(CLI::ExistingFile);
  };
  auto step = [&](CLI::App* c) {
    c->add_option("--step", cfg.step, "Grid step h (default T/1000)")->check(CLI::PositiveNumber);
  };
  auto format = [&](CLI::App* c) {
    c->add_option("--format", cfg.format, "Table format")->check(CLI::IsMember({"csv", "json"}));
  };
  auto sampling = [&](CLI::App* c, const char* what) {
    c->add_option("--samples", cfg.samples, what)->check(CLI::PositiveNumber);
    c->add_option("--sample-radius", cfg.sample_radius, "Half-width of the x sampling box around x0")
        ->check(CLI::PositiveNumber);
    c->add_option("--seed", cfg.seed, "Sampling seed");
  };
  auto method = [&](CLI::App* c) {
    c->add_option("--method", cfg.method, "impulsive: transformed system; smooth: augmented system, continuous u only")
        ->check(CLI::IsMember({"impulsive", "smooth"}));
  };

  CLI::App* validate = app.add_subcommand("validate", "Load a system and audit commutativity of the impulse fields");
  system(validate);
  sampling(validate, "Sample points (default 200)");
  validate->add_option("--tol", cfg.tol, "Bracket norm tolerance (default 1e-8)");

  CLI::App* flowbox = app.add_subcommand("flowbox", "Check dphi g_alpha = e_{n+alpha} and phi^{-1}(phi) = id");
  system(flowbox);
  sampling(flowbox, "Sample points (default 100)");
  flowbox->add_option("--tol", cfg.tol, "Flow-box residual tolerance (default 1e-6)");
  flowbox->add_option("--roundtrip-tol", cfg.roundtrip_tol, "Round-trip tolerance");

  CLI::App* simulate = app.add_subcommand("simulate", "Integrate a trajectory and write it as a table");
  system(simulate);
  signals(simulate);
  step(simulate);
  format(simulate);
  method(simulate);

  CLI::App* adjoint = app.add_subcommand("adjoint", "Integrate, solve the transformed adjoint and pull it back");
  system(adjoint);
  signals(adjoint);
  step(adjoint);
  format(adjoint);
  method(adjoint);
  adjoint->add_option("--traj-out", cfg.traj_out, "Also write the trajectory here");

  CLI::App* certify = app.add_subcommand("certify", "Check the necessary optimality conditions along a candidate");
  system(certify);
  certify->add_option("--candidate-u", cfg.candidate_u, "Candidate control u* (JSON)")->required()->check(CLI::ExistingFile);
  certify->add_option("--candidate-a", cfg.candidate_a, "Candidate ordinary control a* (JSON)")->check(CLI::ExistingFile);
  step(certify);
  format(certify);
  certify->add_option("--tol", cfg.tol, "Pass tolerance (default 1e-6)")->check(CLI::NonNegativeNumber);
  certify->add_option("--grid-u", cfg.grid_u, "Lattice points per U dimension")->check(CLI::Range(2, 10000));
  certify->add_option("--grid-a", cfg.grid_a, "Lattice points per A dimension")->check(CLI::Range(2, 10000));
  certify->add_option("--check-times", cfg.check_times, "Cell midpoints checked, evenly thinned (0 = all)");
  certify->add_option("--nc1-orientation", cfg.nc1, "Sign convention of NC-I")
      ->check(CLI::IsMember({"derived", "printed"}));
  certify->add_option("--seed", cfg.seed, "Seed of the random NC-III directions");
  certify->add_option("--traj-out", cfg.traj_out, "Also write the candidate trajectory here");

  CLI::App* robustness = app.add_subcommand("robustness", "Empirical robustness ratio over random control pairs");
  system(robustness);
  robustness->add_option("--ordinary", cfg.ordinary, "Ordinary control a (JSON)")->check(CLI::ExistingFile);
  step(robustness);
  format(robustness);
  robustness->add_option("--samples", cfg.samples, "Number of pairs (default 50)")->check(CLI::PositiveNumber);
  robustness->add_option("--seed", cfg.seed, "Seed of the random pairs");
  robustness->add_option("--tol", cfg.tol, "Inconsistency tolerance (default 1e-9)");
  robustness->add_option("--refine-tol", cfg.refine_tol, "Allowed relative change of the max ratio from h to h/2");

  CLI::App* approx = app.add_subcommand("approx", "L1 gaps between mollified smooth and impulsive trajectories");
  system(approx);
  signals(approx);
  step(approx);
  format(approx);
  approx->add_option("--ks", cfg.ks, "Increasing mollification indices")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitInput;
  }

  Runner runner(cfg, out, err);
  try {
    if (validate->parsed()) return runner.validate();
    if (flowbox->parsed()) return runner.flowbox();
    if (simulate->parsed()) return runner.simulate();
    if (adjoint->parsed()) return runner.adjoint();
    if (certify->parsed()) return runner.certify_cmd();
    if (robustness->parsed()) return runner.robustness();
    if (approx->parsed()) return runner.approx();
  } catch (const StageError& e) {
    err << "error in " << e.stage() << ": " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace impulse::cli
