// Command-line front end: single simulations, batch sweeps, detector checks
// and canonical topology construction.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "avatar/engine.hpp"
#include "avatar/generators.hpp"
#include "avatar/io.hpp"
#include "avatar/sweep.hpp"

namespace fs = std::filesystem;
using namespace avatar;

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("AVATAR_OUT_DIR");
  return env ? env : ".";
}

int cmd_sim(const std::string& gen, std::int32_t n, std::int32_t N, std::uint64_t seed,
            std::int64_t max_rounds, const std::string& trace_path,
            const std::string& trace_format, const std::string& out_path,
            const std::string& policy, const std::string& graph_path) {
  GenKind kind;
  if (!parse_gen_kind(gen, kind)) {
    std::cerr << "unknown generator '" << gen << "'\n";
    return 2;
  }
  Configuration cfg;
  if (kind == GenKind::FromFile) {
    if (graph_path.empty()) {
      std::cerr << "--graph required with --gen from-file\n";
      return 2;
    }
    cfg = load_graph_file(graph_path, seed);
    n = static_cast<std::int32_t>(cfg.nodes.size());
    N = cfg.N;
  } else {
    InitialConfigSpec ispec;
    ispec.kind = kind;
    ispec.n = n;
    ispec.N = N;
    if (!policy.empty() && !parse_policy(policy, ispec.policy)) {
      std::cerr << "unknown policy '" << policy << "'\n";
      return 2;
    }
    cfg = generate_initial(ispec, seed);
  }

  RunOptions opt;
  opt.max_rounds = max_rounds;
  opt.full_trace = !trace_path.empty();
  opt.detectors_each_round = !trace_path.empty();
  RunOutput out = run(std::move(cfg), opt);

  ResultRecord rr;
  rr.spec_id = gen + "-n" + std::to_string(n) + "-N" + std::to_string(N);
  rr.seed = seed;
  rr.n = n;
  rr.N = N;
  rr.r = out.result;
  std::string line = format_result_record(rr);
  std::cout << line << "\n";

  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) {
      std::cerr << "cannot write " << out_path << "\n";
      return 2;
    }
    f << line << "\n";
  }
  if (!trace_path.empty()) {
    TraceFormat tf;
    if (!parse_trace_format(trace_format, tf)) {
      std::cerr << "unknown trace format '" << trace_format << "'\n";
      return 2;
    }
    std::ofstream f(trace_path);
    if (!f) {
      std::cerr << "cannot write " << trace_path << "\n";
      return 2;
    }
    if (tf == TraceFormat::Records) {
      f << export_trace_records(out.trace);
    } else {
      // replaying edges per round needs a second deterministic run
      Configuration c2;
      if (kind == GenKind::FromFile) {
        c2 = load_graph_file(graph_path, seed);
      } else {
        InitialConfigSpec ispec;
        ispec.kind = kind;
        ispec.n = n;
        ispec.N = N;
        if (!policy.empty()) parse_policy(policy, ispec.policy);
        c2 = generate_initial(ispec, seed);
      }
      GuestTree tree = cbt_structure(c2.N);
      std::vector<std::pair<std::int64_t, std::vector<std::pair<HostId, HostId>>>> rounds;
      auto snap = [&](std::int64_t r) {
        std::vector<std::pair<HostId, HostId>> es;
        for (const auto& [u, nb] : c2.adj)
          for (HostId v : nb)
            if (u < v) es.push_back({u, v});
        rounds.push_back({r, std::move(es)});
      };
      snap(0);
      for (std::int64_t r = 0; r < out.result.rounds_executed; ++r) {
        step_round(c2, tree);
        snap(c2.round);
      }
      f << export_trace_edgelist(rounds);
    }
  }
  bool ok = out.result.converged_round >= 0 && out.result.connectivity_ok &&
            out.result.silence_ok;
  return ok ? 0 : 1;
}

int cmd_sweep(const std::string& spec_path, std::string out_dir, std::int32_t threads) {
  std::ifstream f(spec_path);
  if (!f) {
    std::cerr << "cannot open sweep spec " << spec_path << "\n";
    return 2;
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  SweepSpec spec;
  try {
    spec = parse_sweep_spec(ss.str());
  } catch (const std::exception& e) {
    std::cerr << "invalid sweep spec: " << e.what() << "\n";
    return 2;
  }
  if (out_dir.empty()) out_dir = spec.out_dir.empty() ? default_out_dir() : spec.out_dir;
  // fail on unwritable output before any simulation starts
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  {
    std::ofstream probe(fs::path(out_dir) / "results.txt");
    if (!probe) {
      std::cerr << "output path not writable: " << out_dir << "\n";
      return 2;
    }
  }
  SweepSummary sum = run_experiment(spec, threads);
  write_sweep_outputs(spec, sum, out_dir);
  std::cout << "runs=" << sum.records.size() << " medianConvergedRound=" << sum.median_converged
            << " maxDegreeExpansion=" << format_ratio(sum.max_degree_expansion)
            << " failures=" << sum.failures.size() << "\n";
  return sum.all_ok ? 0 : 1;
}

int cmd_check(const std::string& graph_path) {
  Configuration cfg;
  try {
    cfg = load_graph_file(graph_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  auto reports = detectors(cfg.view());
  for (const auto& r : reports) {
    std::cout << "detector node=" << r.node << " violated=";
    for (std::size_t i = 0; i < r.violated.size(); ++i)
      std::cout << (i ? "," : "") << violation_name(r.violated[i]);
    std::cout << "\n";
  }
  std::cout << "detectorCount=" << reports.size() << "\n";
  return reports.empty() ? 0 : 1;
}

int cmd_build(std::int32_t N, const std::string& nodes_csv) {
  std::vector<HostId> V;
  std::stringstream ss(nodes_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) V.push_back(std::stoi(tok));
  }
  if (V.empty()) {
    std::cerr << "--nodes must list at least one id\n";
    return 2;
  }
  try {
    EdgeSet es = avatar_edges(N, V);
    for (const auto& [e, tags] : es.edges) {
      std::cout << e.first << " " << e.second << " ";
      bool first = true;
      if (tags & kType1) { std::cout << "type1"; first = false; }
      if (tags & kType2) std::cout << (first ? "" : "+") << "type2";
      std::cout << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-stabilizing Avatar overlay network simulator"};
  app.require_subcommand(1);

  // sim
  auto* sim = app.add_subcommand("sim", "run one simulation");
  std::string gen = "line", policy, graph_path, trace_path, out_path;
  std::string trace_format = "records";
  std::int32_t n = 0, N = 0;
  std::uint64_t seed = 0;
  std::int64_t max_rounds = 0;
  sim->add_option("--gen", gen, "generator kind")->required();
  sim->add_option("--n", n, "number of nodes");
  sim->add_option("--N", N, "identifier capacity");
  sim->add_option("--seed", seed, "random seed")->required();
  sim->add_option("--max-rounds", max_rounds, "round budget (0 = default)");
  sim->add_option("--trace", trace_path, "write a per-round trace here");
  sim->add_option("--trace-format", trace_format, "records | edgelist-per-round");
  sim->add_option("--out", out_path, "write the result record here");
  sim->add_option("--policy", policy, "zeroed | random-fields | crafted");
  sim->add_option("--graph", graph_path, "graph file (with --gen from-file)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "run a batch sweep");
  std::string spec_path, sweep_out;
  std::int32_t threads = 0;
  sweep->add_option("--spec", spec_path, "sweep spec (json)")->required();
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_option("--threads", threads, "worker threads (0 = hardware)");

  // check
  auto* check = app.add_subcommand("check", "run the detectors on a graph file");
  std::string check_path;
  check->add_option("--graph", check_path, "graph file")->required();

  // build
  auto* build = app.add_subcommand("build", "emit the canonical edge set");
  std::int32_t build_N = 0;
  std::string nodes_csv;
  build->add_option("--N", build_N, "identifier capacity")->required();
  build->add_option("--nodes", nodes_csv, "comma-separated host ids")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return cmd_sim(gen, n, N, seed, max_rounds, trace_path, trace_format, out_path,
                     policy, graph_path);
    if (sweep->parsed()) return cmd_sweep(spec_path, sweep_out, threads);
    if (check->parsed()) return cmd_check(check_path);
    if (build->parsed()) return cmd_build(build_N, nodes_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
