#pragma once

// Batch experiment runner: executes every (cell, seed) trial, in parallel
// across trials, and writes result records in a deterministic order.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include "avatar/io.hpp"

namespace avatar {

// Degree expansion of one run: peak degree over the whole trace against the
// larger of the initial topology's and the final overlay's maximum degree.
inline double degree_expansion(const std::vector<RoundTrace>& trace,
                               std::int32_t initial_max_degree,
                               std::int32_t final_topology_max_degree) {
  if (trace.empty()) throw std::invalid_argument("degree_expansion: empty trace");
  std::int32_t peak = initial_max_degree;
  for (const auto& t : trace) peak = std::max(peak, t.max_degree);
  std::int32_t denom = std::max(initial_max_degree, final_topology_max_degree);
  return denom > 0 ? static_cast<double>(peak) / denom : 1.0;
}

struct SweepSummary {
  std::vector<ResultRecord> records;
  std::int64_t median_converged{-1};
  std::int64_t p95_converged{-1};
  double max_degree_expansion{0.0};
  std::vector<std::string> failures;
  bool all_ok{true};
};

inline ResultRecord run_trial(const SweepCell& cell, std::uint64_t seed,
                              std::int64_t max_rounds) {
  InitialConfigSpec ispec;
  ispec.kind = cell.kind;
  ispec.n = cell.n;
  ispec.N = cell.N;
  ispec.policy = cell.policy;
  Configuration cfg = generate_initial(ispec, seed);
  RunOptions opt;
  opt.max_rounds = max_rounds;
  RunOutput out = run(std::move(cfg), opt);
  ResultRecord rr;
  std::ostringstream id;
  id << gen_kind_name(cell.kind) << "-n" << cell.n << "-N" << cell.N;
  rr.spec_id = id.str();
  rr.seed = seed;
  rr.n = cell.n;
  rr.N = cell.N;
  rr.r = out.result;
  return rr;
}

inline SweepSummary run_experiment(const SweepSpec& spec, std::int32_t threads = 0) {
  if (spec.cells.empty() || spec.seeds.empty())
    throw std::invalid_argument("run_experiment: empty sweep");
  struct Job {
    SweepCell cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& c : spec.cells)
    for (std::uint64_t s : spec.seeds) jobs.push_back({c, s});

  SweepSummary sum;
  sum.records.resize(jobs.size());
  if (threads <= 0)
    threads = static_cast<std::int32_t>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min<std::int32_t>(threads, static_cast<std::int32_t>(jobs.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      sum.records[i] = run_trial(jobs[i].cell, jobs[i].seed, spec.max_rounds);
    }
  };
  std::vector<std::thread> pool;
  for (std::int32_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<std::int64_t> conv;
  for (const auto& rr : sum.records) {
    bool ok = rr.r.converged_round >= 0 && rr.r.connectivity_ok && rr.r.silence_ok;
    if (!ok) {
      sum.all_ok = false;
      std::ostringstream fs;
      fs << rr.spec_id << " seed=" << rr.seed << " converged=" << rr.r.converged_round
         << " connectivityOk=" << rr.r.connectivity_ok << " silenceOk=" << rr.r.silence_ok;
      sum.failures.push_back(fs.str());
    }
    if (rr.r.converged_round >= 0) conv.push_back(rr.r.converged_round);
    sum.max_degree_expansion = std::max(sum.max_degree_expansion, rr.r.degree_expansion);
  }
  if (!conv.empty()) {
    std::sort(conv.begin(), conv.end());
    sum.median_converged = conv[conv.size() / 2];
    sum.p95_converged = conv[std::min(conv.size() - 1, (conv.size() * 95) / 100)];
  }
  return sum;
}

// One record per line, ordered by (cell, seed); plus a summary file.
inline void write_sweep_outputs(const SweepSpec& spec, const SweepSummary& sum,
                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream rf(fs::path(out_dir) / "results.txt");
    if (!rf) throw std::runtime_error("cannot write results to " + out_dir);
    for (const auto& rr : sum.records) rf << format_result_record(rr) << "\n";
  }
  {
    std::ofstream sf(fs::path(out_dir) / "summary.txt");
    sf << "runs=" << sum.records.size() << " medianConvergedRound=" << sum.median_converged
       << " p95ConvergedRound=" << sum.p95_converged
       << " maxDegreeExpansion=" << format_ratio(sum.max_degree_expansion)
       << " failures=" << sum.failures.size() << "\n";
    for (const auto& f : sum.failures) sf << "failure: " << f << "\n";
  }
}

}  // namespace avatar
