#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracle.hpp"
#include "sim_helpers.hpp"

using namespace avatar;
using namespace simtest;

TEST_CASE("replace_node_plan: successor update with transfers") {
  // both hosts believe they own [0,4); the copy at 0 meets the copy at 2
  auto out = replace_node_plan(/*c=*/0, Range{0, 4}, kNone, kNone, /*d=*/2, 4);
  CHECK(out.kase == ReplaceCase::SuccessorUpdate);
  CHECK(out.new_succ == 2);
  CHECK(out.lost_nodes == std::vector<GuestId>{2, 3});
  CHECK(out.transfer_target == 2);
}

TEST_CASE("replace_node_plan: redundant copy is deleted in place") {
  // ranges already disjoint: no pointer moves, children hand over
  auto out = replace_node_plan(/*c=*/0, Range{0, 2}, kNone, /*succ=*/2, /*d=*/2, 4);
  CHECK(out.kase == ReplaceCase::NoPointerUpdate);
  CHECK(out.lost_nodes.empty());
}

TEST_CASE("replace_node_plan: predecessor update") {
  auto out = replace_node_plan(/*c=*/6, Range{0, 8}, kNone, kNone, /*d=*/5, 8);
  CHECK(out.kase == ReplaceCase::PredecessorUpdate);
  CHECK(out.new_pred == 5);
  CHECK(out.lost_nodes == std::vector<GuestId>{5});
}

TEST_CASE("resolve_winner is the merged host") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 500; ++t) {
    std::int32_t N = 2 + static_cast<std::int32_t>(rng() % 62);
    HostId a = static_cast<HostId>(rng() % N);
    HostId b = static_cast<HostId>(rng() % N);
    if (a == b) continue;
    GuestId g = static_cast<GuestId>(rng() % N);
    std::vector<int> V{std::min(a, b), std::max(a, b)};
    CHECK(resolve_winner(g, a, b) == oracle::host_of(g, V));
  }
}

TEST_CASE("pre-matched singletons merge into the exact two-host overlay") {
  Configuration cfg = make_matched_pair(4, {0}, {2});
  GuestTree t = cbt_structure(4);
  std::int64_t bound = timing::merge(4);  // 5*(log N + 1) + 4
  std::int64_t done = -1;
  for (std::int64_t r = 1; r <= bound; ++r) {
    step_round(cfg, t);
    ConfigView v = cfg.view();
    if (is_proper_cluster(v, {0, 2}) && cluster_unmatched(v, {0, 2}) &&
        clean_or_announcing(cfg, {0, 2})) {
      done = r;
      break;
    }
  }
  REQUIRE(done > 0);
  CHECK(done <= bound);
  CHECK(cfg.nodes[0].cluster_succ == 2);
  CHECK(cfg.nodes[0].cluster_pred == kNone);
  CHECK(cfg.nodes[2].cluster_pred == 0);
  CHECK(cfg.nodes[2].cluster_succ == kNone);
  CHECK(cfg.nodes[0].cluster == 0);
  CHECK(cfg.nodes[2].cluster == 0);
  // exactly the canonical edge set: the single chain edge
  CHECK(cfg.has_edge(0, 2));
  CHECK(cfg.adj[0].size() == 1);
  CHECK(cfg.adj[2].size() == 1);
}

TEST_CASE("resolution advances one guest level per two rounds") {
  Configuration cfg = make_matched_pair(16, {2, 9}, {5, 12});
  GuestTree t = cbt_structure(16);
  std::map<std::int32_t, std::int64_t> first_resolved_at_level;
  std::map<GuestId, bool> seen;
  for (std::int64_t r = 1; r <= timing::merge(16) + 4; ++r) {
    step_round(cfg, t);
    for (const auto& [id, s] : cfg.nodes)
      for (const auto& [g, pos] : s.merge.positions)
        if (pos.resolved && pos.winner && !seen[g]) {
          seen[g] = true;
          std::int32_t lvl = t.level[g];
          if (!first_resolved_at_level.count(lvl)) first_resolved_at_level[lvl] = r;
        }
  }
  REQUIRE(first_resolved_at_level.count(0) == 1);
  std::int64_t base = first_resolved_at_level[0];
  for (const auto& [lvl, r] : first_resolved_at_level) {
    INFO("level " << lvl);
    CHECK(r == base + 2 * lvl);
  }
}

TEST_CASE("random proper-cluster pairs merge correctly within the bound") {
  std::mt19937_64 rng(23);
  const std::int32_t N = 16;
  for (int trial = 0; trial < 25; ++trial) {
    int n1 = 1 + static_cast<int>(rng() % 5);
    int n2 = 1 + static_cast<int>(rng() % 5);
    std::set<HostId> used;
    auto sample = [&](int k) {
      std::vector<HostId> v;
      while (static_cast<int>(v.size()) < k) {
        HostId h = static_cast<HostId>(rng() % N);
        if (used.insert(h).second) v.push_back(h);
      }
      std::sort(v.begin(), v.end());
      return v;
    };
    std::vector<HostId> T1 = sample(n1), T2 = sample(n2);
    Configuration cfg = make_matched_pair(N, T1, T2, rng());

    std::set<HostId> all(T1.begin(), T1.end());
    all.insert(T2.begin(), T2.end());
    std::int32_t degree_before = cfg.max_degree();

    GuestTree t = cbt_structure(N);
    std::int64_t bound = timing::merge(N);
    std::int64_t done = -1;
    std::int32_t peak = degree_before;
    for (std::int64_t r = 1; r <= bound && done < 0; ++r) {
      step_round(cfg, t);
      peak = std::max(peak, cfg.max_degree());
      ConfigView v = cfg.view();
      if (is_proper_cluster(v, all) && cluster_unmatched(v, all) &&
          clean_or_announcing(cfg, all))
        done = r;
    }
    INFO("trial " << trial << " T1=" << T1.size() << " T2=" << T2.size());
    REQUIRE(done > 0);
    // degree growth during the merge stays within the per-merge envelope
    std::int32_t L = floor_log2(N);
    CHECK(peak <= degree_before + 2 * L * (L + 1));
  }
}

TEST_CASE("forged sequences keep the edge; real ones release it") {
  Configuration cfg = make_matched_pair(8, {1}, {6});
  // corrupt one side's distributed sample so verification must fail
  GuestTree t = cbt_structure(8);
  // run just past both prep waves
  for (int r = 0; r < timing::pfc_wave(8) + 2; ++r) step_round(cfg, t);
  // partner edges between non-root members would be cut here; with two
  // singletons the only edge is root-root, which is never deleted
  CHECK(cfg.has_edge(1, 6));

  // adversarially planted pair with a wrong guess: the edge must survive
  Configuration adv;
  adv.N = 8;
  adv.psi_seed = 424242;
  adv.rng_seed = 5;
  for (HostId h : {2, 5}) adv.nodes[h] = fresh_node(h);
  adv.add_edge(2, 5);
  for (HostId h : {2, 5}) {
    NodeState& s = adv.nodes[h];
    HostId other = h == 2 ? 5 : 2;
    s.merge.active = true;
    s.merge.side = h;
    s.merge.partner_cluster = other;
    s.merge.partner_root = kNone;
    s.merge.prep_received = true;
    s.merge.psi_round = 3;
    s.merge.psi_bits = adv.psi(3) ^ 1;  // off by one bit: a failed guess
    s.merge.psi_planted = true;
    s.merge.cut_candidates.insert(other);
    s.merge.orig_range = Range{h, h + 1};
    s.merge.holdings.push_back({s.merge.orig_range, s.merge.side});
    s.merge.new_cluster = merge_new_cluster(8, s.merge.side, other);
    s.cluster = s.merge.new_cluster;
    s.role = RoleKind::Merging;
  }
  GuestTree t8 = cbt_structure(8);
  for (int r = 0; r < 4; ++r) step_round(adv, t8);
  CHECK(adv.has_edge(2, 5));
  CHECK(adv.weakly_connected());
}
