#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "graph_checks.hpp"
#include "nanonet/explore.hpp"
#include "oracles.hpp"

using namespace nanonet;

namespace {

// two-conv toy net whose only interesting knobs are the conv widths
ArchSpec toy2(int c1, int c2) {
  ArchSpec s;
  s.name = "toy2";
  s.input_shape = {1, 24, 24};
  LayerNode a;
  a.id = "c1";
  a.kind = NodeKind::conv;
  a.kernel = {3, 3};
  a.stride = {2, 2};
  a.out_channels = c1;
  LayerNode ar;
  ar.id = "r1";
  ar.kind = NodeKind::relu;
  ar.inputs = {"c1"};
  LayerNode b;
  b.id = "c2";
  b.kind = NodeKind::conv;
  b.kernel = {3, 3};
  b.stride = {1, 1};
  b.out_channels = c2;
  b.inputs = {"r1"};
  LayerNode br;
  br.id = "r2";
  br.kind = NodeKind::relu;
  br.inputs = {"c2"};
  LayerNode gap;
  gap.id = "gap";
  gap.kind = NodeKind::global_avg_pool;
  gap.inputs = {"r2"};
  LayerNode fc;
  fc.id = "fc";
  fc.kind = NodeKind::dense;
  fc.out_channels = 7;
  fc.inputs = {"gap"};
  LayerNode head;
  head.id = "head";
  head.kind = NodeKind::softmax_head;
  head.inputs = {"fc"};
  s.nodes = {a, ar, b, br, gap, fc, head};
  s.output_node = "head";
  return s;
}

SearchConfig toy_search_cfg() {
  SearchConfig cfg;
  cfg.iterations = 40;
  cfg.population = 4;
  cfg.rates = {};
  cfg.rates.channel_scale = 1.0;
  cfg.rates.toggle_edge = 0.0;
  cfg.rates.kernel_size = 0.0;
  cfg.rates.block = 0.0;
  cfg.rates.max_channels = 8;
  cfg.proxy_epochs = 80;
  cfg.proxy_val_fraction = 0.2;
  cfg.seed = 11;
  cfg.proxy_train.batch_size = 16;
  cfg.proxy_train.augment_enabled = false;
  return cfg;
}

std::pair<int, int> widths(const ArchSpec& s) {
  return {s.find("c1")->out_channels, s.find("c2")->out_channels};
}

}  // namespace

TEST_CASE("indicator: boundary and interior truth table") {
  Constraints c;  // 0.92 / 1M defaults
  auto rec = [](double acc, long long params) {
    CandidateRecord r;
    r.accuracy = acc;
    r.params = params;
    return r;
  };
  CHECK(indicator(rec(0.93, 500'000), c) == 1);
  CHECK(indicator(rec(0.92, 1'000'000), c) == 1);  // closed boundary
  CHECK(indicator(rec(0.91, 500'000), c) == 0);
  CHECK(indicator(rec(0.99, 1'000'001), c) == 0);
}

TEST_CASE("u_score: defined values and monotonicity") {
  CHECK(u_score(1.0, 1'000'000, 1'000'000) == doctest::Approx(80.0).epsilon(1e-12));
  // doubling params at fixed accuracy/macs strictly decreases U
  const double u1 = u_score(0.9, 200'000, 40'000'000);
  const double u2 = u_score(0.9, 400'000, 40'000'000);
  CHECK(u2 < u1);
  CHECK_THROWS_AS(u_score(0.0, 1000, 1000), ValueError);
  // degenerate tiny nets: floors keep U finite
  CHECK(std::isfinite(u_score(0.01, 1, 1)));
}

TEST_CASE("u_score: matches an arbitrary-precision evaluation") {
  Rng rng(101);
  for (int i = 0; i < 10; ++i) {
    const double acc = rng.uniform(0.05, 1.0);
    const long long params = 1 + static_cast<long long>(rng.below(5'000'000));
    const long long macs = 1 + static_cast<long long>(rng.below(500'000'000));
    const double got = u_score(acc, params, macs);
    const double want = oracles::u_score_highprec(acc, params, macs, 2.0, 0.5, 0.5);
    CHECK(std::abs(got - want) < 1e-9);
  }
}

TEST_CASE("mutate: zero rates return a structurally equal spec") {
  ArchSpec spec = build_reference(ReferenceVariant::nano_b_like);
  Rng rng(1);
  MutationRates zero{0, 0, 0, 0, 0};
  ArchSpec out = mutate(spec, rng, zero);
  CHECK(out == spec);
}

TEST_CASE("mutate: 1000 single mutations stay valid and near the parent size") {
  ArchSpec parent = build_reference(ReferenceVariant::nano_b_like);
  const int n = static_cast<int>(parent.nodes.size());
  Rng rng(2024);
  MutationRates rates;  // all knobs on
  int changed = 0;
  for (int i = 0; i < 1000; ++i) {
    ArchSpec child = mutate(parent, rng, rates);
    auto order = validate_and_toposort(child);
    CHECK(graph_checks::order_respects_edges(child, order));
    infer_shapes(child);
    CHECK(count_params(child).param_count > 0);
    const int delta = static_cast<int>(child.nodes.size()) - n;
    CHECK(delta >= -4);
    CHECK(delta <= 4);
    if (!(child == parent)) ++changed;
  }
  CHECK(changed > 900);  // the knobs nearly always find a valid change
}

TEST_CASE("mutate: closed under chained application") {
  ArchSpec spec = build_reference(ReferenceVariant::nano_b_like);
  Rng rng(7);
  MutationRates rates;
  rates.max_channels = 96;
  for (int i = 0; i < 300; ++i) {
    spec = mutate(spec, rng, rates);
    validate_and_toposort(spec);
    infer_shapes(spec);
  }
  CHECK(count_params(spec).param_count > 0);
}

TEST_CASE("mutate: toy channel orbit is exactly {4,5,6,8}") {
  Rng rng(5);
  MutationRates rates{1, 0, 0, 0, 8};
  std::set<std::pair<int, int>> seen;
  ArchSpec cur = toy2(6, 6);
  for (int i = 0; i < 400; ++i) {
    cur = mutate(cur, rng, rates);
    seen.insert(widths(cur));
    const auto [a, b] = widths(cur);
    for (int v : {a, b}) CHECK((v == 4 || v == 5 || v == 6 || v == 8));
  }
  CHECK(seen.size() == 16);
}

TEST_CASE("explore: agrees with exhaustive enumeration on the toy space") {
  auto data = synth_dataset(16, 14, 77, 24);
  Constraints constraints;
  constraints.min_accuracy = 0.68;
  constraints.max_params = 550;
  SearchConfig cfg = toy_search_cfg();

  // enumeration oracle: evaluate all 16 candidates with the same proxy
  const std::vector<int> values = {4, 5, 6, 8};
  std::optional<CandidateRecord> oracle_best;
  int oracle_feasible = 0;
  for (int c1 : values)
    for (int c2 : values) {
      CandidateRecord r = evaluate_candidate(toy2(c1, c2), data, constraints, cfg);
      if (!r.feasible) continue;
      ++oracle_feasible;
      if (!oracle_best || r.u_score > oracle_best->u_score) oracle_best = r;
    }
  REQUIRE(oracle_best.has_value());
  REQUIRE(oracle_feasible >= 4);  // constraints bite but leave real choices

  std::ostringstream log;
  ExploreResult res = explore(toy2(4, 4), data, constraints, cfg, &log);
  REQUIRE(res.best.has_value());
  CHECK(widths(res.best->spec) == widths(oracle_best->spec));
  CHECK(res.best->u_score == doctest::Approx(oracle_best->u_score).epsilon(1e-12));

  // archive admits only feasible candidates; best-U trace is monotone
  for (const auto& r : res.archive) {
    CHECK(r.feasible);
    CHECK(indicator(r, constraints) == 1);
  }
  for (size_t i = 1; i < res.best_u_trace.size(); ++i)
    CHECK(res.best_u_trace[i] >= res.best_u_trace[i - 1]);

  // one JSON line per evaluation
  int lines = 0;
  std::string line;
  std::istringstream in(log.str());
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == static_cast<int>(res.log.size()));

  // determinism: a second run reproduces the archive exactly
  ExploreResult res2 = explore(toy2(4, 4), data, constraints, cfg, nullptr);
  REQUIRE(res2.log.size() == res.log.size());
  for (size_t i = 0; i < res.log.size(); ++i) {
    CHECK(res2.log[i].spec == res.log[i].spec);
    CHECK(res2.log[i].accuracy == res.log[i].accuracy);
  }
}

TEST_CASE("explore: impossible constraints yield a flagged empty archive") {
  auto data = synth_dataset(6, 14, 99, 24);
  Constraints impossible;
  impossible.min_accuracy = 1.01;
  SearchConfig cfg = toy_search_cfg();
  cfg.iterations = 2;
  cfg.proxy_epochs = 1;
  ExploreResult res = explore(toy2(5, 5), data, impossible, cfg, nullptr);
  CHECK(res.archive.empty());
  CHECK(!res.best.has_value());
  REQUIRE(res.best_infeasible.has_value());
  CHECK(res.best_infeasible->feasible == false);
}

TEST_CASE("explore: emitted best arch round-trips") {
  auto data = synth_dataset(6, 14, 55, 24);
  Constraints constraints;
  constraints.min_accuracy = 0.1;
  constraints.max_params = 10'000;
  SearchConfig cfg = toy_search_cfg();
  cfg.iterations = 3;
  cfg.proxy_epochs = 2;
  ExploreResult res = explore(toy2(6, 6), data, constraints, cfg, nullptr);
  REQUIRE(res.best.has_value());
  ArchSpec back = deserialize(serialize(res.best->spec));
  CHECK(back == res.best->spec);
}
