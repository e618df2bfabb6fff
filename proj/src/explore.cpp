#include "nanonet/explore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

namespace nanonet {

int indicator(const CandidateRecord& record, const Constraints& c) {
  return (record.accuracy >= c.min_accuracy && record.params <= c.max_params) ? 1
                                                                              : 0;
}

double u_score(double accuracy, long long params, long long macs,
               const UCoeffs& coeffs) {
  if (accuracy <= 0.0) throw ValueError("u_score: accuracy must be > 0");
  if (params < 1 || macs < 1)
    throw ValueError("u_score: params and macs must be >= 1");
  const double pm = std::max(static_cast<double>(params) / 1e6, 1e-3);
  const double mm = std::max(static_cast<double>(macs) / 1e6, 1e-3);
  return 20.0 * std::log10(std::pow(100.0 * accuracy, coeffs.alpha) /
                           (std::pow(pm, coeffs.beta) * std::pow(mm, coeffs.gamma)));
}

namespace {

struct GraphView {
  std::vector<std::string> order;
  std::unordered_map<std::string, size_t> topo_index;
  std::unordered_map<std::string, NodeShape> shapes;
  std::unordered_map<std::string, std::vector<std::string>> consumers;

  static GraphView of(const ArchSpec& spec) {
    GraphView v;
    v.order = validate_and_toposort(spec);
    for (size_t i = 0; i < v.order.size(); ++i) v.topo_index[v.order[i]] = i;
    v.shapes = infer_shapes(spec).shapes;
    for (const auto& n : spec.nodes)
      for (const auto& in : n.inputs) v.consumers[in].push_back(n.id);
    return v;
  }
};

LayerNode* find_mut(ArchSpec& spec, const std::string& id) {
  for (auto& n : spec.nodes)
    if (n.id == id) return &n;
  return nullptr;
}

std::vector<size_t> conv_indices(const ArchSpec& spec) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < spec.nodes.size(); ++i)
    if (spec.nodes[i].kind == NodeKind::conv) idx.push_back(i);
  return idx;
}

std::string fresh_prefix(const ArchSpec& spec) {
  for (int i = 0;; ++i) {
    const std::string p = "mb" + std::to_string(i) + "_";
    bool clash = false;
    for (const auto& n : spec.nodes)
      if (n.id.rfind(p, 0) == 0) {
        clash = true;
        break;
      }
    if (!clash) return p;
  }
}

bool mutate_channel_scale(ArchSpec& spec, Rng& rng, int max_channels) {
  auto convs = conv_indices(spec);
  if (convs.empty()) return false;
  LayerNode& n = spec.nodes[convs[rng.index(convs.size())]];
  const double factor = rng.bernoulli(0.5) ? 0.75 : 1.25;
  const int nc = std::max<int>(4, static_cast<int>(std::lround(n.out_channels * factor)));
  if (max_channels > 0 && nc > max_channels) return false;
  if (nc == n.out_channels) return false;
  n.out_channels = nc;
  return true;
}

bool mutate_kernel(ArchSpec& spec, Rng& rng) {
  auto convs = conv_indices(spec);
  if (convs.empty()) return false;
  LayerNode& n = spec.nodes[convs[rng.index(convs.size())]];
  const std::array<int, 2> one{1, 1}, three{3, 3};
  if (n.kernel == one)
    n.kernel = three;
  else if (n.kernel == three)
    n.kernel = one;
  else
    n.kernel = rng.bernoulli(0.5) ? one : three;
  return true;
}

bool mutate_toggle_edge(ArchSpec& spec, Rng& rng, const GraphView& view) {
  struct Addition {
    std::string add_node;
    std::string source;
  };
  struct Removal {
    std::string add_node;
    size_t input_idx;
  };
  std::vector<Addition> additions;
  std::vector<Removal> removals;

  for (const auto& n : spec.nodes) {
    if (n.kind != NodeKind::add) continue;
    const NodeShape target = view.shapes.at(n.id);
    const size_t limit = view.topo_index.at(n.id);
    std::set<std::string> current(n.inputs.begin(), n.inputs.end());
    for (const auto& cand : spec.nodes) {
      if (cand.id == n.id || current.count(cand.id)) continue;
      auto it = view.topo_index.find(cand.id);
      if (it == view.topo_index.end() || it->second >= limit) continue;
      if (view.shapes.at(cand.id) == target)
        additions.push_back({n.id, cand.id});
    }
    if (n.inputs.size() >= 3)
      for (size_t i = 0; i < n.inputs.size(); ++i)
        removals.push_back({n.id, i});
  }
  const size_t total = additions.size() + removals.size();
  if (total == 0) return false;
  const size_t pick = rng.below(total);
  if (pick < additions.size()) {
    const Addition& a = additions[pick];
    find_mut(spec, a.add_node)->inputs.push_back(a.source);
  } else {
    const Removal& r = removals[pick - additions.size()];
    auto& inputs = find_mut(spec, r.add_node)->inputs;
    inputs.erase(inputs.begin() + static_cast<long>(r.input_idx));
  }
  return true;
}

bool insert_block(ArchSpec& spec, Rng& rng, const GraphView& view) {
  std::vector<std::string> anchors;
  for (const auto& n : spec.nodes) {
    if (n.kind != NodeKind::relu && n.kind != NodeKind::add) continue;
    const NodeShape s = view.shapes.at(n.id);
    if (s.h < 2 || s.w < 2) continue;
    anchors.push_back(n.id);
  }
  if (anchors.empty()) return false;
  const std::string anchor = anchors[rng.index(anchors.size())];
  const int c = view.shapes.at(anchor).c;
  const std::string p = fresh_prefix(spec);

  for (auto& n : spec.nodes)
    for (auto& in : n.inputs)
      if (in == anchor) in = p + "add";

  LayerNode conv;
  conv.id = p + "conv";
  conv.kind = NodeKind::conv;
  conv.kernel = {3, 3};
  conv.out_channels = c;
  conv.stride = {1, 1};
  conv.padding = Padding::same;
  conv.inputs = {anchor};
  LayerNode relu;
  relu.id = p + "relu";
  relu.kind = NodeKind::relu;
  relu.inputs = {conv.id};
  LayerNode add;
  add.id = p + "add";
  add.kind = NodeKind::add;
  add.inputs = {anchor, relu.id};

  // keep declaration order close to execution order
  auto pos = spec.nodes.begin();
  while (pos != spec.nodes.end() && pos->id != anchor) ++pos;
  pos = spec.nodes.insert(pos + 1, std::move(conv));
  pos = spec.nodes.insert(pos + 1, std::move(relu));
  spec.nodes.insert(pos + 1, std::move(add));
  return true;
}

bool remove_block(ArchSpec& spec, Rng& rng, const GraphView& view) {
  struct Match {
    std::string add_id;
    std::vector<std::string> doomed;  // nodes to delete (chain plus add)
    std::string anchor;
  };
  auto single_consumer = [&](const std::string& id, const std::string& expect) {
    auto it = view.consumers.find(id);
    return it != view.consumers.end() && it->second.size() == 1 &&
           it->second[0] == expect;
  };
  auto plain_conv = [](const LayerNode& n) {
    return n.kind == NodeKind::conv && n.kernel == std::array<int, 2>{3, 3} &&
           n.stride == std::array<int, 2>{1, 1} && n.padding == Padding::same;
  };

  std::vector<Match> matches;
  for (const auto& a : spec.nodes) {
    if (a.kind != NodeKind::add || a.inputs.size() != 2) continue;
    for (int flip = 0; flip < 2; ++flip) {
      const std::string& anchor = a.inputs[flip];
      const std::string& branch = a.inputs[1 - flip];
      // anchor -> conv -> relu -> add(anchor, .)
      const LayerNode* r = spec.find(branch);
      if (r && r->kind == NodeKind::relu && single_consumer(r->id, a.id)) {
        const LayerNode* c = spec.find(r->inputs[0]);
        if (c && plain_conv(*c) && c->inputs[0] == anchor &&
            single_consumer(c->id, r->id)) {
          matches.push_back({a.id, {c->id, r->id, a.id}, anchor});
          break;
        }
      }
      // anchor -> conv -> relu -> conv -> add(anchor, .)
      const LayerNode* c2 = spec.find(branch);
      if (c2 && plain_conv(*c2) && single_consumer(c2->id, a.id)) {
        const LayerNode* r1 = spec.find(c2->inputs[0]);
        if (r1 && r1->kind == NodeKind::relu && single_consumer(r1->id, c2->id)) {
          const LayerNode* c1 = spec.find(r1->inputs[0]);
          if (c1 && plain_conv(*c1) && c1->inputs[0] == anchor &&
              single_consumer(c1->id, r1->id)) {
            matches.push_back({a.id, {c1->id, r1->id, c2->id, a.id}, anchor});
            break;
          }
        }
      }
    }
  }
  if (matches.empty()) return false;
  const Match m = matches[rng.index(matches.size())];

  for (auto& n : spec.nodes)
    for (auto& in : n.inputs)
      if (in == m.add_id) in = m.anchor;
  std::erase_if(spec.nodes, [&](const LayerNode& n) {
    return std::find(m.doomed.begin(), m.doomed.end(), n.id) != m.doomed.end();
  });
  return true;
}

}  // namespace

ArchSpec mutate(const ArchSpec& spec, Rng& rng, const MutationRates& rates) {
  const double total =
      rates.channel_scale + rates.toggle_edge + rates.kernel_size + rates.block;
  if (total <= 0.0) return spec;

  GraphView view = GraphView::of(spec);
  for (int attempt = 0; attempt < 100; ++attempt) {
    ArchSpec cand = spec;
    double pick = rng.uniform(0.0, total);
    bool applied = false;
    if ((pick -= rates.channel_scale) < 0)
      applied = mutate_channel_scale(cand, rng, rates.max_channels);
    else if ((pick -= rates.toggle_edge) < 0)
      applied = mutate_toggle_edge(cand, rng, view);
    else if ((pick -= rates.kernel_size) < 0)
      applied = mutate_kernel(cand, rng);
    else
      applied = rng.bernoulli(0.5) ? insert_block(cand, rng, view)
                                   : remove_block(cand, rng, view);
    if (!applied) continue;
    try {
      validate_and_toposort(cand);
      infer_shapes(cand);
    } catch (const GraphError&) {
      continue;
    }
    return cand;
  }
  return spec;
}

CandidateRecord evaluate_candidate(const ArchSpec& spec,
                                   const std::vector<Sample>& data,
                                   const Constraints& constraints,
                                   const SearchConfig& cfg) {
  CandidateRecord r;
  r.spec = spec;
  const ArchStats stats = count_params(spec);
  r.params = stats.param_count;
  r.macs = stats.mac_count;

  // One fixed subject-independent 80/20 split shared by all candidates.
  std::vector<std::string> subjects;
  for (const auto& s : data)
    if (std::find(subjects.begin(), subjects.end(), s.subject_id) == subjects.end())
      subjects.push_back(s.subject_id);
  if (subjects.size() < 2)
    throw ValueError("explore: need >= 2 subjects for the proxy split");
  Rng split_rng(derive_seed(cfg.seed, {0x9e17}));
  split_rng.shuffle(subjects);
  const size_t n_val = std::max<size_t>(
      1, static_cast<size_t>(std::lround(cfg.proxy_val_fraction * subjects.size())));
  std::set<std::string> val_subjects(subjects.begin(),
                                     subjects.begin() + static_cast<long>(n_val));

  std::vector<Sample> train_set, val_set;
  for (const auto& s : data)
    (val_subjects.count(s.subject_id) ? val_set : train_set).push_back(s);
  if (cfg.proxy_max_samples > 0 &&
      static_cast<int>(train_set.size()) > cfg.proxy_max_samples)
    train_set.resize(cfg.proxy_max_samples);

  TrainConfig tc = cfg.proxy_train.with_epochs(cfg.proxy_epochs);
  tc.seed = derive_seed(cfg.seed, {0xe7a1, content_hash_u64(spec)});
  tc.verbose = false;
  tc.threads = 1;
  const TrainResult tr = train(spec, train_set, {}, tc);
  r.accuracy = evaluate(tr.state.net, val_set).accuracy;

  r.u_score = r.accuracy > 0.0
                  ? u_score(r.accuracy, r.params, r.macs, cfg.u)
                  : -std::numeric_limits<double>::infinity();
  r.feasible = indicator(r, constraints) == 1;
  return r;
}

std::string candidate_jsonl(const CandidateRecord& r, int iteration) {
  nlohmann::ordered_json j;
  j["iter"] = iteration;
  j["accuracy"] = r.accuracy;
  j["params"] = r.params;
  j["macs"] = r.macs;
  if (std::isfinite(r.u_score))
    j["u_score"] = r.u_score;
  else
    j["u_score"] = nullptr;
  j["feasible"] = r.feasible;
  j["arch"] = nlohmann::ordered_json::parse(serialize(r.spec));
  return j.dump();
}

ExploreResult explore(const ArchSpec& seed_spec, const std::vector<Sample>& data,
                      const Constraints& constraints, const SearchConfig& cfg,
                      std::ostream* jsonl_log) {
  validate_and_toposort(seed_spec);
  ExploreResult res;
  std::unordered_map<uint64_t, size_t> seen;  // arch hash -> log index
  Rng rng(derive_seed(cfg.seed, {0x5ea6c4}));

  double best_u = -std::numeric_limits<double>::infinity();
  auto admit = [&](const CandidateRecord& r, int iteration) -> size_t {
    res.log.push_back(r);
    if (jsonl_log) (*jsonl_log) << candidate_jsonl(r, iteration) << "\n";
    if (r.feasible) {
      res.archive.push_back(r);
      if (!res.best || r.u_score > res.best->u_score) res.best = r;
      best_u = std::max(best_u, r.u_score);
    }
    res.best_u_trace.push_back(best_u);
    return res.log.size() - 1;
  };

  auto eval_or_reuse = [&](const ArchSpec& spec, int iteration) -> size_t {
    const uint64_t h = content_hash_u64(spec);
    auto it = seen.find(h);
    if (it != seen.end()) return it->second;
    const size_t idx = admit(evaluate_candidate(spec, data, constraints, cfg),
                             iteration);
    seen.emplace(h, idx);
    return idx;
  };

  eval_or_reuse(seed_spec, 0);

  // ranked parent pool: feasible first, then by U
  auto rank_population = [&]() {
    std::vector<size_t> idx(res.log.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      const CandidateRecord& ra = res.log[a];
      const CandidateRecord& rb = res.log[b];
      if (ra.feasible != rb.feasible) return ra.feasible;
      return ra.u_score > rb.u_score;
    });
    if (static_cast<int>(idx.size()) > cfg.population)
      idx.resize(cfg.population);
    return idx;
  };

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    const std::vector<size_t> parents = rank_population();
    for (int j = 0; j < cfg.population; ++j) {
      const size_t pick = rng.uniform() < cfg.parent_eps
                              ? rng.below(res.log.size())
                              : parents[j % parents.size()];
      const ArchSpec parent = res.log[pick].spec;
      const ArchSpec child = mutate(parent, rng, cfg.rates);
      eval_or_reuse(child, iter);
    }
  }

  for (const auto& r : res.archive)
    if (indicator(r, constraints) != 1)
      throw std::logic_error("explore: archive member violates the indicator");
  if (!res.best) {
    for (const auto& r : res.log)
      if (!res.best_infeasible || r.u_score > res.best_infeasible->u_score)
        res.best_infeasible = r;
  }
  return res;
}

}  // namespace nanonet
