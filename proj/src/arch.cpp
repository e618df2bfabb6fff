#include "nanonet/arch.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include <nlohmann/json.hpp>

#include "nanonet/rng.hpp"

namespace nanonet {

using ordered_json = nlohmann::ordered_json;

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::conv: return "conv";
    case NodeKind::relu: return "relu";
    case NodeKind::add: return "add";
    case NodeKind::concat: return "concat";
    case NodeKind::global_avg_pool: return "global_avg_pool";
    case NodeKind::dense: return "dense";
    case NodeKind::softmax_head: return "softmax_head";
  }
  return "?";
}

NodeKind node_kind_from_string(const std::string& s) {
  if (s == "conv") return NodeKind::conv;
  if (s == "relu") return NodeKind::relu;
  if (s == "add") return NodeKind::add;
  if (s == "concat") return NodeKind::concat;
  if (s == "global_avg_pool") return NodeKind::global_avg_pool;
  if (s == "dense") return NodeKind::dense;
  if (s == "softmax_head") return NodeKind::softmax_head;
  throw ParseError("unknown node kind '" + s + "'");
}

const LayerNode* ArchSpec::find(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

namespace {

void check_node_fields(const LayerNode& n) {
  const bool merge = n.kind == NodeKind::add || n.kind == NodeKind::concat;
  if (merge && n.inputs.size() < 2)
    throw GraphError("node '" + n.id + "': " + to_string(n.kind) +
                     " needs >= 2 inputs, has " + std::to_string(n.inputs.size()));
  if (!merge && n.inputs.size() > 1)
    throw GraphError("node '" + n.id + "': " + to_string(n.kind) +
                     " takes exactly 1 input, has " +
                     std::to_string(n.inputs.size()));
  if (n.kind == NodeKind::conv) {
    if (n.kernel[0] < 1 || n.kernel[1] < 1)
      throw GraphError("node '" + n.id + "': conv kernel must be >= 1x1");
    if (n.out_channels < 1)
      throw GraphError("node '" + n.id + "': conv out_channels must be >= 1");
    if (n.stride[0] < 1 || n.stride[1] < 1)
      throw GraphError("node '" + n.id + "': conv stride must be >= 1");
    if (n.padding == Padding::same && (n.kernel[0] % 2 == 0 || n.kernel[1] % 2 == 0))
      throw GraphError("node '" + n.id +
                       "': 'same' padding requires odd kernel dims");
  } else if (n.kind == NodeKind::dense) {
    if (n.out_channels < 1)
      throw GraphError("node '" + n.id + "': dense out_channels must be >= 1");
  }
}

}  // namespace

std::vector<std::string> validate_and_toposort(const ArchSpec& spec) {
  if (spec.nodes.empty()) throw GraphError("spec '" + spec.name + "' has no nodes");
  if (spec.input_shape[0] < 1 || spec.input_shape[1] < 1 || spec.input_shape[2] < 1)
    throw GraphError("input_shape dims must be >= 1");

  std::unordered_map<std::string, const LayerNode*> byid;
  for (const auto& n : spec.nodes) {
    if (n.id.empty()) throw GraphError("empty node id");
    if (!byid.emplace(n.id, &n).second)
      throw GraphError("duplicate node id '" + n.id + "'");
  }

  int sources = 0;
  for (const auto& n : spec.nodes) {
    check_node_fields(n);
    if (n.inputs.empty()) {
      ++sources;
      if (n.kind == NodeKind::add || n.kind == NodeKind::concat)
        throw GraphError("node '" + n.id + "': merge node cannot be the source");
    }
    for (const auto& in : n.inputs) {
      if (!byid.count(in))
        throw GraphError("dangling edge: node '" + n.id +
                         "' references missing node '" + in + "'");
      if (in == n.id) throw GraphError("node '" + n.id + "' feeds itself");
    }
  }
  if (sources != 1)
    throw GraphError("expected exactly 1 source node, found " +
                     std::to_string(sources));
  auto out = byid.find(spec.output_node);
  if (out == byid.end())
    throw GraphError("output_node '" + spec.output_node + "' does not exist");
  if (out->second->kind != NodeKind::softmax_head)
    throw GraphError("output_node '" + spec.output_node +
                     "' must be a softmax_head, is " +
                     to_string(out->second->kind));

  // Kahn's algorithm over declaration order for a stable result.
  std::unordered_map<std::string, int> remaining;
  std::unordered_map<std::string, std::vector<std::string>> consumers;
  for (const auto& n : spec.nodes) {
    remaining[n.id] = static_cast<int>(n.inputs.size());
    for (const auto& in : n.inputs) consumers[in].push_back(n.id);
  }
  std::deque<std::string> ready;
  for (const auto& n : spec.nodes)
    if (n.inputs.empty()) ready.push_back(n.id);
  std::vector<std::string> order;
  order.reserve(spec.nodes.size());
  while (!ready.empty()) {
    std::string id = ready.front();
    ready.pop_front();
    order.push_back(id);
    for (const auto& c : consumers[id])
      if (--remaining[c] == 0) ready.push_back(c);
  }
  if (order.size() != spec.nodes.size()) {
    for (const auto& n : spec.nodes)
      if (remaining[n.id] > 0)
        throw GraphError("cycle detected involving node '" + n.id + "'");
  }
  return order;
}

namespace {

int same_pad(int in, int k, int s) {
  const int target = (in + s - 1) / s;
  const int total = std::max(0, (target - 1) * s + k - in);
  return (total + 1) / 2;
}

}  // namespace

ShapeInfo infer_shapes(const ArchSpec& spec) {
  const auto order = validate_and_toposort(spec);
  std::unordered_map<std::string, const LayerNode*> byid;
  for (const auto& n : spec.nodes) byid[n.id] = &n;

  ShapeInfo info;
  const NodeShape input{spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  for (const auto& id : order) {
    const LayerNode& n = *byid[id];
    std::vector<NodeShape> in_shapes;
    if (n.inputs.empty()) {
      in_shapes.push_back(input);
    } else {
      for (const auto& in : n.inputs) in_shapes.push_back(info.shapes.at(in));
    }
    NodeShape out;
    switch (n.kind) {
      case NodeKind::conv: {
        const NodeShape& s = in_shapes[0];
        int ph = 0, pw = 0;
        if (n.padding == Padding::same) {
          ph = same_pad(s.h, n.kernel[0], n.stride[0]);
          pw = same_pad(s.w, n.kernel[1], n.stride[1]);
        }
        const int ho = (s.h + 2 * ph - n.kernel[0]) / n.stride[0] + 1;
        const int wo = (s.w + 2 * pw - n.kernel[1]) / n.stride[1] + 1;
        if (ho < 1 || wo < 1)
          throw GraphError("node '" + n.id + "': output spatial dims " +
                           std::to_string(ho) + "x" + std::to_string(wo) +
                           " < 1 for input " + std::to_string(s.h) + "x" +
                           std::to_string(s.w));
        info.pads[n.id] = {ph, pw};
        out = {n.out_channels, ho, wo};
        break;
      }
      case NodeKind::relu:
        out = in_shapes[0];
        break;
      case NodeKind::add: {
        out = in_shapes[0];
        for (size_t i = 1; i < in_shapes.size(); ++i)
          if (!(in_shapes[i] == out))
            throw GraphError("node '" + n.id + "': add inputs '" + n.inputs[0] +
                             "' and '" + n.inputs[i] + "' have different shapes");
        break;
      }
      case NodeKind::concat: {
        out = in_shapes[0];
        for (size_t i = 1; i < in_shapes.size(); ++i) {
          if (in_shapes[i].h != out.h || in_shapes[i].w != out.w)
            throw GraphError("node '" + n.id + "': concat inputs '" +
                             n.inputs[0] + "' and '" + n.inputs[i] +
                             "' have different spatial dims");
          out.c += in_shapes[i].c;
        }
        break;
      }
      case NodeKind::global_avg_pool:
        out = {in_shapes[0].c, 1, 1};
        break;
      case NodeKind::dense:
        if (in_shapes[0].h != 1 || in_shapes[0].w != 1)
          throw GraphError("node '" + n.id + "': dense input must be 1x1 spatial");
        out = {n.out_channels, 1, 1};
        break;
      case NodeKind::softmax_head:
        if (in_shapes[0].h != 1 || in_shapes[0].w != 1)
          throw GraphError("node '" + n.id + "': softmax_head input must be 1x1 spatial");
        out = in_shapes[0];
        break;
    }
    info.shapes[id] = out;
  }
  return info;
}

ArchStats count_params(const ArchSpec& spec) {
  const auto order = validate_and_toposort(spec);
  const auto info = infer_shapes(spec);
  std::unordered_map<std::string, const LayerNode*> byid;
  for (const auto& n : spec.nodes) byid[n.id] = &n;

  ArchStats stats;
  for (const auto& id : order) {
    const LayerNode& n = *byid[id];
    NodeStats ns{id, 0, 0};
    if (n.kind == NodeKind::conv) {
      const NodeShape in =
          n.inputs.empty()
              ? NodeShape{spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]}
              : info.shapes.at(n.inputs[0]);
      const NodeShape out = info.shapes.at(id);
      const long long kk = static_cast<long long>(n.kernel[0]) * n.kernel[1];
      ns.params = kk * in.c * n.out_channels + n.out_channels;
      ns.macs = kk * in.c * n.out_channels * out.h * out.w;
    } else if (n.kind == NodeKind::dense) {
      const NodeShape in = info.shapes.at(n.inputs[0]);
      ns.params = static_cast<long long>(in.c) * n.out_channels + n.out_channels;
      ns.macs = static_cast<long long>(in.c) * n.out_channels;
    }
    stats.param_count += ns.params;
    stats.mac_count += ns.macs;
    stats.per_node.push_back(std::move(ns));
  }
  return stats;
}

namespace {

ordered_json node_to_json(const LayerNode& n) {
  ordered_json j;
  j["id"] = n.id;
  j["kind"] = to_string(n.kind);
  if (n.kind == NodeKind::conv) {
    j["kernel"] = {n.kernel[0], n.kernel[1]};
    j["out_channels"] = n.out_channels;
    j["stride"] = {n.stride[0], n.stride[1]};
    j["padding"] = n.padding == Padding::same ? "same" : "valid";
  } else if (n.kind == NodeKind::dense) {
    j["out_channels"] = n.out_channels;
  }
  j["inputs"] = n.inputs;
  return j;
}

[[noreturn]] void bad_key(const std::string& where, const std::string& key) {
  throw ParseError(where + ": unknown key '" + key + "'");
}

void require_keys(const ordered_json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) bad_key(where, it.key());
}

std::array<int, 2> int_pair(const ordered_json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() ||
      !j[1].is_number_integer())
    throw ParseError(where + ": expected a pair of integers");
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

std::string serialize(const ArchSpec& spec) {
  ordered_json j;
  j["v"] = 1;
  j["name"] = spec.name;
  j["input_shape"] = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  j["nodes"] = ordered_json::array();
  for (const auto& n : spec.nodes) j["nodes"].push_back(node_to_json(n));
  j["output_node"] = spec.output_node;
  return j.dump(2) + "\n";
}

ArchSpec deserialize(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("top level: expected an object");
  require_keys(j, "top level", {"v", "name", "input_shape", "nodes", "output_node"});
  for (const char* key : {"v", "name", "input_shape", "nodes", "output_node"})
    if (!j.contains(key))
      throw ParseError(std::string("top level: missing key '") + key + "'");
  if (!j["v"].is_number_integer() || j["v"].get<int>() != 1)
    throw ParseError("top level: unsupported version, expected \"v\": 1");

  ArchSpec spec;
  spec.name = j["name"].get<std::string>();
  if (!j["input_shape"].is_array() || j["input_shape"].size() != 3)
    throw ParseError("input_shape: expected [C, H, W]");
  for (int i = 0; i < 3; ++i)
    spec.input_shape[i] = j["input_shape"][i].get<int>();
  if (!j["nodes"].is_array()) throw ParseError("nodes: expected an array");

  std::set<std::string> seen;
  for (size_t i = 0; i < j["nodes"].size(); ++i) {
    const ordered_json& nj = j["nodes"][i];
    const std::string where = "nodes[" + std::to_string(i) + "]";
    if (!nj.is_object()) throw ParseError(where + ": expected an object");
    for (const char* key : {"id", "kind", "inputs"})
      if (!nj.contains(key))
        throw ParseError(where + ": missing key '" + key + "'");

    LayerNode n;
    n.id = nj["id"].get<std::string>();
    if (!seen.insert(n.id).second)
      throw ParseError(where + ": duplicate node id '" + n.id + "'");
    try {
      n.kind = node_kind_from_string(nj["kind"].get<std::string>());
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    n.inputs = nj["inputs"].get<std::vector<std::string>>();

    if (n.kind == NodeKind::conv) {
      require_keys(nj, where, {"id", "kind", "kernel", "out_channels", "stride",
                               "padding", "inputs"});
      for (const char* key : {"kernel", "out_channels", "stride", "padding"})
        if (!nj.contains(key))
          throw ParseError(where + ": conv node missing key '" + key + "'");
      n.kernel = int_pair(nj["kernel"], where + ".kernel");
      n.out_channels = nj["out_channels"].get<int>();
      n.stride = int_pair(nj["stride"], where + ".stride");
      const std::string pad = nj["padding"].get<std::string>();
      if (pad == "same")
        n.padding = Padding::same;
      else if (pad == "valid")
        n.padding = Padding::valid;
      else
        throw ParseError(where + ".padding: expected 'same' or 'valid', got '" +
                         pad + "'");
    } else if (n.kind == NodeKind::dense) {
      require_keys(nj, where, {"id", "kind", "out_channels", "inputs"});
      if (!nj.contains("out_channels"))
        throw ParseError(where + ": dense node missing key 'out_channels'");
      n.out_channels = nj["out_channels"].get<int>();
    } else {
      require_keys(nj, where, {"id", "kind", "inputs"});
    }
    spec.nodes.push_back(std::move(n));
  }
  spec.output_node = j["output_node"].get<std::string>();
  return spec;
}

uint64_t content_hash_u64(const ArchSpec& spec) {
  const ordered_json j = ordered_json::parse(serialize(spec));
  return fnv1a64(j.dump());  // canonical: no whitespace, preserved key order
}

std::string content_hash(const ArchSpec& spec) {
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx",
           static_cast<unsigned long long>(content_hash_u64(spec)));
  return buf;
}

namespace {

class Builder {
 public:
  explicit Builder(ArchSpec& spec) : spec_(spec) {}

  std::string conv(const std::string& id, const std::string& input, int k,
                   int out_channels, int stride = 1) {
    LayerNode n;
    n.id = id;
    n.kind = NodeKind::conv;
    n.kernel = {k, k};
    n.out_channels = out_channels;
    n.stride = {stride, stride};
    n.padding = Padding::same;
    if (!input.empty()) n.inputs = {input};
    spec_.nodes.push_back(std::move(n));
    return id;
  }

  std::string unary(NodeKind kind, const std::string& id, const std::string& input) {
    LayerNode n;
    n.id = id;
    n.kind = kind;
    n.inputs = {input};
    spec_.nodes.push_back(std::move(n));
    return id;
  }

  std::string merge(NodeKind kind, const std::string& id,
                    std::vector<std::string> inputs) {
    LayerNode n;
    n.id = id;
    n.kind = kind;
    n.inputs = std::move(inputs);
    spec_.nodes.push_back(std::move(n));
    return id;
  }

  std::string dense(const std::string& id, const std::string& input, int out) {
    LayerNode n;
    n.id = id;
    n.kind = NodeKind::dense;
    n.out_channels = out;
    n.inputs = {input};
    spec_.nodes.push_back(std::move(n));
    return id;
  }

  // conv3x3 -> relu -> conv3x3 -> add(identity) -> relu
  std::string res_block(const std::string& tag, const std::string& input, int c) {
    auto c1 = conv(tag + "_conv1", input, 3, c);
    auto r1 = unary(NodeKind::relu, tag + "_relu1", c1);
    auto c2 = conv(tag + "_conv2", r1, 3, c);
    auto a = merge(NodeKind::add, tag + "_add", {input, c2});
    return unary(NodeKind::relu, tag + "_out", a);
  }

  // Residual stage with a concat-fed 1x1 mixer between its two blocks; the
  // mixer output is both the second block's path input and a skip edge into
  // that block's merge.
  std::string mixer_stage(const std::string& tag, const std::string& input, int c) {
    auto c1 = conv(tag + "b1_conv1", input, 3, c);
    auto r1 = unary(NodeKind::relu, tag + "b1_relu1", c1);
    auto c2 = conv(tag + "b1_conv2", r1, 3, c);
    auto a1 = merge(NodeKind::add, tag + "b1_add", {input, c2});
    auto ar1 = unary(NodeKind::relu, tag + "b1_out", a1);
    auto cat = merge(NodeKind::concat, tag + "_cat", {r1, ar1});
    auto mix = conv(tag + "_mix", cat, 1, c);
    auto c3 = conv(tag + "b2_conv1", mix, 3, c);
    auto r3 = unary(NodeKind::relu, tag + "b2_relu1", c3);
    auto c4 = conv(tag + "b2_conv2", r3, 3, c);
    auto a2 = merge(NodeKind::add, tag + "b2_add", {mix, c4});
    return unary(NodeKind::relu, tag + "b2_out", a2);
  }

 private:
  ArchSpec& spec_;
};

}  // namespace

ArchSpec build_reference(ReferenceVariant variant, int input_hw) {
  const bool a_like = variant == ReferenceVariant::nano_a_like;
  ArchSpec spec;
  spec.name = a_like ? "nano-a-like" : "nano-b-like";
  spec.input_shape = {1, input_hw, input_hw};

  // Channel plans land the parameter totals near the published budgets:
  // 14/28/48 -> 137,463 and 16/32/64 + second stage-1 block -> 228,071.
  const int c1 = a_like ? 16 : 14;
  const int c2 = a_like ? 32 : 28;
  const int c3 = a_like ? 64 : 48;

  Builder b(spec);
  auto stem = b.conv("stem", "", 3, c1);
  auto x = b.unary(NodeKind::relu, "stem_relu", stem);
  x = b.res_block("s1b1", x, c1);
  if (a_like) x = b.res_block("s1b2", x, c1);

  auto d1 = b.conv("down1", x, 3, c2, 2);
  x = b.unary(NodeKind::relu, "down1_relu", d1);
  x = b.mixer_stage("s2", x, c2);

  auto d2 = b.conv("down2", x, 3, c3, 2);
  x = b.unary(NodeKind::relu, "down2_relu", d2);
  x = b.mixer_stage("s3", x, c3);

  x = b.unary(NodeKind::global_avg_pool, "gap", x);
  x = b.dense("fc", x, 7);
  spec.output_node = b.unary(NodeKind::softmax_head, "head", x);
  return spec;
}

}  // namespace nanonet
