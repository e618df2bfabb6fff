#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace nanonet {

/// Malformed architecture document (syntax, unknown keys/kinds, duplicate
/// ids); message carries a location.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structural graph defect: cycle, dangling edge, bad arity, bad head.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NodeKind { conv, relu, add, concat, global_avg_pool, dense, softmax_head };

const char* to_string(NodeKind k);
NodeKind node_kind_from_string(const std::string& s);  // throws ParseError

enum class Padding { same, valid };

struct LayerNode {
  std::string id;
  NodeKind kind = NodeKind::relu;
  std::array<int, 2> kernel{0, 0};   // conv only (kh, kw)
  int out_channels = 0;              // conv and dense
  std::array<int, 2> stride{1, 1};   // conv only
  Padding padding = Padding::same;   // conv only
  std::vector<std::string> inputs;   // empty list marks the graph source

  bool operator==(const LayerNode&) const = default;
};

/// DAG description of one network. Nodes with an empty input list read the
/// network input; the output node must be a softmax_head.
struct ArchSpec {
  std::string name;
  std::array<int, 3> input_shape{1, 48, 48};  // C, H, W
  std::vector<LayerNode> nodes;
  std::string output_node;

  bool operator==(const ArchSpec&) const = default;
  const LayerNode* find(const std::string& id) const;
};

struct NodeShape {
  int c = 0, h = 0, w = 0;
  bool operator==(const NodeShape&) const = default;
};

struct ShapeInfo {
  std::unordered_map<std::string, NodeShape> shapes;
  // resolved explicit padding for conv nodes (same/valid -> ints)
  std::unordered_map<std::string, std::array<int, 2>> pads;
};

struct NodeStats {
  std::string id;
  long long params = 0;
  long long macs = 0;
};

struct ArchStats {
  long long param_count = 0;
  long long mac_count = 0;
  std::vector<NodeStats> per_node;  // topological order
};

/// Kahn toposort plus arity/reference checks. Throws GraphError naming a
/// cycle member or the dangling edge.
std::vector<std::string> validate_and_toposort(const ArchSpec& spec);

/// Per-node output shapes with 'same'/'valid' resolved to explicit ints.
/// 'same' preserves H,W at stride 1 and takes ceil(in/s) at stride s.
ShapeInfo infer_shapes(const ArchSpec& spec);

ArchStats count_params(const ArchSpec& spec);

std::string serialize(const ArchSpec& spec);
ArchSpec deserialize(const std::string& text);

/// FNV-1a64 of the canonical serialization, rendered as 16 hex chars.
std::string content_hash(const ArchSpec& spec);
uint64_t content_hash_u64(const ArchSpec& spec);

enum class ReferenceVariant { nano_a_like, nano_b_like };

/// Reconstructed compact reference architectures: residual stages at
/// 48/24/12 with two concat-fed 1x1 mixers whose outputs also skip ahead
/// to their stage's final merge.
ArchSpec build_reference(ReferenceVariant variant, int input_hw = 48);

}  // namespace nanonet
