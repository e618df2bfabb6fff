#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "nanonet/arch.hpp"
#include "nanonet/ops.hpp"
#include "nanonet/tensor.hpp"

namespace nanonet {

using ActivationMap = std::unordered_map<std::string, Tensor>;
using GradMap = std::unordered_map<std::string, LayerParams>;

/// Executable network: a validated ArchSpec plus one LayerParams per conv
/// and dense node. Immutable shape metadata, mutable weights.
class Network {
 public:
  /// Validates, infers shapes and allocates He-initialized parameters
  /// (fan-in scaled Gaussian, zero bias) from the given seed.
  static Network build(const ArchSpec& spec, uint64_t init_seed);

  const ArchSpec& spec() const { return spec_; }
  const std::vector<std::string>& order() const { return order_; }
  const NodeShape& shape(const std::string& id) const { return shapes_.at(id); }
  const LayerNode& node(const std::string& id) const { return *byid_.at(id); }

  /// Node whose activation holds the classifier logits (the softmax_head's
  /// single input).
  const std::string& logits_node() const { return logits_node_; }
  int num_classes() const;

  std::unordered_map<std::string, LayerParams>& params() { return params_; }
  const std::unordered_map<std::string, LayerParams>& params() const {
    return params_;
  }
  size_t param_scalar_count() const;

  /// Full forward pass retaining every node activation (training path).
  ActivationMap forward_all(const Tensor& input) const;

  /// Inference: softmax probabilities at the head, (N,K,1,1).
  Tensor probs(const Tensor& input) const;

  /// Backward from a gradient at the logits node; returns parameter
  /// gradients keyed by node id.
  GradMap backward(const ActivationMap& acts, const Tensor& input,
                   const Tensor& grad_logits) const;

 private:
  void index();
  Tensor run_node(const LayerNode& n, const std::vector<const Tensor*>& ins) const;

  ArchSpec spec_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, NodeShape> shapes_;
  std::unordered_map<std::string, std::array<int, 2>> pads_;
  std::unordered_map<std::string, LayerParams> params_;
  std::unordered_map<std::string, const LayerNode*> byid_;
  std::string logits_node_;
};

}  // namespace nanonet
