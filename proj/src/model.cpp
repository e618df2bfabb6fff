#include "nanonet/model.hpp"

#include <cmath>

#include "nanonet/rng.hpp"

namespace nanonet {

Network Network::build(const ArchSpec& spec, uint64_t init_seed) {
  Network net;
  net.spec_ = spec;
  net.order_ = validate_and_toposort(spec);
  ShapeInfo info = infer_shapes(spec);
  net.shapes_ = std::move(info.shapes);
  net.pads_ = std::move(info.pads);
  net.index();

  // Seed each node's stream independently so init does not depend on map
  // iteration order.
  int node_idx = 0;
  for (const auto& id : net.order_) {
    const LayerNode& n = *net.byid_.at(id);
    ++node_idx;
    if (n.kind != NodeKind::conv && n.kind != NodeKind::dense) continue;
    const NodeShape in = n.inputs.empty()
                             ? NodeShape{spec.input_shape[0], spec.input_shape[1],
                                         spec.input_shape[2]}
                             : net.shapes_.at(n.inputs[0]);
    LayerParams p;
    int fan_in;
    if (n.kind == NodeKind::conv) {
      p.weights = Tensor(n.out_channels, in.c, n.kernel[0], n.kernel[1]);
      fan_in = in.c * n.kernel[0] * n.kernel[1];
    } else {
      p.weights = Tensor(n.out_channels, in.c, 1, 1);
      fan_in = in.c;
    }
    Rng rng(derive_seed(init_seed, {0x1217u, static_cast<uint64_t>(node_idx)}));
    const double stddev = std::sqrt(2.0 / fan_in);
    for (float& w : p.weights.data) w = static_cast<float>(rng.normal(0.0, stddev));
    p.bias.assign(n.out_channels, 0.0f);
    net.params_.emplace(id, std::move(p));
  }
  return net;
}

void Network::index() {
  byid_.clear();
  for (const auto& n : spec_.nodes) byid_[n.id] = &n;
  const LayerNode& head = *byid_.at(spec_.output_node);
  logits_node_ = head.inputs.at(0);
}

int Network::num_classes() const { return shapes_.at(logits_node_).c; }

size_t Network::param_scalar_count() const {
  size_t total = 0;
  for (const auto& [id, p] : params_) total += p.scalar_count();
  return total;
}

Tensor Network::run_node(const LayerNode& n,
                         const std::vector<const Tensor*>& ins) const {
  switch (n.kind) {
    case NodeKind::conv: {
      const auto& pad = pads_.at(n.id);
      return conv2d_forward(*ins[0], params_.at(n.id),
                            Stride{n.stride[0], n.stride[1]},
                            Pad{pad[0], pad[1]}, "node '" + n.id + "'");
    }
    case NodeKind::relu:
      return relu_forward(*ins[0]);
    case NodeKind::add: {
      Tensor acc = add_merge(*ins[0], *ins[1], "node '" + n.id + "'");
      for (size_t i = 2; i < ins.size(); ++i)
        acc = add_merge(acc, *ins[i], "node '" + n.id + "'");
      return acc;
    }
    case NodeKind::concat:
      return concat_channels(ins, "node '" + n.id + "'");
    case NodeKind::global_avg_pool:
      return global_avg_pool(*ins[0]);
    case NodeKind::dense:
      return dense_forward(*ins[0], params_.at(n.id), "node '" + n.id + "'");
    case NodeKind::softmax_head:
      return softmax(*ins[0]);
  }
  throw ValueError("unreachable node kind");
}

ActivationMap Network::forward_all(const Tensor& input) const {
  if (input.c() != spec_.input_shape[0] || input.h() != spec_.input_shape[1] ||
      input.w() != spec_.input_shape[2])
    throw ShapeError("network input " + input.shape_str() +
                     " does not match spec input shape " +
                     std::to_string(spec_.input_shape[0]) + "x" +
                     std::to_string(spec_.input_shape[1]) + "x" +
                     std::to_string(spec_.input_shape[2]));
  ActivationMap acts;
  acts.reserve(order_.size());
  for (const auto& id : order_) {
    const LayerNode& n = *byid_.at(id);
    std::vector<const Tensor*> ins;
    if (n.inputs.empty())
      ins.push_back(&input);
    else
      for (const auto& in : n.inputs) ins.push_back(&acts.at(in));
    acts.emplace(id, run_node(n, ins));
  }
  return acts;
}

Tensor Network::probs(const Tensor& input) const {
  auto acts = forward_all(input);
  return std::move(acts.at(spec_.output_node));
}

GradMap Network::backward(const ActivationMap& acts, const Tensor& input,
                          const Tensor& grad_logits) const {
  std::unordered_map<std::string, Tensor> outgrads;
  outgrads.emplace(logits_node_, grad_logits);
  GradMap pgrads;

  auto accumulate = [&outgrads](const std::string& id, Tensor g) {
    auto it = outgrads.find(id);
    if (it == outgrads.end()) {
      outgrads.emplace(id, std::move(g));
    } else {
      Tensor& acc = it->second;
      for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
    }
  };

  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const LayerNode& n = *byid_.at(*it);
    if (n.kind == NodeKind::softmax_head) continue;  // loss grad enters below it
    auto git = outgrads.find(n.id);
    if (git == outgrads.end()) continue;  // no path to the loss
    const Tensor& gy = git->second;
    const Tensor& x0 = n.inputs.empty() ? input : acts.at(n.inputs[0]);

    switch (n.kind) {
      case NodeKind::conv: {
        const auto& pad = pads_.at(n.id);
        ConvGrads<float> g =
            conv2d_backward(x0, params_.at(n.id), gy,
                            Stride{n.stride[0], n.stride[1]},
                            Pad{pad[0], pad[1]}, "node '" + n.id + "'");
        pgrads[n.id] = LayerParams{std::move(g.weights), std::move(g.bias)};
        if (!n.inputs.empty()) accumulate(n.inputs[0], std::move(g.input));
        break;
      }
      case NodeKind::relu:
        if (!n.inputs.empty()) accumulate(n.inputs[0], relu_backward(x0, gy));
        break;
      case NodeKind::add:
        for (const auto& in : n.inputs) accumulate(in, gy);
        break;
      case NodeKind::concat: {
        std::vector<int> channels;
        for (const auto& in : n.inputs) channels.push_back(shapes_.at(in).c);
        auto parts = concat_channels_backward(gy, channels);
        for (size_t i = 0; i < n.inputs.size(); ++i)
          accumulate(n.inputs[i], std::move(parts[i]));
        break;
      }
      case NodeKind::global_avg_pool: {
        accumulate(n.inputs[0], global_avg_pool_backward(x0.shape, gy));
        break;
      }
      case NodeKind::dense: {
        ConvGrads<float> g =
            dense_backward(x0, params_.at(n.id), gy, "node '" + n.id + "'");
        pgrads[n.id] = LayerParams{std::move(g.weights), std::move(g.bias)};
        accumulate(n.inputs[0], std::move(g.input));
        break;
      }
      case NodeKind::softmax_head:
        break;
    }
  }
  return pgrads;
}

}  // namespace nanonet
