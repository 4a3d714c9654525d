#include "mhsum/num/graph.hpp"

#include <stdexcept>

namespace mhsum::num {

namespace {
thread_local Graph* g_active = nullptr;
}

void Graph::record(Node node) { nodes_.push_back(std::move(node)); }

void Graph::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  const auto& root_impl = root.impl();
  bool found = false;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output == root_impl) {
      found = true;
      break;
    }
  }
  if (!found) throw std::invalid_argument("backward: root was not produced on this graph");

  root_impl->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
  for (const auto& node : nodes_) {
    for (const auto& in : node.inputs) {
      if (in->is_leaf && in->requires_grad) in->grad_buffer();
    }
  }
}

GraphScope::GraphScope(Graph& graph) : previous_(g_active) { g_active = &graph; }

GraphScope::~GraphScope() { g_active = previous_; }

Graph* active_graph() { return g_active; }

void backward(const Tensor& root) {
  if (!g_active) throw std::logic_error("backward: no active graph");
  g_active->backward(root);
}

}  // namespace mhsum::num
