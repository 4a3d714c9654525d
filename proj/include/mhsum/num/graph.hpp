#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mhsum/num/tensor.hpp"

namespace mhsum::num {

/// Define-by-run tape. Ops append a node whenever a graph is active on the
/// calling thread and at least one input requires a gradient; nodes are
/// therefore stored in topological order.
class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    // Reads output->grad and accumulates into the inputs that need it.
    std::function<void()> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(Node node);
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and runs the tape in reverse. Every leaf
  /// input that requires a gradient ends up with an allocated grad.
  void backward(const Tensor& root);

 private:
  std::vector<Node> nodes_;
};

/// Makes a graph active on the current thread for the scope's lifetime.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

Graph* active_graph();

/// Backward pass on the thread's active graph.
void backward(const Tensor& root);

}  // namespace mhsum::num
