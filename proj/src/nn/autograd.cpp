#include "dutavc/nn/autograd.hpp"

#include <sstream>
#include <unordered_set>

#include "dutavc/error.hpp"

namespace dutavc::nn {
namespace {
thread_local bool g_grad_enabled = true;
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  t.mat(static_cast<int>(m.rows()), static_cast<int>(m.cols())) = m;
  return t;
}

Eigen::MatrixXd Tensor::to_matrix() const {
  DUTAVC_CHECK(rank() == 2, "Tensor::to_matrix: rank-2 tensor required, got " + shape_string());
  return mat(shape[0], shape[1]);
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (auto& p : parents) node.parents.push_back(p.node());
  node.backward = std::move(backward);
  return out;
}

void backward(const Var& scalar) {
  DUTAVC_CHECK(scalar.numel() == 1, "backward: expected a scalar");
  if (!scalar.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{scalar.node().get(), 0}};
  visited.insert(scalar.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  scalar.node()->grad_buffer().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.numel() == n->value.numel()) n->backward(*n);
  }
  // Intermediate gradients are no longer needed.
  for (Node* n : order)
    if (n->backward) n->grad = Tensor();
}

}  // namespace dutavc::nn
