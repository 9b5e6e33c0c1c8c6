#pragma once

#include "corrlab/matrix.hpp"
#include "corrlab/params.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace corrlab::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the (acyclic) computation graph. Backward visits each node
/// exactly once in reverse topological order.
struct Node {
    Matrix value;
    Matrix grad;  // allocated on first accumulation during backward
    bool needs_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, pushes into parents
    Parameter* param = nullptr;           // set for store-bound leaves

    bool has_grad() const { return grad.rows() == value.rows() && grad.cols() == value.cols(); }
};

/// Collects the distance to the nearest non-smooth point (ReLU zero, max-pool
/// tie) seen during a forward pass; finite-difference harnesses resample
/// inputs that land within 1e-3 of a kink.
class KinkScope {
public:
    KinkScope();
    ~KinkScope();
    KinkScope(const KinkScope&) = delete;
    KinkScope& operator=(const KinkScope&) = delete;
    double min_distance() const { return min_distance_; }

    static void report(double distance);

private:
    double min_distance_;
    KinkScope* previous_;
};

NodePtr make_node(Matrix value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop, const char* what);
void accumulate_grad(Node& node, const Matrix& g);

NodePtr constant(Matrix v);
NodePtr leaf(Matrix v);
NodePtr param(ParameterStore& store, const std::string& name);

NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr hadamard(NodePtr a, NodePtr b);
NodePtr scale(NodePtr a, double s);
NodePtr matmul(NodePtr a, NodePtr b, bool trans_a = false, bool trans_b = false);
NodePtr transpose(NodePtr a);

NodePtr relu(NodePtr x);
NodePtr gelu(NodePtr x);
NodePtr tanh_op(NodePtr x);
NodePtr sigmoid(NodePtr x);
NodePtr recip(NodePtr x);

/// Row-wise softmax with per-row max subtraction for stability.
NodePtr softmax_rows(NodePtr x);
/// Per-channel standardization across the N rows (epsilon 1e-5). N >= 2.
NodePtr context_norm(NodePtr x);
/// Per-row standardization across channels (epsilon 1e-5).
NodePtr layer_norm_rows(NodePtr x);

NodePtr mean_rows(NodePtr x);     // 1 x C column means
NodePtr max_rows(NodePtr x);      // 1 x C column maxima, lowest-index ties
NodePtr col_sum_rows(NodePtr x);  // 1 x C column sums
NodePtr broadcast_rows(NodePtr rv, int n_rows);
NodePtr add_rowvec(NodePtr x, NodePtr rv);
NodePtr mul_rowvec(NodePtr x, NodePtr rv);
NodePtr mul_colvec(NodePtr x, NodePtr cv);
NodePtr mul_scalar_node(NodePtr x, NodePtr s);

NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr gather_rows(NodePtr x, std::vector<int> row_indices);
NodePtr slice_block(NodePtr x, int r0, int c0, int rows, int cols);
/// Elementwise min(x, cap); subgradient 0 on the capped side.
NodePtr clamp_max(NodePtr x, double cap);
NodePtr sum_all(NodePtr x);
NodePtr mean_all(NodePtr x);

/// Class-rebalanced binary cross entropy from logits (N x 1). `labels` holds
/// 0/1; the positive class is weighted by pos_weight. Returns a scalar node.
NodePtr bce_with_logits(NodePtr logits, const Matrix& labels, double pos_weight);

/// Runs reverse-mode differentiation from a scalar output. Store gradients
/// are zeroed first, so parameters unreachable from `output` end at zero.
void backward(const NodePtr& output, ParameterStore& store);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for the gradient of `build` (a graph-valued scalar function) at `point`.
double finite_diff_check(const std::function<NodePtr(NodePtr)>& build, const Matrix& point,
                         double step);

/// Same check against every parameter of `store` reachable from the scalar
/// graph built by `build`. If probes_per_param > 0, only that many coordinates
/// per parameter are probed (chosen by `rng`); otherwise all coordinates.
double finite_diff_check_params(const std::function<NodePtr()>& build, ParameterStore& store,
                                double step, int probes_per_param = -1, Rng* rng = nullptr);

}  // namespace corrlab::ad
