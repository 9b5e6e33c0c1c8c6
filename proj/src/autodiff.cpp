#include "corrlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace corrlab::ad {

namespace {

thread_local KinkScope* g_kink_scope = nullptr;

constexpr double kNormEps = 1e-5;

bool any_needs_grad(const std::vector<NodePtr>& parents) {
    for (const auto& p : parents) {
        if (p && p->needs_grad) return true;
    }
    return false;
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails.
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

KinkScope::KinkScope()
    : min_distance_(std::numeric_limits<double>::infinity()), previous_(g_kink_scope) {
    g_kink_scope = this;
}

KinkScope::~KinkScope() { g_kink_scope = previous_; }

void KinkScope::report(double distance) {
    for (KinkScope* s = g_kink_scope; s != nullptr; s = s->previous_) {
        s->min_distance_ = std::min(s->min_distance_, distance);
    }
}

NodePtr make_node(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> backprop,
                  const char* what) {
    value.require_finite(what);
    auto n = std::make_shared<Node>();
    n->needs_grad = any_needs_grad(parents);
    n->value = std::move(value);
    n->parents = std::move(parents);
    if (n->needs_grad) n->backprop = std::move(backprop);
    return n;
}

void accumulate_grad(Node& node, const Matrix& g) {
    if (!node.needs_grad) return;
    if (!node.has_grad()) {
        node.grad = g;
    } else {
        node.grad = corrlab::add(node.grad, g);
    }
}

NodePtr constant(Matrix v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->needs_grad = false;
    return n;
}

NodePtr leaf(Matrix v) {
    v.require_finite("leaf");
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->needs_grad = true;
    return n;
}

NodePtr param(ParameterStore& store, const std::string& name) {
    Parameter& p = store.get(name);
    auto n = std::make_shared<Node>();
    n->value = p.value;
    n->needs_grad = true;
    n->param = &p;
    return n;
}

NodePtr add(NodePtr a, NodePtr b) {
    Matrix v = corrlab::add(a->value, b->value);
    return make_node(std::move(v), {a, b},
                     [a, b](Node& self) {
                         accumulate_grad(*a, self.grad);
                         accumulate_grad(*b, self.grad);
                     },
                     "add");
}

NodePtr sub(NodePtr a, NodePtr b) {
    Matrix v = corrlab::sub(a->value, b->value);
    return make_node(std::move(v), {a, b},
                     [a, b](Node& self) {
                         accumulate_grad(*a, self.grad);
                         accumulate_grad(*b, corrlab::scale(self.grad, -1.0));
                     },
                     "sub");
}

NodePtr hadamard(NodePtr a, NodePtr b) {
    Matrix v = corrlab::hadamard(a->value, b->value);
    return make_node(std::move(v), {a, b},
                     [a, b](Node& self) {
                         accumulate_grad(*a, corrlab::hadamard(self.grad, b->value));
                         accumulate_grad(*b, corrlab::hadamard(self.grad, a->value));
                     },
                     "hadamard");
}

NodePtr scale(NodePtr a, double s) {
    Matrix v = corrlab::scale(a->value, s);
    return make_node(std::move(v), {a},
                     [a, s](Node& self) { accumulate_grad(*a, corrlab::scale(self.grad, s)); },
                     "scale");
}

NodePtr matmul(NodePtr a, NodePtr b, bool trans_a, bool trans_b) {
    Matrix v = corrlab::matmul(a->value, b->value, trans_a, trans_b);
    return make_node(
        std::move(v), {a, b},
        [a, b, trans_a, trans_b](Node& self) {
            const Matrix& g = self.grad;
            if (a->needs_grad) {
                Matrix da = trans_a ? corrlab::matmul(b->value, g, trans_b, true)
                                    : corrlab::matmul(g, b->value, false, !trans_b);
                accumulate_grad(*a, da);
            }
            if (b->needs_grad) {
                Matrix db = trans_b ? corrlab::matmul(g, a->value, true, trans_a)
                                    : corrlab::matmul(a->value, g, !trans_a, false);
                accumulate_grad(*b, db);
            }
        },
        "matmul");
}

NodePtr transpose(NodePtr a) {
    Matrix v = corrlab::transpose(a->value);
    return make_node(std::move(v), {a},
                     [a](Node& self) { accumulate_grad(*a, corrlab::transpose(self.grad)); },
                     "transpose");
}

NodePtr relu(NodePtr x) {
    Matrix v(x->value.rows(), x->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xv = x->value[i];
        KinkScope::report(std::abs(xv));
        v[i] = xv > 0.0 ? xv : 0.0;
    }
    return make_node(std::move(v), {x},
                     [x](Node& self) {
                         Matrix dx(self.grad.rows(), self.grad.cols());
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                             dx[i] = x->value[i] > 0.0 ? self.grad[i] : 0.0;
                         }
                         accumulate_grad(*x, dx);
                     },
                     "relu");
}

NodePtr gelu(NodePtr x) {
    // Exact form 0.5 x (1 + erf(x / sqrt(2))).
    Matrix v(x->value.rows(), x->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xv = x->value[i];
        v[i] = 0.5 * xv * (1.0 + std::erf(xv * M_SQRT1_2));
    }
    return make_node(std::move(v), {x},
                     [x](Node& self) {
                         Matrix dx(self.grad.rows(), self.grad.cols());
                         constexpr double inv_sqrt_2pi = 0.3989422804014327;
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                             const double xv = x->value[i];
                             const double cdf = 0.5 * (1.0 + std::erf(xv * M_SQRT1_2));
                             const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv * xv);
                             dx[i] = self.grad[i] * (cdf + xv * pdf);
                         }
                         accumulate_grad(*x, dx);
                     },
                     "gelu");
}

NodePtr tanh_op(NodePtr x) {
    Matrix v(x->value.rows(), x->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(x->value[i]);
    auto out = make_node(std::move(v), {x}, nullptr, "tanh");
    if (out->needs_grad) {
        out->backprop = [x](Node& self) {
            Matrix dx(self.grad.rows(), self.grad.cols());
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const double y = self.value[i];
                dx[i] = self.grad[i] * (1.0 - y * y);
            }
            accumulate_grad(*x, dx);
        };
    }
    return out;
}

NodePtr sigmoid(NodePtr x) {
    Matrix v(x->value.rows(), x->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = sigmoid_scalar(x->value[i]);
    auto out = make_node(std::move(v), {x}, nullptr, "sigmoid");
    if (out->needs_grad) {
        out->backprop = [x](Node& self) {
            Matrix dx(self.grad.rows(), self.grad.cols());
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const double y = self.value[i];
                dx[i] = self.grad[i] * y * (1.0 - y);
            }
            accumulate_grad(*x, dx);
        };
    }
    return out;
}

NodePtr recip(NodePtr x) {
    Matrix v(x->value.rows(), x->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / x->value[i];
    return make_node(std::move(v), {x},
                     [x](Node& self) {
                         Matrix dx(self.grad.rows(), self.grad.cols());
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                             const double xv = x->value[i];
                             dx[i] = -self.grad[i] / (xv * xv);
                         }
                         accumulate_grad(*x, dx);
                     },
                     "recip");
}

NodePtr softmax_rows(NodePtr x) {
    const int n = x->value.rows(), c = x->value.cols();
    if (c == 0) throw std::invalid_argument("softmax_rows: empty rows");
    Matrix v(n, c);
    for (int r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) mx = std::max(mx, x->value.at(r, j));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(x->value.at(r, j) - mx);
            v.at(r, j) = e;
            denom += e;
        }
        for (int j = 0; j < c; ++j) v.at(r, j) /= denom;
    }
    auto out = make_node(std::move(v), {x}, nullptr, "softmax_rows");
    if (out->needs_grad) {
        out->backprop = [x](Node& self) {
            const int n = self.value.rows(), c = self.value.cols();
            Matrix dx(n, c);
            for (int r = 0; r < n; ++r) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += self.grad.at(r, j) * self.value.at(r, j);
                for (int j = 0; j < c; ++j) {
                    dx.at(r, j) = self.value.at(r, j) * (self.grad.at(r, j) - dot);
                }
            }
            accumulate_grad(*x, dx);
        };
    }
    return out;
}

namespace {

// Shared machinery for the two standardization ops: normalize over rows per
// channel (context norm) or over channels per row (layer norm). Implemented
// on the row-normalization form; context norm transposes around it.
Matrix standardize_rows(const Matrix& x, Matrix& inv_std_out) {
    const int n = x.rows(), c = x.cols();
    Matrix y(n, c);
    inv_std_out = Matrix(n, 1);
    for (int r = 0; r < n; ++r) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x.at(r, j);
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = x.at(r, j) - mean;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        inv_std_out.at(r, 0) = inv;
        for (int j = 0; j < c; ++j) y.at(r, j) = (x.at(r, j) - mean) * inv;
    }
    return y;
}

Matrix standardize_rows_backward(const Matrix& y, const Matrix& inv_std, const Matrix& g) {
    const int n = y.rows(), c = y.cols();
    Matrix dx(n, c);
    for (int r = 0; r < n; ++r) {
        double gmean = 0.0, gymean = 0.0;
        for (int j = 0; j < c; ++j) {
            gmean += g.at(r, j);
            gymean += g.at(r, j) * y.at(r, j);
        }
        gmean /= c;
        gymean /= c;
        const double inv = inv_std.at(r, 0);
        for (int j = 0; j < c; ++j) {
            dx.at(r, j) = inv * (g.at(r, j) - gmean - y.at(r, j) * gymean);
        }
    }
    return dx;
}

}  // namespace

NodePtr context_norm(NodePtr x) {
    if (x->value.rows() < 2) {
        throw std::invalid_argument("context_norm: needs at least 2 rows, got " +
                                    x->value.shape_str());
    }
    Matrix xt = corrlab::transpose(x->value);
    auto inv_std = std::make_shared<Matrix>();
    Matrix yt = standardize_rows(xt, *inv_std);
    Matrix y = corrlab::transpose(yt);
    auto yt_keep = std::make_shared<Matrix>(std::move(yt));
    return make_node(std::move(y), {x},
                     [x, inv_std, yt_keep](Node& self) {
                         Matrix gt = corrlab::transpose(self.grad);
                         Matrix dxt = standardize_rows_backward(*yt_keep, *inv_std, gt);
                         accumulate_grad(*x, corrlab::transpose(dxt));
                     },
                     "context_norm");
}

NodePtr layer_norm_rows(NodePtr x) {
    auto inv_std = std::make_shared<Matrix>();
    Matrix y = standardize_rows(x->value, *inv_std);
    auto out = make_node(std::move(y), {x}, nullptr, "layer_norm_rows");
    if (out->needs_grad) {
        out->backprop = [x, inv_std](Node& self) {
            accumulate_grad(*x, standardize_rows_backward(self.value, *inv_std, self.grad));
        };
    }
    return out;
}

NodePtr mean_rows(NodePtr x) {
    Matrix v = corrlab::col_mean(x->value);
    const int n = x->value.rows();
    return make_node(std::move(v), {x},
                     [x, n](Node& self) {
                         Matrix dx(n, self.grad.cols());
                         for (int r = 0; r < n; ++r)
                             for (int j = 0; j < self.grad.cols(); ++j)
                                 dx.at(r, j) = self.grad.at(0, j) / n;
                         accumulate_grad(*x, dx);
                     },
                     "mean_rows");
}

NodePtr max_rows(NodePtr x) {
    const int n = x->value.rows(), c = x->value.cols();
    if (n == 0) throw std::invalid_argument("max_rows: empty matrix");
    Matrix v(1, c);
    auto argmax = std::make_shared<std::vector<int>>(c, 0);
    for (int j = 0; j < c; ++j) {
        double best = x->value.at(0, j);
        double second = -std::numeric_limits<double>::infinity();
        int best_r = 0;
        for (int r = 1; r < n; ++r) {
            const double xv = x->value.at(r, j);
            if (xv > best) {
                second = best;
                best = xv;
                best_r = r;
            } else {
                second = std::max(second, xv);
            }
        }
        if (n > 1) KinkScope::report(best - second);
        v.at(0, j) = best;
        (*argmax)[j] = best_r;
    }
    return make_node(std::move(v), {x},
                     [x, argmax, n](Node& self) {
                         Matrix dx(n, self.grad.cols());
                         for (int j = 0; j < self.grad.cols(); ++j) {
                             dx.at((*argmax)[j], j) = self.grad.at(0, j);
                         }
                         accumulate_grad(*x, dx);
                     },
                     "max_rows");
}

NodePtr col_sum_rows(NodePtr x) {
    Matrix v = corrlab::col_sum(x->value);
    const int n = x->value.rows();
    return make_node(std::move(v), {x},
                     [x, n](Node& self) {
                         Matrix dx(n, self.grad.cols());
                         for (int r = 0; r < n; ++r)
                             for (int j = 0; j < self.grad.cols(); ++j)
                                 dx.at(r, j) = self.grad.at(0, j);
                         accumulate_grad(*x, dx);
                     },
                     "col_sum_rows");
}

NodePtr broadcast_rows(NodePtr rv, int n_rows) {
    if (rv->value.rows() != 1) {
        throw std::invalid_argument("broadcast_rows: expected row vector, got " +
                                    rv->value.shape_str());
    }
    const int c = rv->value.cols();
    Matrix v(n_rows, c);
    for (int r = 0; r < n_rows; ++r)
        for (int j = 0; j < c; ++j) v.at(r, j) = rv->value.at(0, j);
    return make_node(std::move(v), {rv},
                     [rv](Node& self) { accumulate_grad(*rv, corrlab::col_sum(self.grad)); },
                     "broadcast_rows");
}

NodePtr add_rowvec(NodePtr x, NodePtr rv) {
    if (rv->value.rows() != 1 || rv->value.cols() != x->value.cols()) {
        throw std::invalid_argument("add_rowvec: incompatible shapes " + x->value.shape_str() +
                                    " + " + rv->value.shape_str());
    }
    Matrix v(x->value.rows(), x->value.cols());
    for (int r = 0; r < v.rows(); ++r)
        for (int j = 0; j < v.cols(); ++j) v.at(r, j) = x->value.at(r, j) + rv->value.at(0, j);
    return make_node(std::move(v), {x, rv},
                     [x, rv](Node& self) {
                         accumulate_grad(*x, self.grad);
                         accumulate_grad(*rv, corrlab::col_sum(self.grad));
                     },
                     "add_rowvec");
}

NodePtr mul_rowvec(NodePtr x, NodePtr rv) {
    if (rv->value.rows() != 1 || rv->value.cols() != x->value.cols()) {
        throw std::invalid_argument("mul_rowvec: incompatible shapes " + x->value.shape_str() +
                                    " * " + rv->value.shape_str());
    }
    Matrix v(x->value.rows(), x->value.cols());
    for (int r = 0; r < v.rows(); ++r)
        for (int j = 0; j < v.cols(); ++j) v.at(r, j) = x->value.at(r, j) * rv->value.at(0, j);
    return make_node(std::move(v), {x, rv},
                     [x, rv](Node& self) {
                         if (x->needs_grad) {
                             Matrix dx(self.grad.rows(), self.grad.cols());
                             for (int r = 0; r < dx.rows(); ++r)
                                 for (int j = 0; j < dx.cols(); ++j)
                                     dx.at(r, j) = self.grad.at(r, j) * rv->value.at(0, j);
                             accumulate_grad(*x, dx);
                         }
                         if (rv->needs_grad) {
                             Matrix drv(1, self.grad.cols());
                             for (int r = 0; r < self.grad.rows(); ++r)
                                 for (int j = 0; j < self.grad.cols(); ++j)
                                     drv.at(0, j) += self.grad.at(r, j) * x->value.at(r, j);
                             accumulate_grad(*rv, drv);
                         }
                     },
                     "mul_rowvec");
}

NodePtr mul_colvec(NodePtr x, NodePtr cv) {
    if (cv->value.cols() != 1 || cv->value.rows() != x->value.rows()) {
        throw std::invalid_argument("mul_colvec: incompatible shapes " + x->value.shape_str() +
                                    " * " + cv->value.shape_str());
    }
    Matrix v(x->value.rows(), x->value.cols());
    for (int r = 0; r < v.rows(); ++r)
        for (int j = 0; j < v.cols(); ++j) v.at(r, j) = x->value.at(r, j) * cv->value.at(r, 0);
    return make_node(std::move(v), {x, cv},
                     [x, cv](Node& self) {
                         if (x->needs_grad) {
                             Matrix dx(self.grad.rows(), self.grad.cols());
                             for (int r = 0; r < dx.rows(); ++r)
                                 for (int j = 0; j < dx.cols(); ++j)
                                     dx.at(r, j) = self.grad.at(r, j) * cv->value.at(r, 0);
                             accumulate_grad(*x, dx);
                         }
                         if (cv->needs_grad) {
                             Matrix dcv(self.grad.rows(), 1);
                             for (int r = 0; r < self.grad.rows(); ++r) {
                                 double acc = 0.0;
                                 for (int j = 0; j < self.grad.cols(); ++j)
                                     acc += self.grad.at(r, j) * x->value.at(r, j);
                                 dcv.at(r, 0) = acc;
                             }
                             accumulate_grad(*cv, dcv);
                         }
                     },
                     "mul_colvec");
}

NodePtr mul_scalar_node(NodePtr x, NodePtr s) {
    if (s->value.rows() != 1 || s->value.cols() != 1) {
        throw std::invalid_argument("mul_scalar_node: scalar operand must be 1x1");
    }
    const double sv = s->value.at(0, 0);
    Matrix v = corrlab::scale(x->value, sv);
    return make_node(std::move(v), {x, s},
                     [x, s, sv](Node& self) {
                         if (x->needs_grad) accumulate_grad(*x, corrlab::scale(self.grad, sv));
                         if (s->needs_grad) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 acc += self.grad[i] * x->value[i];
                             Matrix ds(1, 1);
                             ds.at(0, 0) = acc;
                             accumulate_grad(*s, ds);
                         }
                     },
                     "mul_scalar_node");
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
    const int n = parts[0]->value.rows();
    int total = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != n) {
            throw std::invalid_argument("concat_cols: row count mismatch");
        }
        total += p->value.cols();
    }
    Matrix v(n, total);
    int off = 0;
    for (const auto& p : parts) {
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < p->value.cols(); ++j) v.at(r, off + j) = p->value.at(r, j);
        off += p->value.cols();
    }
    std::vector<NodePtr> parents = parts;
    return make_node(std::move(v), std::move(parents),
                     [parts](Node& self) {
                         int off = 0;
                         for (const auto& p : parts) {
                             const int pc = p->value.cols();
                             if (p->needs_grad) {
                                 Matrix dp(p->value.rows(), pc);
                                 for (int r = 0; r < dp.rows(); ++r)
                                     for (int j = 0; j < pc; ++j)
                                         dp.at(r, j) = self.grad.at(r, off + j);
                                 accumulate_grad(*p, dp);
                             }
                             off += pc;
                         }
                     },
                     "concat_cols");
}

NodePtr gather_rows(NodePtr x, std::vector<int> row_indices) {
    const int n = x->value.rows(), c = x->value.cols();
    Matrix v(static_cast<int>(row_indices.size()), c);
    for (std::size_t r = 0; r < row_indices.size(); ++r) {
        const int src = row_indices[r];
        if (src < 0 || src >= n) throw std::invalid_argument("gather_rows: index out of range");
        for (int j = 0; j < c; ++j) v.at(static_cast<int>(r), j) = x->value.at(src, j);
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(row_indices));
    return make_node(std::move(v), {x},
                     [x, idx, n](Node& self) {
                         Matrix dx(n, self.grad.cols());
                         for (std::size_t r = 0; r < idx->size(); ++r)
                             for (int j = 0; j < self.grad.cols(); ++j)
                                 dx.at((*idx)[r], j) += self.grad.at(static_cast<int>(r), j);
                         accumulate_grad(*x, dx);
                     },
                     "gather_rows");
}

NodePtr slice_block(NodePtr x, int r0, int c0, int rows, int cols) {
    if (r0 < 0 || c0 < 0 || r0 + rows > x->value.rows() || c0 + cols > x->value.cols()) {
        throw std::invalid_argument("slice_block: block out of range for " + x->value.shape_str());
    }
    Matrix v(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j) v.at(r, j) = x->value.at(r0 + r, c0 + j);
    return make_node(std::move(v), {x},
                     [x, r0, c0](Node& self) {
                         Matrix dx(x->value.rows(), x->value.cols());
                         for (int r = 0; r < self.grad.rows(); ++r)
                             for (int j = 0; j < self.grad.cols(); ++j)
                                 dx.at(r0 + r, c0 + j) = self.grad.at(r, j);
                         accumulate_grad(*x, dx);
                     },
                     "slice_block");
}

NodePtr clamp_max(NodePtr x, double cap) {
    Matrix v(x->value.rows(), x->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xv = x->value[i];
        KinkScope::report(std::abs(xv - cap));
        v[i] = xv < cap ? xv : cap;
    }
    return make_node(std::move(v), {x},
                     [x, cap](Node& self) {
                         Matrix dx(self.grad.rows(), self.grad.cols());
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                             dx[i] = x->value[i] < cap ? self.grad[i] : 0.0;
                         }
                         accumulate_grad(*x, dx);
                     },
                     "clamp_max");
}

NodePtr sum_all(NodePtr x) {
    Matrix v(1, 1);
    v.at(0, 0) = corrlab::sum(x->value);
    v.require_finite("sum_all");
    return make_node(std::move(v), {x},
                     [x](Node& self) {
                         accumulate_grad(*x, Matrix::constant(x->value.rows(), x->value.cols(),
                                                              self.grad.at(0, 0)));
                     },
                     "sum_all");
}

NodePtr mean_all(NodePtr x) {
    const double n = static_cast<double>(x->value.size());
    if (n == 0) throw std::invalid_argument("mean_all: empty matrix");
    Matrix v(1, 1);
    v.at(0, 0) = corrlab::sum(x->value) / n;
    v.require_finite("mean_all");
    return make_node(std::move(v), {x},
                     [x, n](Node& self) {
                         accumulate_grad(*x, Matrix::constant(x->value.rows(), x->value.cols(),
                                                              self.grad.at(0, 0) / n));
                     },
                     "mean_all");
}

NodePtr bce_with_logits(NodePtr logits, const Matrix& labels, double pos_weight) {
    if (!logits->value.same_shape(labels)) {
        throw std::invalid_argument("bce_with_logits: logits/labels shape mismatch");
    }
    const std::size_t n = logits->value.size();
    if (n == 0) throw std::invalid_argument("bce_with_logits: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits->value[i];
        const double y = labels[i];
        acc += pos_weight * y * softplus_scalar(-z) + (1.0 - y) * softplus_scalar(z);
    }
    Matrix v(1, 1);
    v.at(0, 0) = acc / static_cast<double>(n);
    v.require_finite("bce_with_logits");
    auto labels_keep = std::make_shared<Matrix>(labels);
    return make_node(std::move(v), {logits},
                     [logits, labels_keep, pos_weight, n](Node& self) {
                         const double g = self.grad.at(0, 0) / static_cast<double>(n);
                         Matrix dz(logits->value.rows(), logits->value.cols());
                         for (std::size_t i = 0; i < n; ++i) {
                             const double z = logits->value[i];
                             const double y = (*labels_keep)[i];
                             dz[i] = g * (-pos_weight * y * sigmoid_scalar(-z) +
                                          (1.0 - y) * sigmoid_scalar(z));
                         }
                         accumulate_grad(*logits, dz);
                     },
                     "bce_with_logits");
}

void backward(const NodePtr& output, ParameterStore& store) {
    if (!output) throw std::invalid_argument("backward: null output");
    if (output->value.rows() != 1 || output->value.cols() != 1) {
        throw std::invalid_argument("backward: output must be scalar, got " +
                                    output->value.shape_str());
    }
    store.zero_grad();
    if (!output->needs_grad) return;

    // Iterative post-order DFS: reverse topological order without recursion.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(output.get(), 0);
    visited.insert(output.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* parent = node->parents[next_child].get();
            ++next_child;
            if (parent && parent->needs_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    output->grad = Matrix::constant(1, 1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->has_grad()) continue;  // no contribution reached this node
        if (node->backprop) node->backprop(*node);
        if (node->param) {
            node->param->grad = corrlab::add(node->param->grad, node->grad);
        }
    }
}

double finite_diff_check(const std::function<NodePtr(NodePtr)>& build, const Matrix& point,
                         double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
    ParameterStore dummy;
    NodePtr p = leaf(point);
    NodePtr out = build(p);
    backward(out, dummy);
    Matrix analytic = p->has_grad() ? p->grad : Matrix::zeros(point.rows(), point.cols());

    double max_err = 0.0;
    Matrix probe = point;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double f_plus = build(constant(probe))->value.at(0, 0);
        probe[i] = orig - step;
        const double f_minus = build(constant(probe))->value.at(0, 0);
        probe[i] = orig;
        const double numeric = (f_plus - f_minus) / (2.0 * step);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

double finite_diff_check_params(const std::function<NodePtr()>& build, ParameterStore& store,
                                double step, int probes_per_param, Rng* rng) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check_params: step must be positive");
    NodePtr out = build();
    backward(out, store);

    // Snapshot analytic gradients before the probing passes overwrite them.
    std::vector<std::pair<Parameter*, Matrix>> grads;
    for (Parameter* p : store.all()) grads.emplace_back(p, p->grad);

    double max_err = 0.0;
    for (auto& [p, analytic] : grads) {
        std::vector<std::size_t> coords;
        if (probes_per_param > 0 && p->value.size() > static_cast<std::size_t>(probes_per_param)) {
            if (!rng) throw std::invalid_argument("finite_diff_check_params: rng required");
            for (int k = 0; k < probes_per_param; ++k)
                coords.push_back(rng->below(p->value.size()));
        } else {
            coords.resize(p->value.size());
            for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        }
        for (std::size_t i : coords) {
            const double orig = p->value[i];
            p->value[i] = orig + step;
            const double f_plus = build()->value.at(0, 0);
            p->value[i] = orig - step;
            const double f_minus = build()->value.at(0, 0);
            p->value[i] = orig;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double err =
                std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace corrlab::ad
