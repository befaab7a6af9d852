#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wch/common.hpp"

namespace wch {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

namespace detail {

// Thread-local switch used by NoGradGuard; when off, ops produce plain leaves.
inline int& nograd_depth() {
    thread_local int depth = 0;
    return depth;
}

template <typename S>
using EigenMat =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<EigenMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const EigenMat<S>>;

// c = a[m x k] * b[k x n]
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
    MatMap<S>(c, m, n).noalias() =
        ConstMatMap<S>(a, m, k) * ConstMatMap<S>(b, k, n);
}

// c += a[m x n] * b[k x n]^T
template <typename S>
void gemm_nt_acc(const S* a, const S* b, S* c, int64_t m, int64_t n,
                 int64_t k) {
    MatMap<S>(c, m, k).noalias() +=
        ConstMatMap<S>(a, m, n) * ConstMatMap<S>(b, k, n).transpose();
}

// c += a[m x k]^T * b[m x n]
template <typename S>
void gemm_tn_acc(const S* a, const S* b, S* c, int64_t m, int64_t k,
                 int64_t n) {
    MatMap<S>(c, k, n).noalias() =
        ConstMatMap<S>(c, k, n) +
        ConstMatMap<S>(a, m, k).transpose() * ConstMatMap<S>(b, m, n);
}

}  // namespace detail

// Disables graph recording for the enclosing scope (inference paths).
struct NoGradGuard {
    NoGradGuard() { ++detail::nograd_depth(); }
    ~NoGradGuard() { --detail::nograd_depth(); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::nograd_depth() == 0; }

enum class Reduce { Mean, Max, Sum };
enum class SteMode { Clipped, Identity };

// Dense row-major tensor participating in reverse-mode differentiation.
// Tensor is a cheap handle onto a shared node; ops below build the backward
// graph whenever an input requires a gradient and recording is enabled.
template <typename S>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<S> value;
        std::vector<S> grad;  // allocated lazily, same length as value
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;

        void ensure_grad() {
            if (grad.empty()) grad.assign(value.size(), S(0));
        }
    };

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return full(std::move(shape), S(0));
    }

    static Tensor full(Shape shape, S v) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(static_cast<size_t>(numel(t.node_->shape)), v);
        return t;
    }

    static Tensor from(Shape shape, std::vector<S> values) {
        if (numel(shape) != static_cast<int64_t>(values.size()))
            throw DimensionError("tensor: " + std::to_string(values.size()) +
                                 " values do not fill shape " +
                                 shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(values);
        return t;
    }

    static Tensor scalar(S v) { return full({1}, v); }

    static Tensor identity(int64_t n) {
        Tensor t = zeros({n, n});
        for (int64_t i = 0; i < n; ++i) t.node_->value[i * n + i] = S(1);
        return t;
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, double sigma = 1.0) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.resize(static_cast<size_t>(numel(t.node_->shape)));
        for (S& v : t.node_->value) v = static_cast<S>(rng_normal(rng) * sigma);
        return t;
    }

    static Tensor trunc_normal(Shape shape, std::mt19937_64& rng,
                               double sigma) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.resize(static_cast<size_t>(numel(t.node_->shape)));
        for (S& v : t.node_->value)
            v = static_cast<S>(rng_trunc_normal(rng, sigma));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
    int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }

    const std::vector<S>& values() const { return node_->value; }
    std::vector<S>& values() { return node_->value; }
    S item() const {
        if (size() != 1)
            throw DimensionError("item: tensor has " + std::to_string(size()) +
                                 " elements");
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<S>& grad() const {
        if (node_->grad.empty())
            throw NumericError("grad: no gradient has been accumulated");
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty())
            std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    bool all_finite() const {
        for (S v : node_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Value copy cut out of the graph.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        return t;
    }

    // Reverse pass from a scalar root. Single-threaded per graph.
    void backward() const {
        if (size() != 1)
            throw DimensionError("backward: root must be scalar, got shape " +
                                 shape_str(shape()));
        std::vector<Node*> order;
        topo_sort(node_.get(), order);
        node_->ensure_grad();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Graph-building helper shared by all ops.
    static Tensor make_op(Shape shape, std::vector<S> value,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
        Tensor t = from(std::move(shape), std::move(value));
        bool needs = false;
        if (grad_enabled()) {
            for (const Tensor& in : inputs) needs |= in.node_->requires_grad;
        }
        if (needs) {
            t.node_->requires_grad = true;
            t.node_->parents.reserve(inputs.size());
            for (Tensor& in : inputs) t.node_->parents.push_back(in.node_);
            t.node_->backward = std::move(backward);
        }
        return t;
    }

private:
    static void topo_sort(Node* root, std::vector<Node*>& order) {
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(root, 0);
        seen.insert(root);
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (p->requires_grad && seen.insert(p).second)
                    stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: expected rank-2 operands, got " +
                             shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (k != b.dim(0))
        throw DimensionError("matmul: inner dimensions disagree: " +
                             shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<S> out(static_cast<size_t>(m * n));
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto an = a.node(), bn = b.node();
    return Tensor<S>::make_op(
        {m, n}, std::move(out), {a, b},
        [an, bn, m, k, n](typename Tensor<S>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                detail::gemm_nt_acc(self.grad.data(), bn->value.data(),
                                    an->grad.data(), m, n, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::gemm_tn_acc(an->value.data(), self.grad.data(),
                                    bn->grad.data(), m, k, n);
            }
        });
}

// Batched matmul over the leading axis: [B,m,k] x [B,k,n] -> [B,m,n].
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
        a.dim(2) != b.dim(1))
        throw DimensionError("bmm: incompatible shapes " +
                             shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<S> out(static_cast<size_t>(B * m * n));
    for (int64_t i = 0; i < B; ++i)
        detail::gemm_nn(a.values().data() + i * m * k,
                        b.values().data() + i * k * n, out.data() + i * m * n,
                        m, k, n);
    auto an = a.node(), bn = b.node();
    return Tensor<S>::make_op(
        {B, m, n}, std::move(out), {a, b},
        [an, bn, B, m, k, n](typename Tensor<S>::Node& self) {
            for (int64_t i = 0; i < B; ++i) {
                const S* g = self.grad.data() + i * m * n;
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::gemm_nt_acc(g, bn->value.data() + i * k * n,
                                        an->grad.data() + i * m * k, m, n, k);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::gemm_tn_acc(an->value.data() + i * m * k, g,
                                        bn->grad.data() + i * k * n, m, k, n);
                }
            }
        });
}

namespace detail {

inline std::vector<int64_t> strides_of(const Shape& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * shape[i + 1];
    return st;
}

// out[idx] = in[perm(idx)] index mapping for permute and its backward.
template <typename S>
void permute_copy(const S* in, S* out, const Shape& in_shape,
                  const std::vector<int64_t>& perm, bool accumulate) {
    const size_t r = in_shape.size();
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
    const auto in_st = strides_of(in_shape);
    std::vector<int64_t> out_st_in(r);  // stride in input per output axis
    for (size_t i = 0; i < r; ++i) out_st_in[i] = in_st[perm[i]];
    const int64_t total = numel(in_shape);
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (int64_t o = 0; o < total; ++o) {
        if (accumulate)
            out[o] += in[src];
        else
            out[o] = in[src];
        for (int64_t ax = static_cast<int64_t>(r) - 1; ax >= 0; --ax) {
            if (++idx[ax] < out_shape[ax]) {
                src += out_st_in[ax];
                break;
            }
            idx[ax] = 0;
            src -= out_st_in[ax] * (out_shape[ax] - 1);
        }
    }
}

}  // namespace detail

template <typename S>
Tensor<S> permute(const Tensor<S>& a, std::vector<int64_t> perm) {
    const size_t r = static_cast<size_t>(a.rank());
    if (perm.size() != r)
        throw DimensionError("permute: order has " +
                             std::to_string(perm.size()) + " axes for shape " +
                             shape_str(a.shape()));
    std::vector<bool> used(r, false);
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) {
        if (perm[i] < 0 || perm[i] >= static_cast<int64_t>(r) || used[perm[i]])
            throw DimensionError("permute: invalid axis order");
        used[perm[i]] = true;
        out_shape[i] = a.dim(perm[i]);
    }
    std::vector<S> out(static_cast<size_t>(a.size()));
    detail::permute_copy(a.values().data(), out.data(), a.shape(), perm,
                         false);
    auto an = a.node();
    std::vector<int64_t> inv(r);
    for (size_t i = 0; i < r; ++i) inv[perm[i]] = static_cast<int64_t>(i);
    Shape self_shape = out_shape;
    return Tensor<S>::make_op(
        std::move(out_shape), std::move(out), {a},
        [an, inv, self_shape](typename Tensor<S>::Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            detail::permute_copy(self.grad.data(), an->grad.data(), self_shape,
                                 inv, true);
        });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.rank() != 2)
        throw DimensionError("transpose: expected rank-2, got " +
                             shape_str(a.shape()));
    return permute(a, {1, 0});
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                             " as " + shape_str(shape));
    auto an = a.node();
    return Tensor<S>::make_op(std::move(shape), a.values(), {a},
                              [an](typename Tensor<S>::Node& self) {
                                  if (!an->requires_grad) return;
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                      an->grad[i] += self.grad[i];
                              });
}

namespace detail {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                      const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes differ: " +
                             shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<S> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
    auto an = a.node(), bn = b.node();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a, b},
                              [an, bn](typename Tensor<S>::Node& self) {
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size();
                                           ++i)
                                          an->grad[i] += self.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size();
                                           ++i)
                                          bn->grad[i] += self.grad[i];
                                  }
                              });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<S> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
    auto an = a.node(), bn = b.node();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a, b},
                              [an, bn](typename Tensor<S>::Node& self) {
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size();
                                           ++i)
                                          an->grad[i] += self.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size();
                                           ++i)
                                          bn->grad[i] -= self.grad[i];
                                  }
                              });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<S> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
    auto an = a.node(), bn = b.node();
    return Tensor<S>::make_op(
        a.shape(), std::move(out), {a, b},
        [an, bn](typename Tensor<S>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->value[i];
            }
        });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double c) {
    std::vector<S> out(a.values());
    for (S& v : out) v *= static_cast<S>(c);
    auto an = a.node();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a},
                              [an, c](typename Tensor<S>::Node& self) {
                                  if (!an->requires_grad) return;
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                      an->grad[i] +=
                                          self.grad[i] * static_cast<S>(c);
                              });
}

// x[r x c] + bias[c], broadcast over rows.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw DimensionError("add_bias: shapes " + shape_str(x.shape()) +
                             " and " + shape_str(bias.shape()));
    const int64_t r = x.dim(0), c = x.dim(1);
    std::vector<S> out(x.values());
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[i * c + j] += bias.values()[j];
    auto xn = x.node(), bn = bias.node();
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x, bias},
        [xn, bn, r, c](typename Tensor<S>::Node& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    xn->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        bn->grad[j] += self.grad[i * c + j];
            }
        });
}

// x[B x n x d] + table[n x d], broadcast over the leading batch axis.
template <typename S>
Tensor<S> add_position(const Tensor<S>& x, const Tensor<S>& table) {
    if (x.rank() != 3 || table.rank() != 2 || table.dim(0) != x.dim(1) ||
        table.dim(1) != x.dim(2))
        throw DimensionError("add_position: shapes " + shape_str(x.shape()) +
                             " and " + shape_str(table.shape()));
    const int64_t B = x.dim(0), nd = x.dim(1) * x.dim(2);
    std::vector<S> out(x.values());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < nd; ++i) out[b * nd + i] += table.values()[i];
    auto xn = x.node(), tn = table.node();
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x, table},
        [xn, tn, B, nd](typename Tensor<S>::Node& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    xn->grad[i] += self.grad[i];
            }
            if (tn->requires_grad) {
                tn->ensure_grad();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < nd; ++i)
                        tn->grad[i] += self.grad[b * nd + i];
            }
        });
}

// Softmax along the last axis with per-row max subtraction.
template <typename S>
Tensor<S> softmax_lastaxis(const Tensor<S>& x, double temperature = 1.0) {
    if (temperature <= 0.0)
        throw ParameterError("softmax: temperature must be positive, got " +
                             std::to_string(temperature));
    const int64_t c = x.dim(x.rank() - 1);
    const int64_t rows = x.size() / c;
    std::vector<S> out(static_cast<size_t>(x.size()));
    const S* in = x.values().data();
    const S inv_t = static_cast<S>(1.0 / temperature);
    for (int64_t i = 0; i < rows; ++i) {
        const S* row = in + i * c;
        S* orow = out.data() + i * c;
        S mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        S sum = S(0);
        for (int64_t j = 0; j < c; ++j) {
            orow[j] = std::exp((row[j] - mx) * inv_t);
            sum += orow[j];
        }
        const S inv = S(1) / sum;
        for (int64_t j = 0; j < c; ++j) orow[j] *= inv;
    }
    auto xn = x.node();
    std::vector<S> y = out;  // captured for the backward rule
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x},
        [xn, y = std::move(y), rows, c,
         inv_t](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t i = 0; i < rows; ++i) {
                const S* g = self.grad.data() + i * c;
                const S* yr = y.data() + i * c;
                S dot = S(0);
                for (int64_t j = 0; j < c; ++j) dot += g[j] * yr[j];
                S* gx = xn->grad.data() + i * c;
                for (int64_t j = 0; j < c; ++j)
                    gx[j] += (g[j] - dot) * yr[j] * inv_t;
            }
        });
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x, double temperature = 1.0) {
    if (x.rank() != 2)
        throw DimensionError("softmax_rows: expected rank-2, got " +
                             shape_str(x.shape()));
    return softmax_lastaxis(x, temperature);
}

template <typename S>
Tensor<S> log_softmax_rows(const Tensor<S>& x) {
    if (x.rank() != 2)
        throw DimensionError("log_softmax_rows: expected rank-2, got " +
                             shape_str(x.shape()));
    const int64_t r = x.dim(0), c = x.dim(1);
    std::vector<S> out(static_cast<size_t>(x.size()));
    std::vector<S> sm(static_cast<size_t>(x.size()));
    for (int64_t i = 0; i < r; ++i) {
        const S* row = x.values().data() + i * c;
        S mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        S sum = S(0);
        for (int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
        const S lse = mx + std::log(sum);
        for (int64_t j = 0; j < c; ++j) {
            out[i * c + j] = row[j] - lse;
            sm[i * c + j] = std::exp(row[j] - lse);
        }
    }
    auto xn = x.node();
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x},
        [xn, sm = std::move(sm), r, c](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const S* g = self.grad.data() + i * c;
                S gsum = S(0);
                for (int64_t j = 0; j < c; ++j) gsum += g[j];
                S* gx = xn->grad.data() + i * c;
                const S* smr = sm.data() + i * c;
                for (int64_t j = 0; j < c; ++j)
                    gx[j] += g[j] - smr[j] * gsum;
            }
        });
}

// Reduction along one axis; the axis is removed from the shape.
// Max routes its gradient to the first (lowest-index) argmax.
template <typename S>
Tensor<S> reduce(const Tensor<S>& x, int64_t axis, Reduce kind) {
    if (axis < 0 || axis >= x.rank())
        throw DimensionError("reduce: axis " + std::to_string(axis) +
                             " invalid for shape " + shape_str(x.shape()));
    const Shape& sh = x.shape();
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= sh[i];
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= sh[i];
    const int64_t len = sh[axis];
    Shape out_shape;
    for (int64_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(sh[i]);
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<S> out(static_cast<size_t>(outer * inner));
    std::vector<int64_t> argmax;
    if (kind == Reduce::Max) argmax.resize(out.size());
    const S* in = x.values().data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const S* base = in + o * len * inner + i;
            if (kind == Reduce::Max) {
                S best = base[0];
                int64_t bi = 0;
                for (int64_t a = 1; a < len; ++a) {
                    const S v = base[a * inner];
                    if (v > best) {
                        best = v;
                        bi = a;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = bi;
            } else {
                S sum = S(0);
                for (int64_t a = 0; a < len; ++a) sum += base[a * inner];
                out[o * inner + i] =
                    kind == Reduce::Mean ? sum / static_cast<S>(len) : sum;
            }
        }
    }
    auto xn = x.node();
    return Tensor<S>::make_op(
        std::move(out_shape), std::move(out), {x},
        [xn, argmax = std::move(argmax), kind, outer, inner,
         len](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < inner; ++i) {
                    const S g = self.grad[o * inner + i];
                    S* base = xn->grad.data() + o * len * inner + i;
                    switch (kind) {
                        case Reduce::Sum:
                            for (int64_t a = 0; a < len; ++a)
                                base[a * inner] += g;
                            break;
                        case Reduce::Mean:
                            for (int64_t a = 0; a < len; ++a)
                                base[a * inner] += g / static_cast<S>(len);
                            break;
                        case Reduce::Max:
                            base[argmax[o * inner + i] * inner] += g;
                            break;
                    }
                }
            }
        });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S sum = S(0);
    for (S v : x.values()) sum += v;
    auto xn = x.node();
    return Tensor<S>::make_op({1}, {sum}, {x},
                              [xn](typename Tensor<S>::Node& self) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  const S g = self.grad[0];
                                  for (S& v : xn->grad) v += g;
                              });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// Elementwise sign with sign(0) := +1. Backward is the straight-through
// estimator: identity, clipped to |x| <= 1 in Clipped mode.
template <typename S>
Tensor<S> ste_sign(const Tensor<S>& x, SteMode mode = SteMode::Clipped) {
    std::vector<S> out(static_cast<size_t>(x.size()));
    for (int64_t i = 0; i < x.size(); ++i)
        out[i] = x.values()[i] >= S(0) ? S(1) : S(-1);
    auto xn = x.node();
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x},
        [xn, mode](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            if (mode == SteMode::Identity) {
                for (size_t i = 0; i < self.grad.size(); ++i)
                    xn->grad[i] += self.grad[i];
            } else {
                for (size_t i = 0; i < self.grad.size(); ++i)
                    if (std::abs(xn->value[i]) <= S(1))
                        xn->grad[i] += self.grad[i];
            }
        });
}

// Layer normalization over the last axis with learnable gain and bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, double eps = 1e-5) {
    const int64_t h = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != h || bias.rank() != 1 ||
        bias.dim(0) != h)
        throw DimensionError("layer_norm: gain/bias must have shape [" +
                             std::to_string(h) + "]");
    const int64_t rows = x.size() / h;
    std::vector<S> out(static_cast<size_t>(x.size()));
    std::vector<S> xhat(static_cast<size_t>(x.size()));
    std::vector<S> inv_sigma(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        const S* row = x.values().data() + i * h;
        S mean = S(0);
        for (int64_t j = 0; j < h; ++j) mean += row[j];
        mean /= static_cast<S>(h);
        S var = S(0);
        for (int64_t j = 0; j < h; ++j) {
            const S d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<S>(h);
        const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
        inv_sigma[i] = inv;
        for (int64_t j = 0; j < h; ++j) {
            const S xh = (row[j] - mean) * inv;
            xhat[i * h + j] = xh;
            out[i * h + j] = xh * gain.values()[j] + bias.values()[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma),
         rows, h](typename Tensor<S>::Node& self) {
            for (int64_t i = 0; i < rows; ++i) {
                const S* g = self.grad.data() + i * h;
                const S* xh = xhat.data() + i * h;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (int64_t j = 0; j < h; ++j)
                        gn->grad[j] += g[j] * xh[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int64_t j = 0; j < h; ++j) bn->grad[j] += g[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    S mean_dxh = S(0), mean_dxh_xh = S(0);
                    for (int64_t j = 0; j < h; ++j) {
                        const S dxh = g[j] * gn->value[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= static_cast<S>(h);
                    mean_dxh_xh /= static_cast<S>(h);
                    S* gx = xn->grad.data() + i * h;
                    for (int64_t j = 0; j < h; ++j) {
                        const S dxh = g[j] * gn->value[j];
                        gx[j] += (dxh - mean_dxh - xh[j] * mean_dxh_xh) *
                                 inv_sigma[i];
                    }
                }
            }
        });
}

// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    std::vector<S> out(static_cast<size_t>(x.size()));
    for (int64_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x.values()[i]);
        out[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    auto xn = x.node();
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x},
        [xn](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double v = static_cast<double>(xn->value[i]);
                const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                xn->grad[i] += self.grad[i] * static_cast<S>(phi + v * pdf);
            }
        });
}

// Row i of a[r x c] divided by v[i]. Used for the diagonal scaling of the
// weight matrix; plain division keeps a[i][i]/v[i] exactly 1 when v == diag(a).
template <typename S>
Tensor<S> div_rows(const Tensor<S>& a, const Tensor<S>& v) {
    if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.dim(0))
        throw DimensionError("div_rows: shapes " + shape_str(a.shape()) +
                             " and " + shape_str(v.shape()));
    const int64_t r = a.dim(0), c = a.dim(1);
    std::vector<S> out(a.values());
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[i * c + j] /= v.values()[i];
    auto an = a.node(), vn = v.node();
    return Tensor<S>::make_op(
        {r, c}, std::move(out), {a, v},
        [an, vn, r, c](typename Tensor<S>::Node& self) {
            for (int64_t i = 0; i < r; ++i) {
                const S vi = vn->value[i];
                const S* g = self.grad.data() + i * c;
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (int64_t j = 0; j < c; ++j)
                        an->grad[i * c + j] += g[j] / vi;
                }
                if (vn->requires_grad) {
                    vn->ensure_grad();
                    S acc = S(0);
                    for (int64_t j = 0; j < c; ++j)
                        acc += g[j] * an->value[i * c + j];
                    vn->grad[i] -= acc / (vi * vi);
                }
            }
        });
}

template <typename S>
Tensor<S> diag_part(const Tensor<S>& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw DimensionError("diag_part: expected square matrix, got " +
                             shape_str(a.shape()));
    const int64_t n = a.dim(0);
    std::vector<S> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = a.values()[i * n + i];
    auto an = a.node();
    return Tensor<S>::make_op({n}, std::move(out), {a},
                              [an, n](typename Tensor<S>::Node& self) {
                                  if (!an->requires_grad) return;
                                  an->ensure_grad();
                                  for (int64_t i = 0; i < n; ++i)
                                      an->grad[i * n + i] += self.grad[i];
                              });
}

// Unit-normalize along the last axis; n = sqrt(sum x^2 + eps).
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x, double eps = 1e-12) {
    const int64_t h = x.dim(x.rank() - 1);
    const int64_t rows = x.size() / h;
    std::vector<S> out(static_cast<size_t>(x.size()));
    std::vector<S> inv_norm(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        const S* row = x.values().data() + i * h;
        S s = S(0);
        for (int64_t j = 0; j < h; ++j) s += row[j] * row[j];
        const S inv = S(1) / std::sqrt(s + static_cast<S>(eps));
        inv_norm[i] = inv;
        for (int64_t j = 0; j < h; ++j) out[i * h + j] = row[j] * inv;
    }
    auto xn = x.node();
    return Tensor<S>::make_op(
        x.shape(), std::move(out), {x},
        [xn, inv_norm = std::move(inv_norm), rows,
         h](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t i = 0; i < rows; ++i) {
                const S* g = self.grad.data() + i * h;
                const S* row = xn->value.data() + i * h;
                const S inv = inv_norm[i];
                S dot = S(0);
                for (int64_t j = 0; j < h; ++j) dot += g[j] * row[j];
                S* gx = xn->grad.data() + i * h;
                for (int64_t j = 0; j < h; ++j)
                    gx[j] += g[j] * inv - row[j] * dot * inv * inv * inv;
            }
        });
}

template <typename S>
Tensor<S> detach(const Tensor<S>& x) {
    return x.detach();
}

}  // namespace wch
