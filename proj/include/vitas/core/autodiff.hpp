#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "tensor.hpp"

namespace vitas {

// Reverse-mode tape. Nodes own value + grad; ops link nodes and register a
// pull-style backward closure. Graphs are built per sample and freed after
// the backward pass as the shared_ptrs drop.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor(value.shape, 0.0);
    }
    void add_grad(const Tensor& g) {
        ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

inline Var make_leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad && grad_mode();
    return n;
}

inline Var constant(Tensor v) { return make_leaf(std::move(v), false); }
inline Var parameter(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_mode()) {
        bool req = false;
        for (const auto& p : parents) req = req || p->requires_grad;
        if (req) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_fn = std::move(bw);
        }
    }
    return n;
}

inline void backward(const Var& root) {
    root->ensure_grad();
    std::fill(root->grad.data.begin(), root->grad.data.end(), 1.0);

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, i] = stack.back();
        if (i < node->parents.size()) {
            Node* p = node->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is postorder: parents before children; walk it backwards
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---- elementwise with broadcasting ----

namespace detail {

template <typename F>
Tensor ew_broadcast(const Tensor& a, const Tensor& b, F f) {
    if (a.shape == b.shape) {
        Tensor out(a.shape);
        for (std::size_t i = 0; i < a.numel(); ++i)
            out.data[i] = f(a.data[i], b.data[i]);
        return out;
    }
    auto oshape = broadcast_shape(a.shape, b.shape);
    Tensor out(oshape);
    const std::size_t r = oshape.size();
    auto astride = strides_of(a.shape);
    auto bstride = strides_of(b.shape);
    std::vector<std::size_t> as(r, 0), bs(r, 0);
    for (std::size_t i = 0; i < a.rank(); ++i)
        as[r - a.rank() + i] = (a.shape[i] == 1) ? 0 : astride[i];
    for (std::size_t i = 0; i < b.rank(); ++i)
        bs[r - b.rank() + i] = (b.shape[i] == 1) ? 0 : bstride[i];
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t lin = 0; lin < out.numel(); ++lin) {
        std::size_t ao = 0, bo = 0;
        for (std::size_t i = 0; i < r; ++i) {
            ao += idx[i] * as[i];
            bo += idx[i] * bs[i];
        }
        out.data[lin] = f(a.data[ao], b.data[bo]);
        for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
            if (++idx[i] < oshape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

} // namespace detail

inline Var add(const Var& a, const Var& b) {
    Tensor out = detail::ew_broadcast(a->value, b->value,
                                      [](double x, double y) { return x + y; });
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->add_grad(reduce_to_shape(self.grad, a->value.shape));
        if (b->requires_grad) b->add_grad(reduce_to_shape(self.grad, b->value.shape));
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tensor out = detail::ew_broadcast(a->value, b->value,
                                      [](double x, double y) { return x - y; });
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->add_grad(reduce_to_shape(self.grad, a->value.shape));
        if (b->requires_grad) {
            Tensor g = self.grad;
            for (auto& v : g.data) v = -v;
            b->add_grad(reduce_to_shape(g, b->value.shape));
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    Tensor out = detail::ew_broadcast(a->value, b->value,
                                      [](double x, double y) { return x * y; });
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            Tensor g = detail::ew_broadcast(self.grad, b->value,
                                            [](double x, double y) { return x * y; });
            a->add_grad(reduce_to_shape(g, a->value.shape));
        }
        if (b->requires_grad) {
            Tensor g = detail::ew_broadcast(self.grad, a->value,
                                            [](double x, double y) { return x * y; });
            b->add_grad(reduce_to_shape(g, b->value.shape));
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (auto& v : out.data) v *= s;
    return make_op(std::move(out), {a}, [a, s](Node& self) {
        Tensor g = self.grad;
        for (auto& v : g.data) v *= s;
        a->add_grad(g);
    });
}

inline Var add_scalar(const Var& a, double s) {
    Tensor out = a->value;
    for (auto& v : out.data) v += s;
    return make_op(std::move(out), {a}, [a](Node& self) { a->add_grad(self.grad); });
}

// ---- matmul family ----

namespace detail {

struct MmDims {
    std::size_t batch, m, k, n;
    bool a3, b3;
};

inline MmDims mm_dims(const Tensor& a, const Tensor& b, bool b_transposed) {
    MmDims d{};
    d.a3 = a.rank() == 3;
    d.b3 = b.rank() == 3;
    if (a.rank() < 2 || b.rank() < 2) throw std::invalid_argument("matmul rank");
    d.m = a.shape[a.rank() - 2];
    d.k = a.shape[a.rank() - 1];
    std::size_t bk = b_transposed ? b.shape[b.rank() - 1] : b.shape[b.rank() - 2];
    std::size_t bn = b_transposed ? b.shape[b.rank() - 2] : b.shape[b.rank() - 1];
    if (bk != d.k) throw std::invalid_argument("matmul inner dim mismatch");
    d.n = bn;
    d.batch = d.a3 ? a.shape[0] : (d.b3 ? b.shape[0] : 1);
    if (d.a3 && d.b3 && a.shape[0] != b.shape[0])
        throw std::invalid_argument("matmul batch mismatch");
    return d;
}

} // namespace detail

// C = A @ B.  A: (m,k) or (B,m,k); B: (k,n) or (B,k,n).
inline Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    auto d = detail::mm_dims(av, bv, false);
    Tensor out(d.a3 || d.b3 ? std::vector<std::size_t>{d.batch, d.m, d.n}
                            : std::vector<std::size_t>{d.m, d.n});
    for (std::size_t t = 0; t < d.batch; ++t) {
        const double* ap = av.data.data() + (d.a3 ? t * d.m * d.k : 0);
        const double* bp = bv.data.data() + (d.b3 ? t * d.k * d.n : 0);
        kern::matmul_acc(ap, bp, out.data.data() + t * d.m * d.n, d.m, d.k, d.n);
    }
    return make_op(std::move(out), {a, b}, [a, b, d](Node& self) {
        const Tensor& av = a->value;
        const Tensor& bv = b->value;
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t t = 0; t < d.batch; ++t) {
                const double* g = self.grad.data.data() + t * d.m * d.n;
                const double* bp = bv.data.data() + (d.b3 ? t * d.k * d.n : 0);
                double* da = a->grad.data.data() + (d.a3 ? t * d.m * d.k : 0);
                kern::matmul_nt_acc(g, bp, da, d.m, d.n, d.k); // dA = g @ B^T
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t t = 0; t < d.batch; ++t) {
                const double* g = self.grad.data.data() + t * d.m * d.n;
                const double* ap = av.data.data() + (d.a3 ? t * d.m * d.k : 0);
                double* db = b->grad.data.data() + (d.b3 ? t * d.k * d.n : 0);
                kern::matmul_tn_acc(ap, g, db, d.k, d.m, d.n); // dB = A^T @ g
            }
        }
    });
}

// C = A @ B^T.  A: (..,m,k); B: (..,n,k).
inline Var matmul_nt(const Var& a, const Var& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    auto d = detail::mm_dims(av, bv, true);
    Tensor out(d.a3 || d.b3 ? std::vector<std::size_t>{d.batch, d.m, d.n}
                            : std::vector<std::size_t>{d.m, d.n});
    for (std::size_t t = 0; t < d.batch; ++t) {
        const double* ap = av.data.data() + (d.a3 ? t * d.m * d.k : 0);
        const double* bp = bv.data.data() + (d.b3 ? t * d.n * d.k : 0);
        kern::matmul_nt_acc(ap, bp, out.data.data() + t * d.m * d.n, d.m, d.k, d.n);
    }
    return make_op(std::move(out), {a, b}, [a, b, d](Node& self) {
        const Tensor& av = a->value;
        const Tensor& bv = b->value;
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t t = 0; t < d.batch; ++t) {
                const double* g = self.grad.data.data() + t * d.m * d.n;
                const double* bp = bv.data.data() + (d.b3 ? t * d.n * d.k : 0);
                double* da = a->grad.data.data() + (d.a3 ? t * d.m * d.k : 0);
                kern::matmul_acc(g, bp, da, d.m, d.n, d.k); // dA = g @ B
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t t = 0; t < d.batch; ++t) {
                const double* g = self.grad.data.data() + t * d.m * d.n;
                const double* ap = av.data.data() + (d.a3 ? t * d.m * d.k : 0);
                double* db = b->grad.data.data() + (d.b3 ? t * d.n * d.k : 0);
                kern::matmul_tn_acc(g, ap, db, d.n, d.m, d.k); // dB = g^T @ A
            }
        }
    });
}

// ---- shape ops ----

inline Var reshape(const Var& a, std::vector<std::size_t> shape) {
    if (Tensor::numel_of(shape) != a->value.numel())
        throw std::invalid_argument("reshape numel mismatch");
    Tensor out = a->value;
    out.shape = shape;
    return make_op(std::move(out), {a}, [a](Node& self) {
        Tensor g = self.grad;
        g.shape = a->value.shape;
        a->add_grad(g);
    });
}

namespace detail {

inline Tensor permute_raw(const Tensor& x, const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> oshape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) oshape[i] = x.shape[perm[i]];
    Tensor out(oshape);
    auto xs = strides_of(x.shape);
    std::vector<std::size_t> src_stride(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) src_stride[i] = xs[perm[i]];
    std::vector<std::size_t> idx(perm.size(), 0);
    for (std::size_t lin = 0; lin < out.numel(); ++lin) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < perm.size(); ++i) off += idx[i] * src_stride[i];
        out.data[lin] = x.data[off];
        for (int i = static_cast<int>(perm.size()) - 1; i >= 0; --i) {
            if (++idx[i] < oshape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

} // namespace detail

inline Var permute(const Var& a, const std::vector<std::size_t>& perm) {
    Tensor out = detail::permute_raw(a->value, perm);
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return make_op(std::move(out), {a}, [a, inv](Node& self) {
        a->add_grad(detail::permute_raw(self.grad, inv));
    });
}

inline Var concat(const std::vector<Var>& xs, std::size_t axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input");
    auto shape = xs[0]->value.shape;
    std::size_t total = 0;
    for (const auto& x : xs) total += x->value.shape[axis];
    shape[axis] = total;
    Tensor out(shape);
    // outer = product of dims before axis, inner = product after
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::size_t len = x->value.shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x->value.data.data() + o * len * inner, len * inner,
                        out.data.data() + (o * total + off) * inner);
        off += len;
    }
    std::vector<Var> parents = xs;
    return make_op(std::move(out), parents,
                   [xs, axis, outer, inner, total](Node& self) {
                       std::size_t off = 0;
                       for (const auto& x : xs) {
                           std::size_t len = x->value.shape[axis];
                           if (x->requires_grad) {
                               Tensor g(x->value.shape, 0.0);
                               for (std::size_t o = 0; o < outer; ++o)
                                   std::copy_n(self.grad.data.data() + (o * total + off) * inner,
                                               len * inner, g.data.data() + o * len * inner);
                               x->add_grad(g);
                           }
                           off += len;
                       }
                   });
}

inline Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t len) {
    auto shape = a->value.shape;
    if (start + len > shape[axis]) throw std::invalid_argument("slice out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    std::size_t full = shape[axis];
    shape[axis] = len;
    Tensor out(shape);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a->value.data.data() + (o * full + start) * inner, len * inner,
                    out.data.data() + o * len * inner);
    return make_op(std::move(out), {a},
                   [a, axis, start, len, outer, inner, full](Node& self) {
                       a->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                           const double* g = self.grad.data.data() + o * len * inner;
                           double* dst = a->grad.data.data() + (o * full + start) * inner;
                           for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                       }
                   });
}

// rows of x (N,D) gathered by index; backward scatter-adds
inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
    const Tensor& x = a->value;
    std::size_t d = x.shape[x.rank() - 1];
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(x.data.data() + idx[i] * d, d, out.data.data() + i * d);
    return make_op(std::move(out), {a}, [a, idx, d](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* g = self.grad.data.data() + i * d;
            double* dst = a->grad.data.data() + idx[i] * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

// repeat a (1,D) or (D) row N times -> (N,D); backward sums rows
inline Var tile_rows(const Var& a, std::size_t n) {
    std::size_t d = a->value.numel();
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(a->value.data.data(), d, out.data.data() + i * d);
    return make_op(std::move(out), {a}, [a, n, d](Node& self) {
        Tensor g(a->value.shape, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g.data[j] += self.grad.data[i * d + j];
        a->add_grad(g);
    });
}

// ---- reductions ----

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    Tensor out({1});
    out.data[0] = s;
    return make_op(std::move(out), {a}, [a](Node& self) {
        Tensor g(a->value.shape, self.grad.data[0]);
        a->add_grad(g);
    });
}

inline Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel()));
}

// mean over the second-to-last axis of a (N,D) tensor -> (1,D)
inline Var mean_rows(const Var& a) {
    std::size_t n = a->value.shape[0], d = a->value.shape[1];
    Tensor out({1, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.data[j] += a->value.data[i * d + j];
    for (auto& v : out.data) v /= static_cast<double>(n);
    return make_op(std::move(out), {a}, [a, n, d](Node& self) {
        Tensor g(a->value.shape);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                g.data[i * d + j] = self.grad.data[j] / static_cast<double>(n);
        a->add_grad(g);
    });
}

// ---- activations & rowwise normalizers ----

inline Var relu(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {a}, [a](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (a->value.data[i] <= 0.0) g.data[i] = 0.0;
        a->add_grad(g);
    });
}

inline Var gelu(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475));
    return make_op(std::move(out), {a}, [a](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            double x = a->value.data[i];
            double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
            double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
            g.data[i] *= cdf + x * pdf;
        }
        a->add_grad(g);
    });
}

inline Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return make_op(std::move(out), {a}, [a](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            double y = self.value.data[i];
            g.data[i] *= y * (1.0 - y);
        }
        a->add_grad(g);
    });
}

// clamp into [lo,hi]; gradient is zero where clamped
inline Var clamp_op(const Var& a, double lo, double hi) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    return make_op(std::move(out), {a}, [a, lo, hi](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            double x = a->value.data[i];
            if (x < lo || x > hi) g.data[i] = 0.0;
        }
        a->add_grad(g);
    });
}

// log(max(x, floor)); gradient is zero where clamped
inline Var log_clamped(const Var& a, double floor = 1e-12) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::log(v < floor ? floor : v);
    return make_op(std::move(out), {a}, [a, floor](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            double x = a->value.data[i];
            g.data[i] = x < floor ? 0.0 : g.data[i] / x;
        }
        a->add_grad(g);
    });
}

// softmax over the last dim; additive masks go in before this
inline Var softmax_lastdim(const Var& a) {
    const Tensor& x = a->value;
    std::size_t d = x.shape[x.rank() - 1];
    std::size_t rows = x.numel() / d;
    Tensor out(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        double mx = xr[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::size_t j = 0; j < d; ++j) yr[j] /= sum;
    }
    return make_op(std::move(out), {a}, [a, d, rows](Node& self) {
        Tensor g(a->value.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + r * d;
            const double* go = self.grad.data.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += go[j] * y[j];
            double* gi = g.data.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) gi[j] = (go[j] - dot) * y[j];
        }
        a->add_grad(g);
    });
}

inline Var log_softmax_lastdim(const Var& a) {
    const Tensor& x = a->value;
    std::size_t d = x.shape[x.rank() - 1];
    std::size_t rows = x.numel() / d;
    Tensor out(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        double mx = xr[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) sum += std::exp(xr[j] - mx);
        double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < d; ++j) yr[j] = xr[j] - lse;
    }
    return make_op(std::move(out), {a}, [a, d, rows](Node& self) {
        Tensor g(a->value.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + r * d;
            const double* go = self.grad.data.data() + r * d;
            double gsum = 0.0;
            for (std::size_t j = 0; j < d; ++j) gsum += go[j];
            double* gi = g.data.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) gi[j] = go[j] - std::exp(y[j]) * gsum;
        }
        a->add_grad(g);
    });
}

// LayerNorm over the last dim with affine params gamma/beta of shape (D)
inline Var layernorm_lastdim(const Var& a, const Var& gamma, const Var& beta,
                             double eps = 1e-5) {
    const Tensor& x = a->value;
    std::size_t d = x.shape[x.rank() - 1];
    std::size_t rows = x.numel() / d;
    Tensor out(x.shape);
    Tensor xhat(x.shape);
    Tensor rstd({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double rs = 1.0 / std::sqrt(var + eps);
        rstd.data[r] = rs;
        double* hr = xhat.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mu) * rs;
            yr[j] = gamma->value.data[j] * hr[j] + beta->value.data[j];
        }
    }
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto rs = std::make_shared<Tensor>(std::move(rstd));
    return make_op(std::move(out), {a, gamma, beta},
                   [a, gamma, beta, xh, rs, d, rows](Node& self) {
                       if (gamma->requires_grad) {
                           Tensor gg(gamma->value.shape, 0.0);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < d; ++j)
                                   gg.data[j] += self.grad.data[r * d + j] * xh->data[r * d + j];
                           gamma->add_grad(gg);
                       }
                       if (beta->requires_grad) {
                           Tensor gb(beta->value.shape, 0.0);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < d; ++j)
                                   gb.data[j] += self.grad.data[r * d + j];
                           beta->add_grad(gb);
                       }
                       if (a->requires_grad) {
                           Tensor g(a->value.shape);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* go = self.grad.data.data() + r * d;
                               const double* hr = xh->data.data() + r * d;
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   double dh = go[j] * gamma->value.data[j];
                                   m1 += dh;
                                   m2 += dh * hr[j];
                               }
                               m1 /= static_cast<double>(d);
                               m2 /= static_cast<double>(d);
                               double* gi = g.data.data() + r * d;
                               for (std::size_t j = 0; j < d; ++j) {
                                   double dh = go[j] * gamma->value.data[j];
                                   gi[j] = (dh - m1 - hr[j] * m2) * rs->data[r];
                               }
                           }
                           a->add_grad(g);
                       }
                   });
}

// ---- lookup ops ----

// embedding rows table(V,D)[ids] -> (T,D)
inline Var embedding(const Var& table, const std::vector<int>& ids) {
    std::size_t d = table->value.shape[1];
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table->value.data.data() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.data.data() + i * d);
    return make_op(std::move(out), {table}, [table, ids, d](Node& self) {
        table->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const double* g = self.grad.data.data() + i * d;
            double* dst = table->grad.data.data() + static_cast<std::size_t>(ids[i]) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

// pick x(R,V)[r, ids[r]] -> (R)
inline Var take_lastdim(const Var& a, const std::vector<int>& ids) {
    std::size_t v = a->value.shape[1];
    Tensor out({ids.size()});
    for (std::size_t r = 0; r < ids.size(); ++r)
        out.data[r] = a->value.data[r * v + static_cast<std::size_t>(ids[r])];
    return make_op(std::move(out), {a}, [a, ids, v](Node& self) {
        a->ensure_grad();
        for (std::size_t r = 0; r < ids.size(); ++r)
            a->grad.data[r * v + static_cast<std::size_t>(ids[r])] += self.grad.data[r];
    });
}

inline Var stop_gradient(const Var& a) { return constant(a->value); }

} // namespace vitas
