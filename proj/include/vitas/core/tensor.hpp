#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitas {

// Dense row-major tensor of doubles, rank <= 4.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(numel_of(shape), fill) {}

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }

    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    double& at3(std::size_t b, std::size_t i, std::size_t j) {
        return data[(b * shape[1] + i) * shape[2] + j];
    }
    double at3(std::size_t b, std::size_t i, std::size_t j) const {
        return data[(b * shape[1] + i) * shape[2] + j];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i)
            s += std::to_string(shape[i]) + (i + 1 < shape.size() ? "," : "");
        return s + ")";
    }
};

inline std::vector<std::size_t> strides_of(const std::vector<std::size_t>& shape) {
    std::vector<std::size_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * shape[i + 1];
    return st;
}

// Broadcast result shape per the usual trailing-alignment rule.
inline std::vector<std::size_t> broadcast_shape(const std::vector<std::size_t>& a,
                                                const std::vector<std::size_t>& b) {
    std::size_t r = std::max(a.size(), b.size());
    std::vector<std::size_t> out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast mismatch");
        out[i] = std::max(da, db);
    }
    return out;
}

namespace kern {

// C(m,n) += A(m,k) * B(k,n)
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C(m,n) += A(m,k) * B(n,k)^T
inline void matmul_nt_acc(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C(m,n) += A(k,m)^T * B(k,n)
inline void matmul_tn_acc(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

} // namespace kern

// Sum `g` down to `target` shape (inverse of broadcasting).
inline Tensor reduce_to_shape(const Tensor& g, const std::vector<std::size_t>& target) {
    if (g.shape == target) return g;
    Tensor out(target, 0.0);
    const auto gs = strides_of(g.shape);
    const std::size_t r = g.rank();
    // target aligned to trailing dims of g
    std::vector<std::size_t> tdim(r, 1);
    for (std::size_t i = 0; i < target.size(); ++i)
        tdim[r - target.size() + i] = target[i];
    std::vector<std::size_t> tstride(r, 0);
    {
        std::size_t acc = 1;
        for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
            if (tdim[i] != 1) {
                tstride[i] = acc;
                acc *= tdim[i];
            }
        }
    }
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t lin = 0; lin < g.numel(); ++lin) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i)
            if (tdim[i] != 1) off += idx[i] * tstride[i];
        out.data[off] += g.data[lin];
        for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
            if (++idx[i] < g.shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

} // namespace vitas
