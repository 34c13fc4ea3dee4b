#pragma once

#include <cmath>
#include <vector>

#include "nn.hpp"

namespace vitas {

// Adam with decoupled weight decay. Decay skips rank<2 tensors
// (biases, norms, single embedding rows).
class AdamW {
  public:
    AdamW(std::vector<Var> params, double lr, double weight_decay = 0.0,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2),
          eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.shape, 0.0);
            v_.emplace_back(p->value.shape, 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad();
            std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
        }
    }

    void step(double lr_scale = 1.0) {
        ++t_;
        const double lr = lr_ * lr_scale;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (p->grad.data.empty()) continue;
            const bool decay = wd_ > 0.0 && p->value.rank() >= 2;
            for (std::size_t j = 0; j < p->value.numel(); ++j) {
                double g = p->grad.data[j];
                m_[i].data[j] = b1_ * m_[i].data[j] + (1.0 - b1_) * g;
                v_[i].data[j] = b2_ * v_[i].data[j] + (1.0 - b2_) * g * g;
                double mhat = m_[i].data[j] / bc1;
                double vhat = v_[i].data[j] / bc2;
                double upd = mhat / (std::sqrt(vhat) + eps_);
                if (decay) upd += wd_ * p->value.data[j];
                p->value.data[j] -= lr * upd;
            }
        }
    }

    long steps_taken() const { return t_; }

  private:
    std::vector<Var> params_;
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Linear warmup then cosine decay to zero over `total` steps.
inline double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup) {
    if (total == 0) return 1.0;
    if (warmup > total / 10) warmup = total / 10; // degenerate warmup configs collapse here
    if (warmup > 0 && step < warmup)
        return static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total <= warmup) return 1.0;
    double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    if (progress > 1.0) progress = 1.0;
    return 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

} // namespace vitas
