#pragma once

// Adam optimizer over the encoder's parameter tensors, with bias-corrected
// first and second moments. State is exposed for checkpointing.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wch/common.hpp"
#include "wch/tensor.hpp"

namespace wch {

template <typename S>
class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    // Registers the parameter tensors (borrowed; caller keeps them alive)
    // and zero-initializes both moment buffers.
    void attach(const std::vector<std::pair<std::string, Tensor<S>*>>& params) {
        params_.clear();
        m_.clear();
        v_.clear();
        step_count_ = 0;
        for (const auto& [name, t] : params) {
            (void)name;
            params_.push_back(t);
            m_.emplace_back(t->size(), S(0));
            v_.emplace_back(t->size(), S(0));
        }
    }

    // One bias-corrected update from the gradients currently accumulated in
    // the parameters. A parameter with no gradient buffer contributes a zero
    // gradient (its moments decay).
    void step(double lr) {
        if (params_.empty())
            throw ParameterError("adam: step before attach");
        ++step_count_;
        const double bc1 =
            1.0 - std::pow(beta1, static_cast<double>(step_count_));
        const double bc2 =
            1.0 - std::pow(beta2, static_cast<double>(step_count_));
        for (size_t p = 0; p < params_.size(); ++p) {
            Tensor<S>& t = *params_[p];
            const bool has = t.has_grad();
            const std::vector<S>* g = has ? &t.grad() : nullptr;
            std::vector<S>& m = m_[p];
            std::vector<S>& v = v_[p];
            std::vector<S>& x = t.values();
            for (size_t i = 0; i < x.size(); ++i) {
                const double gi = has ? static_cast<double>((*g)[i]) : 0.0;
                if (!std::isfinite(gi))
                    throw NumericError(
                        "adam: non-finite gradient in parameter " +
                        std::to_string(p) + " at coordinate " +
                        std::to_string(i));
                const double mi = beta1 * static_cast<double>(m[i]) +
                                  (1.0 - beta1) * gi;
                const double vi = beta2 * static_cast<double>(v[i]) +
                                  (1.0 - beta2) * gi * gi;
                m[i] = static_cast<S>(mi);
                v[i] = static_cast<S>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                x[i] = static_cast<S>(static_cast<double>(x[i]) -
                                      lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }

    int64_t steps() const { return step_count_; }
    size_t parameter_count() const { return params_.size(); }

    // Checkpoint access: moments by parameter index, and the step counter.
    std::vector<std::vector<S>>& first_moments() { return m_; }
    std::vector<std::vector<S>>& second_moments() { return v_; }
    const std::vector<std::vector<S>>& first_moments() const { return m_; }
    const std::vector<std::vector<S>>& second_moments() const { return v_; }
    void set_steps(int64_t n) {
        if (n < 0) throw ParameterError("adam: negative step count");
        step_count_ = n;
    }

private:
    std::vector<Tensor<S>*> params_;
    std::vector<std::vector<S>> m_, v_;
    int64_t step_count_ = 0;
};

// Cosine decay from the initial rate to zero across `total_steps`; step
// indices are 0-based. A constant schedule returns the base rate unchanged.
inline double cosine_lr(double base, int64_t step, int64_t total_steps) {
    if (total_steps < 1)
        throw ParameterError("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step >= total_steps)
        throw ParameterError("cosine_lr: step " + std::to_string(step) +
                             " outside [0, " + std::to_string(total_steps) +
                             ")");
    const double frac =
        static_cast<double>(step) / static_cast<double>(total_steps);
    return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace wch
