#pragma once

#include <cmath>

#include "damkit/num/tensor.hpp"

namespace damkit::num {

template <class T>
void sgd_step(const ParamRefs<T>& params, double lr) {
    for (auto* p : params)
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= static_cast<T>(lr * p->grad[i]);
}

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam; moment estimates live on each Param.
template <class T>
void adam_step(const ParamRefs<T>& params, const AdamOptions& o) {
    for (auto* p : params) {
        if (p->adam_m.shape() != p->value.shape()) {
            p->adam_m = Tensor<T>(p->value.shape());
            p->adam_v = Tensor<T>(p->value.shape());
            p->adam_t = 0;
        }
        ++p->adam_t;
        const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(p->adam_t));
        const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(p->adam_t));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            const double m = o.beta1 * p->adam_m[i] + (1.0 - o.beta1) * g;
            const double v = o.beta2 * p->adam_v[i] + (1.0 - o.beta2) * g * g;
            p->adam_m[i] = static_cast<T>(m);
            p->adam_v[i] = static_cast<T>(v);
            p->value[i] -= static_cast<T>(o.lr * (m / c1) / (std::sqrt(v / c2) + o.eps));
        }
    }
}

template <class T>
void adam_step(const ParamRefs<T>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    adam_step(params, AdamOptions{lr, beta1, beta2, eps});
}

}  // namespace damkit::num
