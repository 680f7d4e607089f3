#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "damkit/error.hpp"
#include "damkit/num/graph.hpp"
#include "damkit/rng.hpp"

namespace damkit::num {

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-6;
    // Entries probed per Param by single-coordinate differences; 0 probes all.
    std::size_t max_entries_per_param = 0;
    // Adds one random-direction probe per Param, which covers every entry at once.
    bool directional = true;
    std::uint64_t seed = 7;
    // Guards the relative error against two near-zero gradients.
    double denom_floor = 1e-6;
};

struct ParamCheck {
    std::string name;
    std::size_t entries = 0;
    std::size_t entries_checked = 0;
    double max_rel_err = 0.0;
    double directional_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool passed = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Compares the analytic gradient of a scalar computation against central
/// differences. `loss_fn(Graph<double>&)` must build the computation from the
/// given params and return its scalar output.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, const ParamRefs<double>& params, const GradCheckOptions& opt = {}) {
    auto eval = [&] {
        Graph<double> g(true);
        return loss_fn(g).value()[0];
    };

    const double f0 = eval();
    if (eval() != f0) throw NonDeterministic("grad_check: two forward passes disagree");

    zero_grads(params);
    {
        Graph<double> g(true);
        auto loss = loss_fn(g);
        g.backward(loss);
    }

    GradCheckReport report;
    report.tol = opt.tol;
    CounterRng rng(opt.seed);
    const double h = opt.h;

    for (auto* p : params) {
        ParamCheck pc;
        pc.name = p->name;
        pc.entries = p->value.size();
        const Tensor<double> analytic = p->grad;

        std::vector<std::size_t> idx(pc.entries);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (opt.max_entries_per_param && idx.size() > opt.max_entries_per_param) {
            damkit::shuffle(idx, rng);
            idx.resize(opt.max_entries_per_param);
            std::sort(idx.begin(), idx.end());
        }
        for (const auto i : idx) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double fp = eval();
            p->value[i] = saved - h;
            const double fm = eval();
            p->value[i] = saved;
            const double numeric = (fp - fm) / (2 * h);
            pc.max_rel_err = std::max(pc.max_rel_err, relative_error(analytic[i], numeric, opt.denom_floor));
        }
        pc.entries_checked = idx.size();

        if (opt.directional) {
            const Tensor<double> saved = p->value;
            const auto dir = Tensor<double>::randn(saved.shape(), rng, 1.0);
            double predicted = 0.0;
            for (std::size_t i = 0; i < dir.size(); ++i) predicted += analytic[i] * dir[i];
            for (std::size_t i = 0; i < dir.size(); ++i) p->value[i] = saved[i] + h * dir[i];
            const double fp = eval();
            for (std::size_t i = 0; i < dir.size(); ++i) p->value[i] = saved[i] - h * dir[i];
            const double fm = eval();
            p->value = saved;
            pc.directional_rel_err = relative_error(predicted, (fp - fm) / (2 * h), opt.denom_floor);
        }

        report.max_rel_err = std::max({report.max_rel_err, pc.max_rel_err, pc.directional_rel_err});
        report.params.push_back(std::move(pc));
    }
    report.passed = report.max_rel_err <= opt.tol;
    return report;
}

}  // namespace damkit::num
