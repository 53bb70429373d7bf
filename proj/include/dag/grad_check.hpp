#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dag/param_store.hpp"

namespace dag::nn {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_analytic = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool pass = true;
};

/// Central finite differences against the analytic gradients produced by
/// `loss_fn`. The closure must return the loss for the current parameter
/// values and accumulate analytic gradients into the store (they are zeroed
/// here before each analytic evaluation and ignored during FD probes).
/// Relative error per entry: |a - f| / max(|a|, |f|, 1e-8).
inline GradCheckReport grad_check(const std::function<double(ParamStore<double>&)>& loss_fn,
                                  ParamStore<double>& store, double epsilon, double tolerance) {
    GradCheckReport report;

    store.zero_grads();
    const double base_loss = loss_fn(store);
    if (!std::isfinite(base_loss)) throw NumericError("grad_check: non-finite loss");

    std::map<std::string, Tensor<double>> analytic;
    store.for_each([&](const std::string& name, Tensor<double>&, Tensor<double>& g) {
        analytic.emplace(name, g);
    });

    for (const auto& name : store.names()) {
        GradCheckEntry entry;
        entry.name = name;
        Tensor<double>& theta = store.value(name);
        const Tensor<double>& a = analytic.at(name);
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            const double saved = theta.data[i];
            theta.data[i] = saved + epsilon;
            store.zero_grads();
            const double lp = loss_fn(store);
            theta.data[i] = saved - epsilon;
            store.zero_grads();
            const double lm = loss_fn(store);
            theta.data[i] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw NumericError("grad_check: non-finite loss while probing " + name);
            const double fd = (lp - lm) / (2.0 * epsilon);
            const double an = a.data[i];
            const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-8});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::fabs(an));
        }
        entry.pass = entry.max_rel_err <= tolerance;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.pass = report.pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    store.zero_grads();
    return report;
}

}  // namespace dag::nn
