#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dag/tensor.hpp"

namespace dag::nn {

struct AdamSettings {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named parameters with parallel gradient and Adam moment slots. Exactly one
/// writer (the trainer); forward passes read a frozen snapshot.
template <typename S>
class ParamStore {
  public:
    void add(const std::string& name, Tensor<S> init) {
        if (entries_.count(name)) throw StateError("parameter already registered: " + name);
        Entry e;
        e.grad = Tensor<S>::zeros(init.rows, init.cols);
        e.m = e.grad;
        e.v = e.grad;
        e.value = std::move(init);
        entries_.emplace(name, std::move(e));
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor<S>& value(const std::string& name) { return find(name).value; }
    const Tensor<S>& value(const std::string& name) const { return find(name).value; }
    const Tensor<S>& grad(const std::string& name) const { return find(name).grad; }

    /// Adds `g` into the gradient slot and marks it populated.
    void accumulate_grad(const std::string& name, const Tensor<S>& g) {
        Entry& e = find(name);
        require_same_shape(e.grad, g, "accumulate_grad");
        for (std::size_t i = 0; i < g.numel(); ++i) e.grad.data[i] += g.data[i];
        e.grad_populated = true;
    }

    void zero_grads() {
        for (auto& [name, e] : entries_) {
            for (auto& v : e.grad.data) v = S(0);
            e.grad_populated = false;
        }
    }

    std::size_t step_count() const { return step_count_; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, e] : entries_) out.push_back(name);
        return out;
    }

    std::size_t total_parameters() const {
        std::size_t n = 0;
        for (const auto& [name, e] : entries_) n += e.value.numel();
        return n;
    }

    /// Adam with bias correction. Weight decay folds into the gradient
    /// (g += wd * theta) before the moment update; gradients are zeroed
    /// afterward. Requires every parameter's gradient to be populated.
    void adam_step(const AdamSettings& s) {
        for (const auto& [name, e] : entries_)
            if (!e.grad_populated)
                throw StateError("adam_step: gradient not populated for parameter " + name);
        ++step_count_;
        const double bc1 = 1.0 - std::pow(s.beta1, double(step_count_));
        const double bc2 = 1.0 - std::pow(s.beta2, double(step_count_));
        for (auto& [name, e] : entries_) {
            for (std::size_t i = 0; i < e.value.numel(); ++i) {
                const double g = double(e.grad.data[i]) + s.weight_decay * double(e.value.data[i]);
                const double m = s.beta1 * double(e.m.data[i]) + (1.0 - s.beta1) * g;
                const double v = s.beta2 * double(e.v.data[i]) + (1.0 - s.beta2) * g * g;
                e.m.data[i] = S(m);
                e.v.data[i] = S(v);
                const double update = s.lr * (m / bc1) / (std::sqrt(v / bc2) + s.eps);
                e.value.data[i] = S(double(e.value.data[i]) - update);
            }
            require_finite(e.value, "adam_step");
            for (auto& v : e.grad.data) v = S(0);
            e.grad_populated = false;
        }
    }

    /// Deterministic snapshot/restore for early stopping.
    std::map<std::string, Tensor<S>> snapshot_values() const {
        std::map<std::string, Tensor<S>> out;
        for (const auto& [name, e] : entries_) out.emplace(name, e.value);
        return out;
    }
    void restore_values(const std::map<std::string, Tensor<S>>& snap) {
        for (const auto& [name, t] : snap) find(name).value = t;
    }

    template <typename F>
    void for_each(F&& f) {
        for (auto& [name, e] : entries_) f(name, e.value, e.grad);
    }
    template <typename F>
    void for_each_const(F&& f) const {
        for (const auto& [name, e] : entries_) f(name, e.value);
    }

  private:
    struct Entry {
        Tensor<S> value;
        Tensor<S> grad;
        Tensor<S> m;
        Tensor<S> v;
        bool grad_populated = false;
    };

    Entry& find(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }
    const Entry& find(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }

    std::map<std::string, Entry> entries_;  // ordered: deterministic iteration
    std::size_t step_count_ = 0;
};

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight initialization.
template <typename S>
Tensor<S> init_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in,
                       std::mt19937& rng) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<S> t(rows, cols);
    for (auto& v : t.data) v = S(dist(rng));
    return t;
}

}  // namespace dag::nn
