#include "paracolor/nn/optim.hpp"

#include <cmath>

#include "paracolor/error.hpp"

namespace paracolor::nn {

Adam::Adam(std::vector<NamedVar> parameters, AdamOptions options)
    : parameters_(std::move(parameters)), options_(options) {
    if (!(options.lr >= 0.0) || options.beta1 < 0.0 || options.beta1 >= 1.0 || options.beta2 < 0.0 ||
        options.beta2 >= 1.0)
        throw UsageError("invalid Adam hyper-parameters");
    for (const auto& p : parameters_) {
        state_.first_moment.emplace_back(p.var.shape(), 0.0);
        state_.second_moment.emplace_back(p.var.shape(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : parameters_) p.var.zero_grad();
}

void Adam::step() {
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t k = 0; k < parameters_.size(); ++k) {
        Var& p = parameters_[k].var;
        if (!p.has_grad()) continue;
        const Tensor& g = p.grad();
        Tensor& m = state_.first_moment[k];
        Tensor& v = state_.second_moment[k];
        Tensor& w = p.mutable_value();
        for (std::int64_t i = 0; i < w.size(); ++i) {
            m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
            v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
            w[i] -= options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
        }
    }
}

void Adam::load_state(AdamState state) {
    if (state.first_moment.size() != parameters_.size() || state.second_moment.size() != parameters_.size())
        throw DataError("optimizer state does not match parameter count");
    for (std::size_t k = 0; k < parameters_.size(); ++k)
        if (state.first_moment[k].shape() != parameters_[k].var.shape() ||
            state.second_moment[k].shape() != parameters_[k].var.shape())
            throw DataError("optimizer state shape mismatch for " + parameters_[k].name);
    state_ = std::move(state);
}

}  // namespace paracolor::nn
