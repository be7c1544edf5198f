#include "paracolor/nn/layers.hpp"

#include <cmath>

#include "paracolor/error.hpp"

namespace paracolor::nn {

Var ParameterRegistry::add_parameter(std::string name, Tensor init) {
    check_unique(name);
    Var v(std::move(init), true);
    parameters_.push_back({std::move(name), v});
    return v;
}

Var ParameterRegistry::add_buffer(std::string name, Tensor init) {
    check_unique(name);
    Var v(std::move(init), false);
    buffers_.push_back({std::move(name), v});
    return v;
}

std::int64_t ParameterRegistry::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters_) n += p.var.value().size();
    return n;
}

void ParameterRegistry::check_unique(const std::string& name) const {
    for (const auto& p : parameters_)
        if (p.name == name) throw UsageError("duplicate parameter name " + name);
    for (const auto& b : buffers_)
        if (b.name == name) throw UsageError("duplicate buffer name " + name);
}

Conv2d::Conv2d(ParameterRegistry& registry, const std::string& prefix, int in_channels, int out_channels, int kernel,
               int stride, int padding, bool bias, std::mt19937_64& rng)
    : stride_(stride), padding_(padding) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1) throw UsageError("conv " + prefix + ": invalid sizes");
    Tensor w(Shape{out_channels, in_channels, kernel, kernel});
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_channels * kernel * kernel)));
    for (double& v : w.values()) v = dist(rng);
    weight_ = registry.add_parameter(prefix + ".weight", std::move(w));
    if (bias) bias_ = registry.add_parameter(prefix + ".bias", Tensor(Shape{out_channels}, 0.0));
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

std::int64_t Conv2d::parameter_count(int in_channels, int out_channels, int kernel, bool bias) {
    return static_cast<std::int64_t>(out_channels) * in_channels * kernel * kernel + (bias ? out_channels : 0);
}

NormKind norm_kind_from_string(const std::string& name) {
    if (name == "none") return NormKind::none;
    if (name == "batch") return NormKind::batch;
    if (name == "instance") return NormKind::instance;
    throw UsageError("unknown normalization '" + name + "'");
}

std::string to_string(NormKind kind) {
    switch (kind) {
        case NormKind::none: return "none";
        case NormKind::batch: return "batch";
        case NormKind::instance: return "instance";
    }
    return "none";
}

Norm2d::Norm2d(ParameterRegistry& registry, const std::string& prefix, int channels, NormKind kind) : kind_(kind) {
    if (kind == NormKind::none) return;
    gamma_ = registry.add_parameter(prefix + ".gamma", Tensor(Shape{channels}, 1.0));
    beta_ = registry.add_parameter(prefix + ".beta", Tensor(Shape{channels}, 0.0));
    if (kind == NormKind::batch) {
        running_mean_ = registry.add_buffer(prefix + ".running_mean", Tensor(Shape{channels}, 0.0));
        running_var_ = registry.add_buffer(prefix + ".running_var", Tensor(Shape{channels}, 1.0));
    }
}

Var Norm2d::operator()(const Var& x, bool training) {
    constexpr double eps = 1e-5;
    switch (kind_) {
        case NormKind::none: return x;
        case NormKind::batch: return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training, 0.1, eps);
        case NormKind::instance: return instance_norm(x, gamma_, beta_, eps);
    }
    return x;
}

std::int64_t Norm2d::parameter_count(int channels, NormKind kind) { return kind == NormKind::none ? 0 : 2 * channels; }

}  // namespace paracolor::nn
