#pragma once

#include <random>
#include <string>
#include <vector>

#include "paracolor/nn/autograd.hpp"

namespace paracolor::nn {

struct NamedVar {
    std::string name;
    Var var;
};

/// Ordered collection of trainable parameters and non-trainable buffers.
/// Registration order defines the checkpoint layout.
class ParameterRegistry {
public:
    Var add_parameter(std::string name, Tensor init);
    Var add_buffer(std::string name, Tensor init);

    const std::vector<NamedVar>& parameters() const noexcept { return parameters_; }
    const std::vector<NamedVar>& buffers() const noexcept { return buffers_; }
    std::int64_t parameter_count() const;

private:
    void check_unique(const std::string& name) const;

    std::vector<NamedVar> parameters_;
    std::vector<NamedVar> buffers_;
};

/// He-normal initialized convolution.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterRegistry& registry, const std::string& prefix, int in_channels, int out_channels, int kernel,
           int stride, int padding, bool bias, std::mt19937_64& rng);

    Var operator()(const Var& x) const;

    int in_channels() const { return weight_.dim(1); }
    int out_channels() const { return weight_.dim(0); }
    int kernel() const { return weight_.dim(2); }
    int stride() const noexcept { return stride_; }
    int padding() const noexcept { return padding_; }

    static std::int64_t parameter_count(int in_channels, int out_channels, int kernel, bool bias);

private:
    Var weight_;
    Var bias_;
    int stride_ = 1;
    int padding_ = 0;
};

enum class NormKind { none, batch, instance };

NormKind norm_kind_from_string(const std::string& name);
std::string to_string(NormKind kind);

class Norm2d {
public:
    Norm2d() = default;
    Norm2d(ParameterRegistry& registry, const std::string& prefix, int channels, NormKind kind);

    Var operator()(const Var& x, bool training);

    NormKind kind() const noexcept { return kind_; }
    static std::int64_t parameter_count(int channels, NormKind kind);

private:
    NormKind kind_ = NormKind::none;
    Var gamma_, beta_, running_mean_, running_var_;
};

}  // namespace paracolor::nn
