#pragma once

#include <vector>

#include "paracolor/nn/layers.hpp"

namespace paracolor::nn {

struct AdamOptions {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment estimates, one pair per parameter in registration order.
struct AdamState {
    std::int64_t step = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
};

class Adam {
public:
    Adam(std::vector<NamedVar> parameters, AdamOptions options);

    void zero_grad();
    /// Applies one bias-corrected update from the accumulated gradients.
    void step();

    const AdamOptions& options() const noexcept { return options_; }
    const AdamState& state() const noexcept { return state_; }
    void load_state(AdamState state);

private:
    std::vector<NamedVar> parameters_;
    AdamOptions options_;
    AdamState state_;
};

}  // namespace paracolor::nn
