#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "paracolor/data/color.hpp"
#include "paracolor/edgemap.hpp"
#include "paracolor/nn/autograd.hpp"

namespace paracolor::losses {

struct LossWeights {
    double lambda_edge = 1.0;   // foreground edge term
    double lambda_l1 = 100.0;   // foreground L1 term
    double lambda_bg = 100.0;   // background L1 term
    double lambda_ssim = 1.0;   // fusion SSIM term

    void validate() const;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights weights_from_json(const nlohmann::json& j, LossWeights defaults = {});

enum class AdversarialFlavor { least_squares, log };
enum class Target { real, fake };

std::string to_string(AdversarialFlavor flavor);
AdversarialFlavor flavor_from_string(const std::string& name);

/// least_squares: mean (s - label)^2 with label 1 (real) or 0 (fake).
/// log: binary cross-entropy of sigmoid(s) against the label, computed from logits.
nn::Var adversarial_loss(const nn::Var& scores, Target target, AdversarialFlavor flavor);

nn::Var l1_loss(const nn::Var& pred, const nn::Var& truth);
nn::Var mse_loss(const nn::Var& pred, const nn::Var& truth);

enum class EdgeMode { hard, soft };

/// Mean absolute difference of soft edge responses over the three Lab
/// channels of N x 3 x H x W normalized Lab tensors (mapped to [0,1] first).
nn::Var edge_loss_soft(const nn::Var& colorized_lab, const nn::Var& truth_lab);

/// Mean absolute difference of Canny masks over the three Lab channels.
double edge_loss_hard(const data::LabImage& colorized, const data::LabImage& truth,
                      const edge::CannyOptions& options = {});

double edge_loss(const data::LabImage& colorized, const data::LabImage& truth, EdgeMode mode);

/// L concatenated with ab along channels.
nn::Var compose_lab(const nn::Var& lightness, const nn::Var& chroma);

/// Differentiable mean SSIM over channels with a Gaussian window (valid region).
nn::Var ssim(const nn::Var& a, const nn::Var& b, int window = 11, double sigma = 1.5, double max_value = 1.0);

struct Component {
    std::string name;
    double value = 0.0;
    double weight = 1.0;
};

struct Breakdown {
    double total = 0.0;
    std::vector<Component> components;

    double value(const std::string& name) const;
    double weighted_sum() const;
    nlohmann::json to_json() const;
};

struct Objective {
    nn::Var total;
    Breakdown breakdown;
};

/// adversarial(real) + lambda_edge * soft edge + lambda_l1 * L1, on generator
/// output ab against truth ab with the shared lightness.
Objective foreground_objective(const nn::Var& lightness, const nn::Var& gen_ab, const nn::Var& truth_ab,
                               const nn::Var& disc_scores, const LossWeights& weights,
                               AdversarialFlavor flavor = AdversarialFlavor::least_squares);

/// lambda_l1 * L1, plus lambda_edge * soft edge when `with_edge` is set.
Objective pretrain_objective(const nn::Var& lightness, const nn::Var& gen_ab, const nn::Var& truth_ab,
                             const LossWeights& weights, bool with_edge);

/// adversarial(real) + lambda_bg * L1.
Objective background_objective(const nn::Var& gen_ab, const nn::Var& truth_ab, const nn::Var& disc_scores,
                               const LossWeights& weights,
                               AdversarialFlavor flavor = AdversarialFlavor::least_squares);

/// 0.5 * (adversarial(real scores, real) + adversarial(fake scores, fake)).
Objective discriminator_objective(const nn::Var& real_scores, const nn::Var& fake_scores,
                                  AdversarialFlavor flavor = AdversarialFlavor::least_squares);

/// MSE + lambda_ssim * (1 - SSIM).
Objective fusion_objective(const nn::Var& reconstruction, const nn::Var& target, double lambda_ssim,
                           int ssim_window = 11);

}  // namespace paracolor::losses
