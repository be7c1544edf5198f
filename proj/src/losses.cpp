#include "paracolor/losses.hpp"

#include <cmath>

#include "paracolor/error.hpp"

namespace paracolor::losses {

using nlohmann::json;

void LossWeights::validate() const {
    for (double w : {lambda_edge, lambda_l1, lambda_bg, lambda_ssim})
        if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("loss weights must be finite and non-negative");
}

json to_json(const LossWeights& w) {
    return json{{"lambda_edge", w.lambda_edge},
                {"lambda_l1", w.lambda_l1},
                {"lambda_bg", w.lambda_bg},
                {"lambda_ssim", w.lambda_ssim}};
}

LossWeights weights_from_json(const json& j, LossWeights w) {
    if (!j.is_object()) throw UsageError("weights must be an object");
    for (const auto& [key, value] : j.items()) {
        if (key == "lambda_edge") w.lambda_edge = value.get<double>();
        else if (key == "lambda_l1") w.lambda_l1 = value.get<double>();
        else if (key == "lambda_bg") w.lambda_bg = value.get<double>();
        else if (key == "lambda_ssim") w.lambda_ssim = value.get<double>();
        else throw UsageError("unknown loss weight '" + key + "'");
    }
    w.validate();
    return w;
}

std::string to_string(AdversarialFlavor flavor) {
    return flavor == AdversarialFlavor::least_squares ? "least_squares" : "log";
}

AdversarialFlavor flavor_from_string(const std::string& name) {
    if (name == "least_squares" || name == "lsgan") return AdversarialFlavor::least_squares;
    if (name == "log" || name == "bce") return AdversarialFlavor::log;
    throw UsageError("unknown adversarial flavor '" + name + "'");
}

nn::Var adversarial_loss(const nn::Var& scores, Target target, AdversarialFlavor flavor) {
    const bool real = target == Target::real;
    if (flavor == AdversarialFlavor::least_squares)
        return nn::mean(nn::square(real ? nn::add_scalar(scores, -1.0) : scores));
    // -log sigmoid(s) = softplus(-s); -log(1 - sigmoid(s)) = softplus(s)
    return nn::mean(nn::softplus(real ? nn::scale(scores, -1.0) : scores));
}

namespace {

void check_same(const nn::Var& a, const nn::Var& b, const char* what) {
    if (a.shape() != b.shape())
        throw UsageError(std::string(what) + ": shape mismatch " + nn::shape_string(a.shape()) + " vs " +
                         nn::shape_string(b.shape()));
}

nn::Var to_unit(const nn::Var& x) { return nn::scale(nn::add_scalar(x, 1.0), 0.5); }

}  // namespace

nn::Var l1_loss(const nn::Var& pred, const nn::Var& truth) {
    check_same(pred, truth, "l1_loss");
    return nn::mean(nn::abs(nn::sub(pred, truth)));
}

nn::Var mse_loss(const nn::Var& pred, const nn::Var& truth) {
    check_same(pred, truth, "mse_loss");
    return nn::mean(nn::square(nn::sub(pred, truth)));
}

nn::Var compose_lab(const nn::Var& lightness, const nn::Var& chroma) {
    return nn::concat_channels({lightness, chroma});
}

nn::Var edge_loss_soft(const nn::Var& colorized_lab, const nn::Var& truth_lab) {
    check_same(colorized_lab, truth_lab, "edge_loss");
    return nn::mean(nn::abs(nn::sub(edge::soft_edge(to_unit(colorized_lab)), edge::soft_edge(to_unit(truth_lab)))));
}

double edge_loss_hard(const data::LabImage& colorized, const data::LabImage& truth, const edge::CannyOptions& options) {
    if (colorized.height != truth.height || colorized.width != truth.width)
        throw UsageError("edge_loss: images differ in size");
    const std::size_t plane = truth.plane();
    auto channel = [&](const data::LabImage& img, int c) {
        data::GrayImage g(img.height, img.width);
        const double* src = c == 0 ? img.l.data() : img.ab.data() + (c - 1) * plane;
        for (std::size_t i = 0; i < plane; ++i) g.pixels[i] = (src[i] + 1.0) / 2.0;
        return g;
    };
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const auto m1 = edge::canny(channel(colorized, c), options);
        const auto m2 = edge::canny(channel(truth, c), options);
        std::size_t diff = 0;
        for (std::size_t i = 0; i < plane; ++i) diff += m1.mask[i] != m2.mask[i];
        total += static_cast<double>(diff) / static_cast<double>(plane);
    }
    return total / 3.0;
}

double edge_loss(const data::LabImage& colorized, const data::LabImage& truth, EdgeMode mode) {
    if (mode == EdgeMode::hard) return edge_loss_hard(colorized, truth);
    if (colorized.height != truth.height || colorized.width != truth.width)
        throw UsageError("edge_loss: images differ in size");
    nn::NoGradGuard guard;
    auto as_var = [](const data::LabImage& img) {
        std::vector<double> v(img.l);
        v.insert(v.end(), img.ab.begin(), img.ab.end());
        return nn::Var(nn::Tensor(nn::Shape{1, 3, img.height, img.width}, std::move(v)));
    };
    return edge_loss_soft(as_var(colorized), as_var(truth)).item();
}

nn::Var ssim(const nn::Var& a, const nn::Var& b, int window, double sigma, double max_value) {
    check_same(a, b, "ssim");
    if (a.value().rank() != 4) throw UsageError("ssim expects N x C x H x W tensors");
    if (window < 1 || window % 2 == 0) throw UsageError("ssim window must be a positive odd size");
    if (a.dim(2) < window || a.dim(3) < window)
        throw UsageError("image " + std::to_string(a.dim(2)) + "x" + std::to_string(a.dim(3)) +
                         " is smaller than the SSIM window " + std::to_string(window));
    nn::Tensor kernel(nn::Shape{window, window});
    const int r = window / 2;
    double total = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double g = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            kernel[(y + r) * window + (x + r)] = g;
            total += g;
        }
    kernel.scale_(1.0 / total);
    const double c1 = std::pow(0.01 * max_value, 2), c2 = std::pow(0.03 * max_value, 2);
    auto blur = [&](const nn::Var& v) { return nn::depthwise_fixed(v, kernel); };
    const nn::Var mu_a = blur(a), mu_b = blur(b);
    const nn::Var mu_aa = nn::square(mu_a), mu_bb = nn::square(mu_b), mu_ab = nn::mul(mu_a, mu_b);
    const nn::Var var_a = nn::sub(blur(nn::square(a)), mu_aa);
    const nn::Var var_b = nn::sub(blur(nn::square(b)), mu_bb);
    const nn::Var cov = nn::sub(blur(nn::mul(a, b)), mu_ab);
    const nn::Var num = nn::mul(nn::add_scalar(nn::scale(mu_ab, 2.0), c1), nn::add_scalar(nn::scale(cov, 2.0), c2));
    const nn::Var den = nn::mul(nn::add_scalar(nn::add(mu_aa, mu_bb), c1), nn::add_scalar(nn::add(var_a, var_b), c2));
    return nn::mean(nn::div(num, den));
}

double Breakdown::value(const std::string& name) const {
    for (const auto& c : components)
        if (c.name == name) return c.value;
    throw UsageError("no loss component named " + name);
}

double Breakdown::weighted_sum() const {
    double s = 0.0;
    for (const auto& c : components) s += c.weight * c.value;
    return s;
}

json Breakdown::to_json() const {
    json j{{"total", total}};
    for (const auto& c : components) j[c.name] = c.value;
    return j;
}

namespace {

Objective assemble(const std::vector<std::pair<Component, nn::Var>>& terms) {
    Objective obj;
    for (const auto& [component, var] : terms) {
        obj.breakdown.components.push_back(component);
        if (component.weight == 0.0) continue;
        const nn::Var weighted = component.weight == 1.0 ? var : nn::scale(var, component.weight);
        obj.total = obj.total.defined() ? nn::add(obj.total, weighted) : weighted;
    }
    if (!obj.total.defined()) obj.total = nn::scale(terms.front().second, 0.0);
    obj.breakdown.total = obj.total.item();
    return obj;
}

}  // namespace

Objective foreground_objective(const nn::Var& lightness, const nn::Var& gen_ab, const nn::Var& truth_ab,
                               const nn::Var& disc_scores, const LossWeights& weights, AdversarialFlavor flavor) {
    weights.validate();
    const nn::Var adv = adversarial_loss(disc_scores, Target::real, flavor);
    const nn::Var edge = edge_loss_soft(compose_lab(lightness, gen_ab), compose_lab(lightness, truth_ab));
    const nn::Var l1 = l1_loss(gen_ab, truth_ab);
    return assemble({{{"adversarial", adv.item(), 1.0}, adv},
                     {{"edge", edge.item(), weights.lambda_edge}, edge},
                     {{"l1", l1.item(), weights.lambda_l1}, l1}});
}

Objective pretrain_objective(const nn::Var& lightness, const nn::Var& gen_ab, const nn::Var& truth_ab,
                             const LossWeights& weights, bool with_edge) {
    weights.validate();
    const nn::Var l1 = l1_loss(gen_ab, truth_ab);
    if (!with_edge) return assemble({{{"l1", l1.item(), weights.lambda_l1}, l1}});
    const nn::Var edge = edge_loss_soft(compose_lab(lightness, gen_ab), compose_lab(lightness, truth_ab));
    return assemble({{{"edge", edge.item(), weights.lambda_edge}, edge}, {{"l1", l1.item(), weights.lambda_l1}, l1}});
}

Objective background_objective(const nn::Var& gen_ab, const nn::Var& truth_ab, const nn::Var& disc_scores,
                               const LossWeights& weights, AdversarialFlavor flavor) {
    weights.validate();
    const nn::Var adv = adversarial_loss(disc_scores, Target::real, flavor);
    const nn::Var l1 = l1_loss(gen_ab, truth_ab);
    return assemble({{{"adversarial", adv.item(), 1.0}, adv}, {{"l1", l1.item(), weights.lambda_bg}, l1}});
}

Objective discriminator_objective(const nn::Var& real_scores, const nn::Var& fake_scores, AdversarialFlavor flavor) {
    const nn::Var real = adversarial_loss(real_scores, Target::real, flavor);
    const nn::Var fake = adversarial_loss(fake_scores, Target::fake, flavor);
    return assemble({{{"real", real.item(), 0.5}, real}, {{"fake", fake.item(), 0.5}, fake}});
}

Objective fusion_objective(const nn::Var& reconstruction, const nn::Var& target, double lambda_ssim, int ssim_window) {
    if (!(lambda_ssim >= 0.0)) throw UsageError("lambda_ssim must be non-negative");
    const nn::Var mse = mse_loss(reconstruction, target);
    if (lambda_ssim == 0.0) {
        Objective obj = assemble({{{"mse", mse.item(), 1.0}, mse}});
        obj.breakdown.components.push_back({"ssim_loss", 0.0, 0.0});
        return obj;
    }
    const nn::Var ssim_loss = nn::add_scalar(nn::scale(ssim(reconstruction, target, ssim_window), -1.0), 1.0);
    return assemble({{{"mse", mse.item(), 1.0}, mse}, {{"ssim_loss", ssim_loss.item(), lambda_ssim}, ssim_loss}});
}

}  // namespace paracolor::losses
