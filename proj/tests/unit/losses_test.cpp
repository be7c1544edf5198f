#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "paracolor/data/tensors.hpp"
#include "paracolor/error.hpp"
#include "paracolor/losses.hpp"
#include "paracolor/metrics.hpp"
#include "support/fixtures.hpp"

using namespace paracolor;

namespace {

nn::Tensor uniform(std::mt19937_64& rng, nn::Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    nn::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

nn::Tensor filled(nn::Shape shape, double v) {
    nn::Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

}  // namespace

TEST(Losses, ClosedFormValues) {
    const nn::Var a(filled({1, 1, 2, 2}, 0.5)), b(filled({1, 1, 2, 2}, -0.25));
    EXPECT_DOUBLE_EQ(losses::l1_loss(a, b).item(), 0.75);
    EXPECT_DOUBLE_EQ(losses::mse_loss(a, b).item(), 0.5625);
    using F = losses::AdversarialFlavor;
    using T = losses::Target;
    EXPECT_DOUBLE_EQ(losses::adversarial_loss(a, T::real, F::least_squares).item(), 0.25);
    EXPECT_DOUBLE_EQ(losses::adversarial_loss(a, T::fake, F::least_squares).item(), 0.25);
    const nn::Var zero(filled({1, 1, 3, 3}, 0.0));
    EXPECT_NEAR(losses::adversarial_loss(zero, T::real, F::log).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(losses::adversarial_loss(zero, T::fake, F::log).item(), std::log(2.0), 1e-15);
}

TEST(Losses, LogFlavorIsStableForLargeScores) {
    const nn::Var big(filled({1, 1, 2, 2}, 800.0));
    const double fake = losses::adversarial_loss(big, losses::Target::fake, losses::AdversarialFlavor::log).item();
    const double real = losses::adversarial_loss(big, losses::Target::real, losses::AdversarialFlavor::log).item();
    EXPECT_NEAR(fake, 800.0, 1e-9);
    EXPECT_NEAR(real, 0.0, 1e-12);
}

TEST(Losses, ShapeMismatchRejected) {
    EXPECT_THROW(losses::l1_loss(nn::Var(filled({1, 2, 4, 4}, 0)), nn::Var(filled({1, 2, 4, 5}, 0))), UsageError);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(1);
    const auto x = uniform(rng, {2, 2, 8, 8}), t = uniform(rng, {2, 2, 8, 8});
    const nn::Var target(t);
    auto kink = [&](std::int64_t i) { return std::abs(x[i] - t[i]) < 1e-4; };
    EXPECT_LT(fixtures::gradient_error([&](const nn::Var& v) { return losses::l1_loss(v, target); }, x, 1e-6, 1e-6, kink),
              1e-4);
    EXPECT_LT(fixtures::gradient_error([&](const nn::Var& v) { return losses::mse_loss(v, target); }, x), 1e-4);
    for (auto f : {losses::AdversarialFlavor::least_squares, losses::AdversarialFlavor::log})
        for (auto tg : {losses::Target::real, losses::Target::fake})
            EXPECT_LT(fixtures::gradient_error([&](const nn::Var& v) { return losses::adversarial_loss(v, tg, f); }, x),
                      1e-4);
}

TEST(Losses, ObjectiveGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(2);
    const nn::Var light(uniform(rng, {1, 1, 8, 8})), truth(uniform(rng, {1, 2, 8, 8}, -0.5, 0.5));
    const nn::Var scores(uniform(rng, {1, 1, 3, 3}));
    const auto ab = uniform(rng, {1, 2, 8, 8}, -0.5, 0.5);
    const losses::LossWeights w;
    auto kink = [&](std::int64_t i) { return std::abs(ab[i] - truth.value()[i]) < 1e-4; };
    EXPECT_LT(fixtures::gradient_error(
                  [&](const nn::Var& v) { return losses::foreground_objective(light, v, truth, scores, w).total; }, ab,
                  1e-6, 1e-6, kink),
              1e-3);
    EXPECT_LT(fixtures::gradient_error(
                  [&](const nn::Var& v) { return losses::pretrain_objective(light, v, truth, w, true).total; }, ab,
                  1e-6, 1e-6, kink),
              1e-3);
    const auto img = uniform(rng, {1, 3, 8, 8}, 0.1, 0.9), target = uniform(rng, {1, 3, 8, 8}, 0.1, 0.9);
    EXPECT_LT(fixtures::gradient_error(
                  [&](const nn::Var& v) { return losses::fusion_objective(v, nn::Var(target), 1.0, 7).total; }, img),
              1e-4);
}

TEST(Losses, ObjectivesComposeWeightedComponents) {
    std::mt19937_64 rng(3);
    const nn::Var light(uniform(rng, {2, 1, 8, 8})), truth(uniform(rng, {2, 2, 8, 8}, -0.5, 0.5));
    const nn::Var ab(uniform(rng, {2, 2, 8, 8}, -0.5, 0.5)), scores(uniform(rng, {2, 1, 3, 3}));
    losses::LossWeights w;
    w.lambda_edge = 2.0;
    w.lambda_l1 = 10.0;
    w.lambda_bg = 7.0;
    const auto fg = losses::foreground_objective(light, ab, truth, scores, w);
    EXPECT_DOUBLE_EQ(fg.breakdown.value("l1"), losses::l1_loss(ab, truth).item());
    EXPECT_NEAR(fg.breakdown.total,
                fg.breakdown.value("adversarial") + 2.0 * fg.breakdown.value("edge") + 10.0 * fg.breakdown.value("l1"),
                1e-12);
    EXPECT_NEAR(fg.total.item(), fg.breakdown.weighted_sum(), 1e-12);
    const auto bg = losses::background_objective(ab, truth, scores, w);
    EXPECT_NEAR(bg.breakdown.total, bg.breakdown.value("adversarial") + 7.0 * bg.breakdown.value("l1"), 1e-12);
    const auto d = losses::discriminator_objective(scores, nn::scale(scores, -1.0));
    EXPECT_NEAR(d.breakdown.total, 0.5 * (d.breakdown.value("real") + d.breakdown.value("fake")), 1e-12);
}

TEST(Losses, ZeroWeightKeepsComponentButDropsGradient) {
    std::mt19937_64 rng(4);
    const nn::Var light(uniform(rng, {1, 1, 8, 8})), truth(uniform(rng, {1, 2, 8, 8}, -0.5, 0.5));
    const nn::Var scores(uniform(rng, {1, 1, 3, 3}));
    losses::LossWeights w;
    w.lambda_edge = 0.0;
    w.lambda_l1 = 0.0;
    nn::Var ab(uniform(rng, {1, 2, 8, 8}, -0.5, 0.5), true);
    const auto obj = losses::foreground_objective(light, ab, truth, scores, w);
    EXPECT_GT(obj.breakdown.value("edge"), 0.0);
    EXPECT_GT(obj.breakdown.value("l1"), 0.0);
    EXPECT_DOUBLE_EQ(obj.breakdown.total, obj.breakdown.value("adversarial"));
    obj.total.backward();
    // scores do not depend on ab, so nothing reaches it
    for (double g : ab.grad().values()) EXPECT_EQ(g, 0.0);
}

TEST(Losses, NegativeWeightsRejected) {
    losses::LossWeights w;
    w.lambda_l1 = -1.0;
    EXPECT_THROW(w.validate(), UsageError);
    EXPECT_THROW(losses::weights_from_json({{"lambda_edge", -0.5}}), UsageError);
    EXPECT_THROW(losses::weights_from_json({{"lambda_typo", 1.0}}), UsageError);
    EXPECT_EQ(losses::weights_from_json({{"lambda_bg", 3.0}}).lambda_bg, 3.0);
}

// SSIM of two constant images p, q reduces to (2pq + c1) / (p^2 + q^2 + c1).
TEST(Ssim, ConstantImagesClosedForm) {
    const double p = 0.3, q = 0.7, c1 = 1e-4;
    const auto s = losses::ssim(nn::Var(filled({1, 3, 12, 12}, p)), nn::Var(filled({1, 3, 12, 12}, q)), 7).item();
    EXPECT_NEAR(s, (2 * p * q + c1) / (p * p + q * q + c1), 1e-12);
}

TEST(Ssim, AgreesWithImageMetric) {
    std::mt19937_64 rng(5);
    const auto a = fixtures::random_image(rng, 16, 16), b = fixtures::random_image(rng, 16, 16);
    const double tensor = losses::ssim(nn::Var(data::to_tensor(a)), nn::Var(data::to_tensor(b)), 11).item();
    EXPECT_NEAR(tensor, metrics::ssim(a, b, 11), 1e-12);
}

TEST(Ssim, WindowValidated) {
    const nn::Var a(filled({1, 1, 8, 8}, 0.5));
    EXPECT_THROW(losses::ssim(a, a, 4), UsageError);
    EXPECT_THROW(losses::ssim(a, a, 11), UsageError);
}

TEST(EdgeLoss, HardIsZeroForIdenticalAndPositiveForDifferent) {
    const auto a = data::rgb_to_lab(fixtures::synthetic_image(1, 32));
    const auto b = data::rgb_to_lab(fixtures::synthetic_image(2, 32));
    EXPECT_EQ(losses::edge_loss_hard(a, a), 0.0);
    const double d = losses::edge_loss_hard(a, b);
    EXPECT_GT(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_EQ(losses::edge_loss(a, b, losses::EdgeMode::hard), d);
    EXPECT_EQ(losses::edge_loss(a, a, losses::EdgeMode::soft), 0.0);
}
