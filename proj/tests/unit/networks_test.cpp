#include <gtest/gtest.h>

#include <random>

#include "paracolor/error.hpp"
#include "paracolor/networks.hpp"
#include "support/fixtures.hpp"

using namespace paracolor;

namespace {

nn::Tensor uniform(std::mt19937_64& rng, nn::Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    nn::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

nets::NetworkSpec small_generator(nets::Variant v) {
    auto spec = nets::generator_spec(v, 8, 32);
    spec.depth = 3;
    spec.attention_resolution = 8;
    return spec;
}

}  // namespace

TEST(Generator, OutputShapeAndRangeForEachVariant) {
    std::mt19937_64 rng(1);
    nn::NoGradGuard guard;
    for (auto v : {nets::Variant::v1, nets::Variant::v2, nets::Variant::v3}) {
        auto g = nets::build_generator(small_generator(v), 4);
        EXPECT_EQ(g->has_attention(), v == nets::Variant::v3);
        const auto out = g->forward(nn::Var(uniform(rng, {2, 1, 32, 32})), false);
        EXPECT_EQ(out.shape(), (nn::Shape{2, 2, 32, 32}));
        for (double x : out.value().values()) {
            EXPECT_GE(x, -1.0);
            EXPECT_LE(x, 1.0);
        }
    }
}

TEST(Generator, InferenceIsDeterministicAndSeedControlsInit) {
    std::mt19937_64 rng(2);
    nn::NoGradGuard guard;
    const auto x = nn::Var(uniform(rng, {1, 1, 32, 32}));
    auto a = nets::build_generator(small_generator(nets::Variant::v2), 5);
    auto b = nets::build_generator(small_generator(nets::Variant::v2), 5);
    auto c = nets::build_generator(small_generator(nets::Variant::v2), 6);
    EXPECT_EQ(a->forward(x, false).value().storage(), a->forward(x, false).value().storage());
    EXPECT_EQ(a->forward(x, false).value().storage(), b->forward(x, false).value().storage());
    EXPECT_NE(a->forward(x, false).value().storage(), c->forward(x, false).value().storage());
}

TEST(Generator, ResidualVariantsAddParameters) {
    const auto v1 = nets::build_generator(small_generator(nets::Variant::v1))->parameter_count();
    const auto v2 = nets::build_generator(small_generator(nets::Variant::v2))->parameter_count();
    const auto v3 = nets::build_generator(small_generator(nets::Variant::v3))->parameter_count();
    EXPECT_LT(v1, v2);
    EXPECT_EQ(v3 - v2, nets::SelfAttention::parameter_count(
                           nets::Generator::attention_channels(small_generator(nets::Variant::v3))));
}

TEST(Generator, InvalidSpecsRejected) {
    auto spec = small_generator(nets::Variant::v3);
    spec.resolution = 30;
    EXPECT_THROW(spec.validate(), UsageError);
    spec = small_generator(nets::Variant::v3);
    spec.attention_resolution = 3;
    EXPECT_THROW(spec.validate(), UsageError);
    spec = small_generator(nets::Variant::v3);
    spec.base_channels = 0;
    EXPECT_THROW(spec.validate(), UsageError);
}

TEST(SelfAttention, ParameterCountFormula) {
    for (int c : {8, 16, 64, 256}) {
        const int k = std::max(1, c / 8);
        const std::int64_t expected = 2 * (c * k + k) + (c * c + c) + 1;
        EXPECT_EQ(nets::SelfAttention::parameter_count(c), expected);
        nn::ParameterRegistry registry;
        std::mt19937_64 rng(3);
        nets::SelfAttention a(registry, "att", c, 1 << 20, rng);
        EXPECT_EQ(registry.parameter_count(), expected);
    }
}

TEST(SelfAttention, GammaZeroIsIdentityAndWeightsAreDistributions) {
    std::mt19937_64 rng(4);
    nn::ParameterRegistry registry;
    nets::SelfAttention a(registry, "att", 16, 1 << 20, rng);
    const nn::Tensor x = uniform(rng, {2, 16, 4, 5});
    EXPECT_EQ(a(nn::Var(x)).value().storage(), x.storage());
    const auto w = a.attention_weights(nn::Var(x)).value();
    ASSERT_EQ(w.shape(), (nn::Shape{2, 20, 20}));
    for (int n = 0; n < 2; ++n)
        for (int j = 0; j < 20; ++j) {
            double col = 0.0;
            for (int i = 0; i < 20; ++i) col += w[(n * 20 + i) * 20 + j];
            EXPECT_NEAR(col, 1.0, 1e-12);
        }
}

TEST(SelfAttention, NonzeroGammaMixesPositions) {
    std::mt19937_64 rng(5);
    nn::ParameterRegistry registry;
    nets::SelfAttention a(registry, "att", 8, 1 << 20, rng);
    a.gamma().mutable_value().fill(1.0);
    const nn::Tensor x = uniform(rng, {1, 8, 4, 4});
    EXPECT_NE(a(nn::Var(x)).value().storage(), x.storage());
}

TEST(SelfAttention, BudgetEnforced) {
    std::mt19937_64 rng(6);
    nn::ParameterRegistry registry;
    nets::SelfAttention a(registry, "att", 8, 255, rng);
    EXPECT_THROW(a(nn::Var(nn::Tensor(nn::Shape{1, 8, 4, 4}))), NumericalError);
}

// Receptive field by the backward recurrence r <- r * stride + (k - stride), k = 4.
TEST(Discriminator, ReceptiveFieldAndOutputSide) {
    for (int layers : {1, 2, 3, 4}) {
        auto spec = nets::discriminator_spec(8, 256);
        spec.disc_stride2_layers = layers;
        const auto stack = nets::Discriminator::layers(spec);
        int r = 1;
        for (auto it = stack.rbegin(); it != stack.rend(); ++it) r = r * it->stride + (4 - it->stride);
        EXPECT_EQ(nets::Discriminator::receptive_field(spec), r);
        for (int side : {64, 70, 128, 256}) {
            int s = side;
            for (const auto& l : stack) s = (s + 2 - 4) / l.stride + 1;
            EXPECT_EQ(nets::Discriminator::output_side(spec, side), s);
        }
    }
    EXPECT_EQ(nets::Discriminator::receptive_field(nets::discriminator_spec()), 70);
    EXPECT_EQ(nets::Discriminator::output_side(nets::discriminator_spec(), 256), 30);
}

TEST(Discriminator, ForwardMatchesClosedForm) {
    std::mt19937_64 rng(7);
    nn::NoGradGuard guard;
    const auto spec = nets::discriminator_spec(8, 64);
    auto d = nets::build_discriminator(spec, 1);
    const auto out = d->forward(nn::Var(uniform(rng, {2, 3, 64, 64})), false);
    const int side = nets::Discriminator::output_side(spec, 64);
    EXPECT_EQ(out.shape(), (nn::Shape{2, 1, side, side}));
}

TEST(Checkpoint, RoundTripIsBitwise) {
    fixtures::TempDir dir("ckpt");
    std::mt19937_64 rng(8);
    nn::NoGradGuard guard;
    auto g = nets::build_generator(small_generator(nets::Variant::v3), 9);
    g->attention()->gamma().mutable_value().fill(0.25);
    const nn::Var x(uniform(rng, {1, 1, 32, 32}));
    nets::save_checkpoint(*g, dir / "g.ckpt", "pretrain", 17);
    const auto ck = nets::read_checkpoint(dir / "g.ckpt");
    EXPECT_EQ(ck.stage, "pretrain");
    EXPECT_EQ(ck.step, 17);
    EXPECT_EQ(ck.spec, g->spec());
    auto loaded = nets::load_checkpoint(dir / "g.ckpt");
    EXPECT_EQ(loaded->forward(x, false).value().storage(), g->forward(x, false).value().storage());
}

TEST(Checkpoint, SpecMismatchIsRejected) {
    fixtures::TempDir dir("ckpt");
    auto g = nets::build_generator(small_generator(nets::Variant::v2), 1);
    nets::save_checkpoint(*g, dir / "g.ckpt", "pretrain", 0);
    auto other = nets::build_generator(small_generator(nets::Variant::v3), 1);
    EXPECT_FALSE(nets::describe_mismatch(g->spec(), other->spec()).empty());
    try {
        nets::load_checkpoint_into(dir / "g.ckpt", *other);
        FAIL() << "mismatch accepted";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("variant"), std::string::npos);
    }
}

TEST(Checkpoint, CorruptFileIsDataError) {
    fixtures::TempDir dir("ckpt");
    std::ofstream(dir / "bad.ckpt") << "PARACOLOR-CHECKPOINT 1\ngarbage";
    EXPECT_THROW(nets::read_checkpoint(dir / "bad.ckpt"), DataError);
    EXPECT_THROW(nets::read_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST(Spec, JsonRoundTrip) {
    auto spec = small_generator(nets::Variant::v1);
    spec.dropout = 0.25;
    EXPECT_EQ(nets::spec_from_json(nets::to_json(spec)), spec);
    const auto d = nets::discriminator_spec(16, 128);
    EXPECT_EQ(nets::spec_from_json(nets::to_json(d)), d);
}
