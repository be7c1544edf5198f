#include <gtest/gtest.h>

#include <random>

#include "paracolor/error.hpp"
#include "paracolor/fusion.hpp"
#include "support/fixtures.hpp"

using namespace paracolor;

namespace {

nn::Tensor uniform(std::mt19937_64& rng, nn::Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    nn::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

TEST(FuseFeatures, AddAndMean) {
    std::mt19937_64 rng(1);
    const auto a = uniform(rng, {2, 3, 4, 4}), b = uniform(rng, {2, 3, 4, 4});
    const auto add = fusion::fuse_features(a, b, fusion::Strategy::add);
    const auto mean = fusion::fuse_features(a, b, fusion::Strategy::mean);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(add[i], a[i] + b[i]);
        EXPECT_EQ(mean[i], 0.5 * (a[i] + b[i]));
    }
}

TEST(FuseFeatures, L1NormWeightsFollowActivity) {
    // One position, two channels: activity 3 vs 1 gives weights 0.75 / 0.25.
    nn::Tensor a(nn::Shape{1, 2, 1, 1}), b(nn::Shape{1, 2, 1, 1});
    a[0] = 2.0, a[1] = -1.0;
    b[0] = 0.5, b[1] = -0.5;
    const auto w = fusion::l1_norm_weights(a, b);
    EXPECT_DOUBLE_EQ(w[0], 0.75);
    const auto out = fusion::fuse_features(a, b, fusion::Strategy::l1_norm);
    EXPECT_DOUBLE_EQ(out[0], 0.75 * 2.0 + 0.25 * 0.5);
    EXPECT_DOUBLE_EQ(out[1], 0.75 * -1.0 + 0.25 * -0.5);
}

TEST(FuseFeatures, L1NormFallsBackToMeanWhereSilent) {
    const nn::Tensor zero(nn::Shape{1, 4, 2, 2});
    EXPECT_EQ(fusion::l1_norm_weights(zero, zero)[0], 0.5);
}

TEST(FuseFeatures, SymmetricAndIdempotentForAllStrategies) {
    std::mt19937_64 rng(2);
    const auto a = uniform(rng, {1, 5, 6, 6}), b = uniform(rng, {1, 5, 6, 6});
    for (auto s : {fusion::Strategy::add, fusion::Strategy::mean, fusion::Strategy::l1_norm}) {
        EXPECT_LE(max_diff(fusion::fuse_features(a, b, s).storage(), fusion::fuse_features(b, a, s).storage()), 1e-12);
    }
    EXPECT_EQ(fusion::fuse_features(a, a, fusion::Strategy::mean).storage(), a.storage());
    EXPECT_LE(max_diff(fusion::fuse_features(a, a, fusion::Strategy::l1_norm).storage(), a.storage()), 1e-15);
}

TEST(FuseFeatures, ShapeMismatchRejected) {
    EXPECT_THROW(fusion::fuse_features(nn::Tensor(nn::Shape{1, 2, 3, 3}), nn::Tensor(nn::Shape{1, 2, 3, 4}),
                                       fusion::Strategy::mean),
                 UsageError);
}

TEST(Strategy, NamesRoundTrip) {
    for (auto s : {fusion::Strategy::add, fusion::Strategy::mean, fusion::Strategy::l1_norm})
        EXPECT_EQ(fusion::strategy_from_string(fusion::to_string(s)), s);
    EXPECT_THROW(fusion::strategy_from_string("max"), UsageError);
}

TEST(FusionNet, ShapesAndRange) {
    auto net = fusion::build_fusion_net(fusion::FusionNetSpec{}, 3);
    std::mt19937_64 rng(3);
    const auto img = fixtures::random_image(rng, 13, 17);
    const auto f = fusion::encode(*net, img);
    EXPECT_EQ(f.shape(), (nn::Shape{1, net->feature_channels(), 13, 17}));
    const auto out = fusion::reconstruct(*net, img);
    EXPECT_EQ(out.height, 13);
    EXPECT_EQ(out.width, 17);
    for (double v : out.pixels) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(FusionNet, IdenticalInputsReduceToReconstruction) {
    auto net = fusion::build_fusion_net(fusion::FusionNetSpec{}, 4);
    std::mt19937_64 rng(4);
    const auto x = fixtures::random_image(rng, 16, 16), y = fixtures::random_image(rng, 16, 16);
    EXPECT_EQ(fusion::fuse_images(*net, x, x, fusion::Strategy::mean).pixels, fusion::reconstruct(*net, x).pixels);
    for (auto s : {fusion::Strategy::add, fusion::Strategy::mean, fusion::Strategy::l1_norm})
        EXPECT_LE(max_diff(fusion::fuse_images(*net, x, y, s).pixels, fusion::fuse_images(*net, y, x, s).pixels),
                  1e-12);
}

TEST(FusionNet, SpecRoundTripsThroughNetworkSpec) {
    fusion::FusionNetSpec spec;
    spec.stem_channels = 8;
    spec.dense_layers = 2;
    spec.growth = 4;
    spec.decoder_layers = 3;
    const auto back = fusion::FusionNetSpec::from_network_spec(spec.to_network_spec());
    EXPECT_EQ(back.feature_channels(), 16);
    EXPECT_EQ(back.decoder_layers, 3);
}

TEST(Overlay, EndpointsExactAndMidpointLinear) {
    std::mt19937_64 rng(5);
    const auto a = fixtures::random_image(rng, 6, 7), b = fixtures::random_image(rng, 6, 7);
    EXPECT_EQ(fusion::overlay_fuse(a, b, 1.0).pixels, a.pixels);
    EXPECT_EQ(fusion::overlay_fuse(a, b, 0.0).pixels, b.pixels);
    const auto mid = fusion::overlay_fuse(a, b, 0.25);
    for (std::size_t i = 0; i < a.pixels.size(); ++i) EXPECT_DOUBLE_EQ(mid.pixels[i], 0.25 * a.pixels[i] + 0.75 * b.pixels[i]);
    EXPECT_THROW(fusion::overlay_fuse(a, b, 1.5), UsageError);
    EXPECT_THROW(fusion::overlay_fuse(a, data::RgbImage(6, 8), 0.5), UsageError);
}
