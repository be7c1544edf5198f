#pragma once

#include <memory>
#include <string>
#include <vector>

#include "paracolor/data/image.hpp"
#include "paracolor/networks.hpp"

namespace paracolor::fusion {

enum class Strategy { add, mean, l1_norm };

std::string to_string(Strategy strategy);
/// Accepts "add", "mean", "l1norm" and "l1_norm".
Strategy strategy_from_string(const std::string& name);

struct FusionNetSpec {
    int stem_channels = 16;
    int dense_layers = 3;
    int growth = 16;
    int decoder_layers = 4;

    int feature_channels() const { return stem_channels + dense_layers * growth; }
    nets::NetworkSpec to_network_spec() const;
    static FusionNetSpec from_network_spec(const nets::NetworkSpec& spec);
};

/// Stem convolution and a densely connected block (every layer sees the
/// concatenation of all earlier outputs), then a plain convolutional decoder
/// ending in a sigmoid. Inputs in [0,1] are mapped to [-1,1] before the stem;
/// 3x3 kernels over replicate-padded inputs, no resampling.
class FusionNet final : public nets::Network {
public:
    FusionNet(nets::NetworkSpec spec, std::uint64_t seed);

    nn::Var stem(const nn::Var& x) const;
    /// Inputs seen by each dense layer given a stem output.
    std::vector<nn::Var> dense_layer_inputs(const nn::Var& stem_output) const;
    nn::Var encode(const nn::Var& x) const;
    nn::Var decode(const nn::Var& features) const;

    nn::Var forward(const nn::Var& x, bool training) override;

    int feature_channels() const { return FusionNetSpec::from_network_spec(spec_).feature_channels(); }

private:
    nn::Conv2d stem_;
    std::vector<nn::Conv2d> dense_;
    std::vector<nn::Conv2d> decoder_;
};

std::unique_ptr<FusionNet> build_fusion_net(const nets::NetworkSpec& spec, std::uint64_t seed = 0);
std::unique_ptr<FusionNet> build_fusion_net(const FusionNetSpec& spec, std::uint64_t seed = 0);

/// add: f1 + f2; mean: (f1 + f2) / 2; l1_norm: per-position weights from the
/// channel L1 activity of each map, falling back to mean where both are zero.
nn::Tensor fuse_features(const nn::Tensor& f1, const nn::Tensor& f2, Strategy strategy);

/// Per-position l1_norm weights of f1 (N x 1 x H x W); f2's weights are 1 - w.
nn::Tensor l1_norm_weights(const nn::Tensor& f1, const nn::Tensor& f2);

nn::Tensor encode(FusionNet& net, const data::RgbImage& img);
data::RgbImage decode(FusionNet& net, const nn::Tensor& features);
data::RgbImage reconstruct(FusionNet& net, const data::RgbImage& img);

/// decode(fuse_features(encode(fg), encode(bg), strategy)).
data::RgbImage fuse_images(FusionNet& net, const data::RgbImage& fg, const data::RgbImage& bg,
                           Strategy strategy = Strategy::mean);

/// alpha * fg + (1 - alpha) * bg.
data::RgbImage overlay_fuse(const data::RgbImage& fg, const data::RgbImage& bg, double alpha);

}  // namespace paracolor::fusion
