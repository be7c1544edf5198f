#include "paracolor/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "paracolor/data/tensors.hpp"
#include "paracolor/error.hpp"
#include "paracolor/util/random.hpp"

namespace paracolor::fusion {

std::string to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::add: return "add";
        case Strategy::mean: return "mean";
        case Strategy::l1_norm: return "l1norm";
    }
    return "mean";
}

Strategy strategy_from_string(const std::string& name) {
    if (name == "add") return Strategy::add;
    if (name == "mean") return Strategy::mean;
    if (name == "l1norm" || name == "l1_norm") return Strategy::l1_norm;
    throw UsageError("unknown fusion strategy '" + name + "' (expected add, mean or l1norm)");
}

nets::NetworkSpec FusionNetSpec::to_network_spec() const {
    nets::NetworkSpec s;
    s.kind = nets::NetworkKind::fusion;
    s.in_channels = 3;
    s.out_channels = 3;
    s.stem_channels = stem_channels;
    s.dense_layers = dense_layers;
    s.growth = growth;
    s.decoder_layers = decoder_layers;
    return s;
}

FusionNetSpec FusionNetSpec::from_network_spec(const nets::NetworkSpec& spec) {
    return {spec.stem_channels, spec.dense_layers, spec.growth, spec.decoder_layers};
}

FusionNet::FusionNet(nets::NetworkSpec spec, std::uint64_t seed) : Network(std::move(spec)) {
    spec_.validate();
    if (spec_.kind != nets::NetworkKind::fusion) throw UsageError("build_fusion_net needs a fusion spec");
    std::mt19937_64 rng(derive_seed(seed, 0xf05e));
    const FusionNetSpec fs = FusionNetSpec::from_network_spec(spec_);
    stem_ = nn::Conv2d(registry_, "encoder.stem", 3, fs.stem_channels, 3, 1, 0, true, rng);
    int channels = fs.stem_channels;
    for (int i = 0; i < fs.dense_layers; ++i) {
        dense_.emplace_back(registry_, "encoder.dense." + std::to_string(i), channels, fs.growth, 3, 1, 0, true, rng);
        channels += fs.growth;
    }
    for (int i = 0; i < fs.decoder_layers; ++i) {
        const int out = i + 1 == fs.decoder_layers ? 3 : std::max(3, fs.feature_channels() >> i);
        decoder_.emplace_back(registry_, "decoder." + std::to_string(i), channels, out, 3, 1, 0, true, rng);
        channels = out;
    }
}

namespace {

nn::Var padded(const nn::Conv2d& layer, const nn::Var& x) { return layer(nn::pad_replicate(x, 1)); }

}  // namespace

nn::Var FusionNet::stem(const nn::Var& x) const {
    if (x.value().rank() != 4 || x.dim(1) != 3)
        throw UsageError("fusion network expects N x 3 x H x W input, got " + nn::shape_string(x.shape()));
    return nn::relu(padded(stem_, nn::add_scalar(nn::scale(x, 2.0), -1.0)));
}

std::vector<nn::Var> FusionNet::dense_layer_inputs(const nn::Var& stem_output) const {
    std::vector<nn::Var> inputs;
    std::vector<nn::Var> parts{stem_output};
    for (const auto& layer : dense_) {
        inputs.push_back(nn::concat_channels(parts));
        parts.push_back(nn::relu(padded(layer, inputs.back())));
    }
    return inputs;
}

nn::Var FusionNet::encode(const nn::Var& x) const {
    std::vector<nn::Var> parts{stem(x)};
    for (const auto& layer : dense_) parts.push_back(nn::relu(padded(layer, nn::concat_channels(parts))));
    return nn::concat_channels(parts);
}

nn::Var FusionNet::decode(const nn::Var& features) const {
    if (features.value().rank() != 4 || features.dim(1) != feature_channels())
        throw UsageError("fusion decoder expects " + std::to_string(feature_channels()) + " feature channels, got " +
                         nn::shape_string(features.shape()));
    nn::Var h = features;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        h = padded(decoder_[i], h);
        h = i + 1 == decoder_.size() ? nn::sigmoid(h) : nn::relu(h);
    }
    return h;
}

nn::Var FusionNet::forward(const nn::Var& x, bool) { return decode(encode(x)); }

std::unique_ptr<FusionNet> build_fusion_net(const nets::NetworkSpec& spec, std::uint64_t seed) {
    return std::make_unique<FusionNet>(spec, seed);
}

std::unique_ptr<FusionNet> build_fusion_net(const FusionNetSpec& spec, std::uint64_t seed) {
    return build_fusion_net(spec.to_network_spec(), seed);
}

nn::Tensor l1_norm_weights(const nn::Tensor& f1, const nn::Tensor& f2) {
    if (f1.shape() != f2.shape() || f1.rank() != 4)
        throw UsageError("feature maps must share one N x C x H x W shape");
    const int n = f1.dim(0), c = f1.dim(1), h = f1.dim(2), w = f1.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    nn::Tensor weights(nn::Shape{n, 1, h, w});
    for (int b = 0; b < n; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
            double a1 = 0.0, a2 = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * plane + p;
                a1 += std::abs(f1[i]);
                a2 += std::abs(f2[i]);
            }
            weights[b * plane + p] = a1 + a2 > 0.0 ? a1 / (a1 + a2) : 0.5;
        }
    return weights;
}

nn::Tensor fuse_features(const nn::Tensor& f1, const nn::Tensor& f2, Strategy strategy) {
    if (f1.shape() != f2.shape())
        throw UsageError("cannot fuse feature maps " + nn::shape_string(f1.shape()) + " and " +
                         nn::shape_string(f2.shape()));
    nn::Tensor out(f1.shape());
    switch (strategy) {
        case Strategy::add:
            for (std::int64_t i = 0; i < out.size(); ++i) out[i] = f1[i] + f2[i];
            break;
        case Strategy::mean:
            for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (f1[i] + f2[i]);
            break;
        case Strategy::l1_norm: {
            const nn::Tensor w1 = l1_norm_weights(f1, f2);
            const int n = f1.dim(0), c = f1.dim(1);
            const std::size_t plane = static_cast<std::size_t>(f1.dim(2)) * f1.dim(3);
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * plane + p;
                        const double w = w1[b * plane + p];
                        out[i] = w * f1[i] + (1.0 - w) * f2[i];
                    }
            break;
        }
    }
    return out;
}

nn::Tensor encode(FusionNet& net, const data::RgbImage& img) {
    nn::NoGradGuard guard;
    return net.encode(nn::Var(data::to_tensor(img))).value();
}

data::RgbImage decode(FusionNet& net, const nn::Tensor& features) {
    nn::NoGradGuard guard;
    return data::rgb_from_tensor(net.decode(nn::Var(features)).value());
}

data::RgbImage reconstruct(FusionNet& net, const data::RgbImage& img) { return decode(net, encode(net, img)); }

data::RgbImage fuse_images(FusionNet& net, const data::RgbImage& fg, const data::RgbImage& bg, Strategy strategy) {
    if (fg.height != bg.height || fg.width != bg.width)
        throw UsageError("foreground and background images differ in size");
    return decode(net, fuse_features(encode(net, fg), encode(net, bg), strategy));
}

data::RgbImage overlay_fuse(const data::RgbImage& fg, const data::RgbImage& bg, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("overlay alpha must lie in [0,1]");
    if (fg.height != bg.height || fg.width != bg.width) throw UsageError("overlay inputs differ in size");
    data::RgbImage out(fg.height, fg.width);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        if (alpha == 1.0) out.pixels[i] = fg.pixels[i];
        else if (alpha == 0.0) out.pixels[i] = bg.pixels[i];
        else out.pixels[i] = alpha * fg.pixels[i] + (1.0 - alpha) * bg.pixels[i];
    }
    return out;
}

}  // namespace paracolor::fusion
