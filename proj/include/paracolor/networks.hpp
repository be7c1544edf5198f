#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "paracolor/nn/layers.hpp"
#include "paracolor/nn/optim.hpp"

namespace paracolor::nets {

enum class NetworkKind { generator, discriminator, fusion };
enum class Variant { v1, v2, v3 };  // plain UNet, Res-UNet, Res-UNet + self-attention

std::string to_string(NetworkKind kind);
std::string to_string(Variant variant);
NetworkKind network_kind_from_string(const std::string& name);
Variant variant_from_string(const std::string& name);

struct NetworkSpec {
    NetworkKind kind = NetworkKind::generator;
    Variant variant = Variant::v3;
    int base_channels = 64;
    int depth = 4;                   // generator down/up stages
    int attention_resolution = 32;   // feature side hosting self-attention (v3)
    int resolution = 256;            // training input side
    int in_channels = 1;
    int out_channels = 2;
    double dropout = 0.5;            // decoder noise, innermost two stages
    nn::NormKind encoder_norm = nn::NormKind::batch;
    nn::NormKind decoder_norm = nn::NormKind::instance;
    std::int64_t attention_budget = std::int64_t{1} << 22;  // max (h*w)^2 per sample

    int disc_stride2_layers = 3;     // PatchGAN downsampling convolutions
    nn::NormKind disc_norm = nn::NormKind::batch;

    int stem_channels = 16;          // fusion
    int dense_layers = 3;
    int growth = 16;
    int decoder_layers = 4;

    void validate() const;
    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

NetworkSpec generator_spec(Variant variant = Variant::v3, int base_channels = 64, int resolution = 256);
NetworkSpec discriminator_spec(int base_channels = 64, int resolution = 256);

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);
/// Field-by-field description of differences; empty when equal.
std::string describe_mismatch(const NetworkSpec& expected, const NetworkSpec& actual);

/// Parameters and buffers of one network plus its forward pass.
class Network {
public:
    explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {}
    virtual ~Network() = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    const NetworkSpec& spec() const noexcept { return spec_; }
    nn::ParameterRegistry& registry() noexcept { return registry_; }
    const nn::ParameterRegistry& registry() const noexcept { return registry_; }
    std::int64_t parameter_count() const { return registry_.parameter_count(); }
    std::vector<nn::NamedVar> parameters() const { return registry_.parameters(); }

    /// In training mode normalization uses batch statistics and dropout is active.
    /// Inference mode does not mutate the network.
    virtual nn::Var forward(const nn::Var& x, bool training) = 0;

    /// Reseeds the training-time noise (dropout) stream.
    void seed_noise(std::uint64_t seed) { noise_.seed(seed); }

protected:
    NetworkSpec spec_;
    nn::ParameterRegistry registry_;
    std::mt19937_64 noise_{0};
};

/// Query/key/value attention over all spatial positions with a residual gate:
/// out = gamma * (V softmax(K^T Q)) + x. Gamma starts at 0.
class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(nn::ParameterRegistry& registry, const std::string& prefix, int channels, std::int64_t budget,
                  std::mt19937_64& rng);

    nn::Var operator()(const nn::Var& x) const;
    /// N x hw x hw weights; column j holds the distribution over keys for query j.
    nn::Var attention_weights(const nn::Var& x) const;

    nn::Var& gamma() noexcept { return gamma_; }
    int channels() const { return value_.in_channels(); }
    static int key_channels(int channels) { return channels / 8 > 0 ? channels / 8 : 1; }
    static std::int64_t parameter_count(int channels);

private:
    void check_budget(const nn::Var& x) const;

    nn::Conv2d query_, key_, value_;
    nn::Var gamma_;
    std::int64_t budget_ = 0;
};

class Generator final : public Network {
public:
    Generator(NetworkSpec spec, std::uint64_t seed);

    nn::Var forward(const nn::Var& x, bool training) override;

    bool has_attention() const noexcept { return attention_ != nullptr; }
    SelfAttention* attention() noexcept { return attention_.get(); }
    /// Channel count at the attention site for the spec's variant and width.
    static int attention_channels(const NetworkSpec& spec);

private:
    struct Block {
        nn::Conv2d conv1, conv2, shortcut;
        nn::Norm2d norm1, norm2, shortcut_norm;
        bool residual = true;
        bool has_shortcut = false;
    };
    struct DecoderStage {
        nn::Conv2d conv1, conv2;
        nn::Norm2d norm1, norm2;
    };

    nn::Var run_block(Block& block, const nn::Var& x, bool training);

    nn::Conv2d stem_conv_;
    nn::Norm2d stem_norm_;
    std::vector<std::vector<Block>> encoder_;
    std::vector<DecoderStage> decoder_;  // innermost first
    nn::Conv2d head_;
    std::unique_ptr<SelfAttention> attention_;
    int attention_site_ = -1;  // 0 = bottleneck, k = after k-th decoder stage
};

/// Fully convolutional patch classifier with 4x4 kernels and padding 1:
/// stride-2 layers doubling width from base_channels, one stride-1 layer, then a
/// stride-1 score layer. Default geometry has a 70-pixel receptive field.
class Discriminator final : public Network {
public:
    Discriminator(NetworkSpec spec, std::uint64_t seed);

    nn::Var forward(const nn::Var& x, bool training) override;

    struct Layer {
        int in_channels, out_channels, stride;
        bool norm;
    };
    static std::vector<Layer> layers(const NetworkSpec& spec);
    static int output_side(const NetworkSpec& spec, int input_side);
    static int receptive_field(const NetworkSpec& spec);

private:
    std::vector<nn::Conv2d> convs_;
    std::vector<nn::Norm2d> norms_;
};

std::unique_ptr<Generator> build_generator(const NetworkSpec& spec, std::uint64_t seed = 0);
std::unique_ptr<Discriminator> build_discriminator(const NetworkSpec& spec, std::uint64_t seed = 0);
/// Builds any network kind from its spec.
std::unique_ptr<Network> build_network(const NetworkSpec& spec, std::uint64_t seed = 0);

inline constexpr const char* kCheckpointHeader = "PARACOLOR-CHECKPOINT 1";

struct NamedTensor {
    std::string name;
    nn::Tensor value;
};

struct Checkpoint {
    NetworkSpec spec;
    std::string stage;
    std::int64_t step = 0;
    std::vector<NamedTensor> parameters;
    std::vector<NamedTensor> buffers;
    std::optional<nn::AdamState> optimizer;
    nlohmann::json metadata = nlohmann::json::object();
};

Checkpoint capture(const Network& network, std::string stage, std::int64_t step, const nn::Adam* optimizer = nullptr);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
void save_checkpoint(const Network& network, const std::filesystem::path& path, std::string stage,
                     std::int64_t step, const nn::Adam* optimizer = nullptr);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies a checkpoint's arrays into a network built from an equal spec.
void restore(const Checkpoint& checkpoint, Network& network);
/// Builds the network described by the checkpoint and restores it.
std::unique_ptr<Network> load_checkpoint(const std::filesystem::path& path);
/// Restores into an existing network; a differing spec is an error.
Checkpoint load_checkpoint_into(const std::filesystem::path& path, Network& network);

/// Copies parameters whose names start with `prefix` and whose shapes agree,
/// e.g. externally supplied encoder weights. Returns the number copied.
std::size_t import_parameters(const Checkpoint& source, Network& network, const std::string& prefix);

}  // namespace paracolor::nets
