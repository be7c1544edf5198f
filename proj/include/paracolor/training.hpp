#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "paracolor/data/dataset.hpp"
#include "paracolor/fusion.hpp"
#include "paracolor/losses.hpp"
#include "paracolor/networks.hpp"
#include "paracolor/nn/optim.hpp"

namespace paracolor::training {

enum class Stage { pretrain, adversarial_fg, adversarial_bg, fusion };
enum class Pipeline { foreground, background };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);
std::string to_string(Pipeline pipeline);
Pipeline pipeline_from_string(const std::string& name);
/// "fg" / "bg", used in file names.
std::string short_name(Pipeline pipeline);

struct DataConfig {
    std::string images;     // image root scanned when no manifest cache is given
    std::string proposals;  // COCO-style annotation file
    std::string scenes;     // scene-source image root
    std::string manifest;   // manifest cache written by `prepare`
};

struct TrainConfig {
    Stage stage = Stage::pretrain;
    std::vector<Pipeline> pipelines{Pipeline::foreground, Pipeline::background};  // pretrain only
    int epochs = 1;
    std::int64_t max_steps = 0;  // caps the step count when positive
    std::size_t batch_size = 16;
    double gen_lr = 1e-4;
    double disc_lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    losses::LossWeights weights;
    losses::AdversarialFlavor flavor = losses::AdversarialFlavor::least_squares;
    std::uint64_t seed = 0;
    int resolution = 256;
    nets::NetworkSpec generator;  // variant is chosen per pipeline
    nets::Variant fg_variant = nets::Variant::v3;
    nets::Variant bg_variant = nets::Variant::v2;
    nets::NetworkSpec discriminator = nets::discriminator_spec();
    fusion::FusionNetSpec fusion_net;
    int ssim_window = 11;
    bool from_scratch = false;
    bool require_scenes = true;
    bool resume = false;
    std::string init_checkpoint;  // generator checkpoint for adversarial stages
    std::int64_t checkpoint_every = 0;
    std::int64_t sample_every = 0;
    std::string out_dir = "runs/default";
    DataConfig data;

    void validate() const;
    nets::NetworkSpec generator_spec(Pipeline pipeline) const;
    nets::NetworkSpec discriminator_spec() const;
    nets::NetworkSpec fusion_spec() const;
    nlohmann::json to_json() const;
    /// Unspecified learning rates and betas take stage defaults.
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Applies "a.b.c=value" overrides to a config document; values parse as JSON
/// when possible and as strings otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct OutputLayout {
    std::filesystem::path root;

    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path logs() const { return root / "logs"; }
    std::filesystem::path samples() const { return root / "samples"; }
    std::filesystem::path reports() const { return root / "reports"; }
    void create() const;

    std::filesystem::path pretrain_checkpoint(Pipeline p) const;
    std::filesystem::path generator_checkpoint(Pipeline p) const;
    std::filesystem::path discriminator_checkpoint(Pipeline p) const;
    std::filesystem::path fusion_checkpoint() const { return checkpoints() / "fusion.ckpt"; }
};

/// Append-only newline-delimited JSON records plus a plain-text epoch summary
/// and a separate timing file, so the record stream itself is reproducible.
class RunLog {
public:
    /// With `resume_step`, existing records at or beyond that step are dropped, as
    /// are summaries of epochs cut short (when `steps_per_epoch` is known).
    RunLog(const std::filesystem::path& dir, const std::string& name, std::optional<std::int64_t> resume_step = {},
           std::int64_t steps_per_epoch = 0);

    void step(const std::string& stage, std::int64_t step, std::int64_t epoch, const nlohmann::json& losses,
              double seconds);
    void epoch(const std::string& stage, std::int64_t epoch, const nlohmann::json& summary);
    void event(const nlohmann::json& record);

    const std::filesystem::path& path() const noexcept { return path_; }
    /// Step records carried over from the previous run.
    const std::vector<nlohmann::json>& resumed_steps() const noexcept { return resumed_; }

private:
    std::filesystem::path path_;
    std::ofstream records_, summary_, timing_;
    std::int64_t last_step_ = -1;
    std::vector<nlohmann::json> resumed_;
};

struct StepRecord {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    losses::Breakdown generator;
    std::optional<losses::Breakdown> discriminator;
};

struct StageResult {
    std::string stage;
    std::int64_t start_step = 0;
    std::int64_t steps = 0;  // total steps reached
    std::filesystem::path checkpoint;
    std::filesystem::path discriminator_checkpoint;
    std::vector<StepRecord> history;  // steps run in this invocation
    nlohmann::json summary = nlohmann::json::object();
};

/// Generator alone on L1 (plus the soft edge term for the foreground pipeline).
StageResult pretrain_generator(const TrainConfig& config, const data::DatasetManifest& manifest, Pipeline pipeline);

/// Alternating discriminator and generator updates for one pipeline.
class AdversarialTrainer {
public:
    AdversarialTrainer(const TrainConfig& config, Pipeline pipeline, std::unique_ptr<nets::Generator> generator,
                       std::unique_ptr<nets::Discriminator> discriminator);

    losses::Objective discriminator_step(const data::Batch& batch, std::int64_t step);
    losses::Objective generator_step(const data::Batch& batch, std::int64_t step);

    nets::Generator& generator() { return *generator_; }
    nets::Discriminator& discriminator() { return *discriminator_; }
    nn::Adam& generator_optimizer() { return gen_opt_; }
    nn::Adam& discriminator_optimizer() { return disc_opt_; }

private:
    nn::Var fake_chroma(const data::Batch& batch, std::int64_t step);

    TrainConfig config_;
    Pipeline pipeline_;
    std::unique_ptr<nets::Generator> generator_;
    std::unique_ptr<nets::Discriminator> discriminator_;
    nn::Adam gen_opt_;
    nn::Adam disc_opt_;
    std::int64_t cached_step_ = -1;
    nn::Var cached_fake_;
};

/// Loads the pretrain checkpoint (unless from_scratch) and runs the adversarial stage.
StageResult train_adversarial(const TrainConfig& config, const data::DatasetManifest& manifest, Pipeline pipeline);

/// Both adversarial pipelines on separate threads; they share only the manifest.
std::vector<StageResult> train_parallel(const TrainConfig& config, const data::DatasetManifest& manifest);

/// Identity reconstruction with the fusion objective.
StageResult train_fusion(const TrainConfig& config, const data::DatasetManifest& manifest);

/// Mean reconstruction PSNR of a fusion network over the fusion-mode samples.
double reconstruction_psnr(fusion::FusionNet& net, const data::DatasetManifest& manifest, int resolution);

/// Dispatches on config.stage; pretrain covers every configured pipeline.
std::vector<StageResult> run_stage(const TrainConfig& config, const data::DatasetManifest& manifest);

/// Rows of (lightness, prediction, truth) for up to four batch items.
data::RgbImage sample_grid(const data::Batch& batch, const nn::Tensor& predicted_chroma);

}  // namespace paracolor::training
