#include "paracolor/training.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "paracolor/data/tensors.hpp"
#include "paracolor/error.hpp"
#include "paracolor/metrics.hpp"
#include "paracolor/util/random.hpp"

namespace paracolor::training {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::pretrain: return "pretrain";
        case Stage::adversarial_fg: return "adversarial_fg";
        case Stage::adversarial_bg: return "adversarial_bg";
        case Stage::fusion: return "fusion";
    }
    return "pretrain";
}

Stage stage_from_string(const std::string& name) {
    if (name == "pretrain") return Stage::pretrain;
    if (name == "adversarial_fg") return Stage::adversarial_fg;
    if (name == "adversarial_bg") return Stage::adversarial_bg;
    if (name == "fusion") return Stage::fusion;
    throw UsageError("unknown stage '" + name + "' (expected pretrain, adversarial_fg, adversarial_bg or fusion)");
}

std::string to_string(Pipeline pipeline) { return pipeline == Pipeline::foreground ? "foreground" : "background"; }

Pipeline pipeline_from_string(const std::string& name) {
    if (name == "foreground" || name == "fg") return Pipeline::foreground;
    if (name == "background" || name == "bg") return Pipeline::background;
    throw UsageError("unknown pipeline '" + name + "'");
}

std::string short_name(Pipeline pipeline) { return pipeline == Pipeline::foreground ? "fg" : "bg"; }

// Config

namespace {

struct StageDefaults {
    double gen_lr, disc_lr, beta1, beta2;
};

StageDefaults defaults_for(Stage stage) {
    switch (stage) {
        case Stage::adversarial_fg:
        case Stage::adversarial_bg: return {2e-4, 2e-4, 0.5, 0.999};
        case Stage::pretrain:
        case Stage::fusion: return {1e-4, 1e-4, 0.9, 0.999};
    }
    return {1e-4, 1e-4, 0.9, 0.999};
}

template <class T>
T read(const json& j, const char* key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw UsageError(std::string("config field '") + key + "' has the wrong type: " + j.dump());
    }
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw UsageError("invalid config: " + m); };
    if (!(gen_lr >= 0.0) || !(disc_lr >= 0.0)) fail("learning rates must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must lie in [0,1)");
    if (epochs < 1) fail("epochs must be at least 1");
    if (max_steps < 0) fail("max_steps must be non-negative");
    if (batch_size < 1) fail("batch_size must be positive");
    if (resolution < 16) fail("resolution must be at least 16");
    if (pipelines.empty()) fail("at least one pipeline is required");
    if (ssim_window < 1 || ssim_window % 2 == 0) fail("ssim_window must be a positive odd size");
    if (checkpoint_every < 0 || sample_every < 0) fail("checkpoint_every and sample_every must be non-negative");
    weights.validate();
    generator_spec(Pipeline::foreground).validate();
    generator_spec(Pipeline::background).validate();
    discriminator_spec().validate();
    fusion_spec().validate();
}

nets::NetworkSpec TrainConfig::generator_spec(Pipeline pipeline) const {
    nets::NetworkSpec s = generator;
    s.kind = nets::NetworkKind::generator;
    s.variant = pipeline == Pipeline::foreground ? fg_variant : bg_variant;
    return s;
}

nets::NetworkSpec TrainConfig::discriminator_spec() const { return discriminator; }

nets::NetworkSpec TrainConfig::fusion_spec() const { return fusion_net.to_network_spec(); }

json TrainConfig::to_json() const {
    json pipes = json::array();
    for (auto p : pipelines) pipes.push_back(to_string(p));
    json gen = nets::to_json(generator);
    gen.erase("kind");
    gen.erase("variant");
    json disc = nets::to_json(discriminator);
    disc.erase("kind");
    return json{{"stage", to_string(stage)},
                {"pipelines", pipes},
                {"epochs", epochs},
                {"max_steps", max_steps},
                {"batch_size", batch_size},
                {"gen_lr", gen_lr},
                {"disc_lr", disc_lr},
                {"adam_betas", {beta1, beta2}},
                {"weights", losses::to_json(weights)},
                {"adversarial_flavor", losses::to_string(flavor)},
                {"seed", seed},
                {"resolution", resolution},
                {"generator", gen},
                {"fg_variant", nets::to_string(fg_variant)},
                {"bg_variant", nets::to_string(bg_variant)},
                {"discriminator", disc},
                {"fusion_net",
                 {{"stem_channels", fusion_net.stem_channels},
                  {"dense_layers", fusion_net.dense_layers},
                  {"growth", fusion_net.growth},
                  {"decoder_layers", fusion_net.decoder_layers}}},
                {"ssim_window", ssim_window},
                {"from_scratch", from_scratch},
                {"require_scenes", require_scenes},
                {"resume", resume},
                {"init_checkpoint", init_checkpoint},
                {"checkpoint_every", checkpoint_every},
                {"sample_every", sample_every},
                {"out_dir", out_dir},
                {"data",
                 {{"images", data.images},
                  {"proposals", data.proposals},
                  {"scenes", data.scenes},
                  {"manifest", data.manifest}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    TrainConfig c;
    if (j.contains("stage")) c.stage = stage_from_string(read<std::string>(j.at("stage"), "stage"));
    const StageDefaults d = defaults_for(c.stage);
    c.gen_lr = d.gen_lr;
    c.disc_lr = d.disc_lr;
    c.beta1 = d.beta1;
    c.beta2 = d.beta2;
    if (j.contains("resolution")) c.resolution = read<int>(j.at("resolution"), "resolution");

    json gen = j.value("generator", json::object());
    json disc = j.value("discriminator", json::object());
    if (!gen.is_object() || !disc.is_object()) throw UsageError("generator and discriminator must be objects");
    if (!gen.contains("resolution")) gen["resolution"] = c.resolution;
    if (!gen.contains("attention_resolution")) gen["attention_resolution"] = std::max(1, c.resolution / 8);
    gen["kind"] = "generator";
    if (!disc.contains("resolution")) disc["resolution"] = c.resolution;
    disc["kind"] = "discriminator";
    try {
        c.generator = nets::spec_from_json(gen);
        c.discriminator = nets::spec_from_json(disc);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }

    for (const auto& [key, v] : j.items()) {
        if (key == "stage" || key == "resolution" || key == "generator" || key == "discriminator") continue;
        if (key == "pipelines") {
            c.pipelines.clear();
            if (v.is_string()) {
                const auto name = v.get<std::string>();
                if (name == "both") c.pipelines = {Pipeline::foreground, Pipeline::background};
                else c.pipelines = {pipeline_from_string(name)};
            } else {
                for (const auto& p : v) c.pipelines.push_back(pipeline_from_string(read<std::string>(p, "pipelines")));
            }
        } else if (key == "epochs") c.epochs = read<int>(v, "epochs");
        else if (key == "max_steps") c.max_steps = read<std::int64_t>(v, "max_steps");
        else if (key == "batch_size") {
            const auto b = read<std::int64_t>(v, "batch_size");
            if (b < 1) throw UsageError("invalid config: batch_size must be positive");
            c.batch_size = static_cast<std::size_t>(b);
        } else if (key == "gen_lr") c.gen_lr = read<double>(v, "gen_lr");
        else if (key == "disc_lr") c.disc_lr = read<double>(v, "disc_lr");
        else if (key == "adam_betas") {
            const auto betas = read<std::vector<double>>(v, "adam_betas");
            if (betas.size() != 2) throw UsageError("adam_betas needs two values");
            c.beta1 = betas[0];
            c.beta2 = betas[1];
        } else if (key == "weights") c.weights = losses::weights_from_json(v);
        else if (key == "adversarial_flavor") c.flavor = losses::flavor_from_string(read<std::string>(v, key.c_str()));
        else if (key == "seed") c.seed = read<std::uint64_t>(v, "seed");
        else if (key == "fg_variant") c.fg_variant = nets::variant_from_string(read<std::string>(v, "fg_variant"));
        else if (key == "bg_variant") c.bg_variant = nets::variant_from_string(read<std::string>(v, "bg_variant"));
        else if (key == "fusion_net") {
            for (const auto& [fk, fv] : v.items()) {
                if (fk == "stem_channels") c.fusion_net.stem_channels = read<int>(fv, "fusion_net.stem_channels");
                else if (fk == "dense_layers") c.fusion_net.dense_layers = read<int>(fv, "fusion_net.dense_layers");
                else if (fk == "growth") c.fusion_net.growth = read<int>(fv, "fusion_net.growth");
                else if (fk == "decoder_layers") c.fusion_net.decoder_layers = read<int>(fv, "fusion_net.decoder_layers");
                else throw UsageError("unknown config field 'fusion_net." + fk + "'");
            }
        } else if (key == "ssim_window") c.ssim_window = read<int>(v, "ssim_window");
        else if (key == "from_scratch") c.from_scratch = read<bool>(v, "from_scratch");
        else if (key == "require_scenes") c.require_scenes = read<bool>(v, "require_scenes");
        else if (key == "resume") c.resume = read<bool>(v, "resume");
        else if (key == "init_checkpoint") c.init_checkpoint = read<std::string>(v, "init_checkpoint");
        else if (key == "checkpoint_every") c.checkpoint_every = read<std::int64_t>(v, "checkpoint_every");
        else if (key == "sample_every") c.sample_every = read<std::int64_t>(v, "sample_every");
        else if (key == "out_dir") c.out_dir = read<std::string>(v, "out_dir");
        else if (key == "data") {
            for (const auto& [dk, dv] : v.items()) {
                if (dk == "images") c.data.images = read<std::string>(dv, "data.images");
                else if (dk == "proposals") c.data.proposals = read<std::string>(dv, "data.proposals");
                else if (dk == "scenes") c.data.scenes = read<std::string>(dv, "data.scenes");
                else if (dk == "manifest") c.data.manifest = read<std::string>(dv, "data.manifest");
                else throw UsageError("unknown config field 'data." + dk + "'");
            }
        } else {
            throw UsageError("unknown config field '" + key + "'");
        }
    }
    c.validate();
    return c;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' must look like key=value");
    const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*node)[parts[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw UsageError("override '" + path + "': '" + parts[i] + "' is not an object");
        node = &next;
    }
    (*node)[parts.back()] = value;
}

// Output layout

void OutputLayout::create() const {
    for (const auto& d : {checkpoints(), logs(), samples(), reports()}) fs::create_directories(d);
}

fs::path OutputLayout::pretrain_checkpoint(Pipeline p) const {
    return checkpoints() / ("pretrain_" + short_name(p) + ".ckpt");
}

fs::path OutputLayout::generator_checkpoint(Pipeline p) const {
    return checkpoints() / ("adversarial_" + short_name(p) + "_generator.ckpt");
}

fs::path OutputLayout::discriminator_checkpoint(Pipeline p) const {
    return checkpoints() / ("adversarial_" + short_name(p) + "_discriminator.ckpt");
}

// Run log

RunLog::RunLog(const fs::path& dir, const std::string& name, std::optional<std::int64_t> resume_step,
               std::int64_t steps_per_epoch)
    : path_(dir / (name + ".jsonl")) {
    fs::create_directories(dir);
    std::vector<std::string> kept;
    if (resume_step && fs::exists(path_)) {
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json r = json::parse(line, nullptr, false);
            if (r.is_discarded()) continue;
            const std::int64_t s = r.value("step", std::int64_t{-1});
            if (s >= *resume_step) continue;
            const std::string type = r.value("type", "");
            if (type == "epoch" && steps_per_epoch > 0 && (s + 1) % steps_per_epoch != 0) continue;
            kept.push_back(line);
            if (type == "step") {
                last_step_ = std::max(last_step_, s);
                resumed_.push_back(r);
            }
        }
    }
    records_.open(path_, std::ios::trunc);
    if (!records_) throw DataError("cannot write run log " + path_.string());
    for (const auto& line : kept) records_ << line << '\n';
    const auto mode = resume_step ? std::ios::app : std::ios::trunc;
    summary_.open(dir / (name + ".summary.txt"), mode);
    timing_.open(dir / (name + ".timing.jsonl"), mode);
}

void RunLog::step(const std::string& stage, std::int64_t step, std::int64_t epoch, const json& losses, double seconds) {
    if (step <= last_step_) throw UsageError("run log steps must increase");
    last_step_ = step;
    records_ << json{{"type", "step"}, {"stage", stage}, {"step", step}, {"epoch", epoch}, {"losses", losses}}.dump()
             << '\n';
    timing_ << json{{"step", step}, {"seconds", seconds}}.dump() << '\n';
}

void RunLog::epoch(const std::string& stage, std::int64_t epoch, const json& summary) {
    records_ << json{{"type", "epoch"}, {"stage", stage}, {"epoch", epoch}, {"step", last_step_}, {"summary", summary}}
                    .dump()
             << '\n';
    records_.flush();
    summary_ << stage << " epoch " << epoch << ":";
    for (const auto& [k, v] : summary.items()) summary_ << ' ' << k << '=' << v.dump();
    summary_ << '\n';
    summary_.flush();
}

void RunLog::event(const json& record) {
    json r = record;
    if (!r.contains("step")) r["step"] = last_step_;
    records_ << r.dump() << '\n';
    records_.flush();
}

// Shared helpers

namespace {

std::int64_t total_steps(const TrainConfig& c, const data::BatchStream& stream) {
    if (c.max_steps > 0) return c.max_steps;
    return static_cast<std::int64_t>(c.epochs) * static_cast<std::int64_t>(stream.batches_per_epoch());
}

std::uint64_t stream_id(Stage stage, Pipeline pipeline) {
    return static_cast<std::uint64_t>(stage) * 16 + static_cast<std::uint64_t>(pipeline);
}

void require_finite(const losses::Objective& obj, RunLog& log, const std::string& stage, std::int64_t step,
                    const char* which) {
    if (std::isfinite(obj.breakdown.total)) return;
    log.event({{"type", "abort"}, {"stage", stage}, {"step", step}, {"network", which},
               {"losses", obj.breakdown.to_json()}});
    throw NumericalError(stage + ": non-finite " + which + " loss at step " + std::to_string(step));
}

// Averages of each loss component over a run of step records.
// Mean of each loss over step records as logged; adversarial records are
// flattened with gen_ and disc_ prefixes.
json mean_components(const std::vector<json>& steps) {
    json out = json::object();
    if (steps.empty()) return out;
    const double n = static_cast<double>(steps.size());
    auto add = [&](const std::string& prefix, const json& losses) {
        for (const auto& [k, v] : losses.items()) out[prefix + k] = out.value(prefix + k, 0.0) + v.get<double>() / n;
    };
    for (const json& l : steps) {
        if (l.contains("generator")) {
            add("gen_", l["generator"]);
            add("disc_", l["discriminator"]);
        } else {
            add("", l);
        }
    }
    return out;
}

json step_losses(const StepRecord& r) {
    if (!r.discriminator) return r.generator.to_json();
    return json{{"generator", r.generator.to_json()}, {"discriminator", r.discriminator->to_json()}};
}

nn::AdamOptions adam_options(double lr, const TrainConfig& c) { return {lr, c.beta1, c.beta2, 1e-8}; }

// Per-step bookkeeping common to all stages.
class StageLoop {
public:
    StageLoop(const TrainConfig& config, std::string name, const data::BatchStream& stream, std::int64_t start)
        : config_(config),
          name_(std::move(name)),
          per_epoch_(static_cast<std::int64_t>(stream.batches_per_epoch())),
          total_(total_steps(config, stream)),
          log_(OutputLayout{config.out_dir}.logs(), name_, start > 0 ? std::optional<std::int64_t>(start) : std::nullopt,
               per_epoch_) {
        result_.stage = name_;
        result_.start_step = start;
        result_.steps = start;
        for (const json& r : log_.resumed_steps())
            if (r.value("epoch", std::int64_t{-1}) == epoch_of(start)) epoch_losses_.push_back(r["losses"]);
    }

    std::int64_t total() const { return total_; }
    RunLog& log() { return log_; }
    StageResult& result() { return result_; }
    std::int64_t epoch_of(std::int64_t step) const { return step / per_epoch_; }

    void record(StepRecord rec, double seconds) {
        epoch_losses_.push_back(step_losses(rec));
        log_.step(name_, rec.step, rec.epoch, epoch_losses_.back(), seconds);
        result_.history.push_back(std::move(rec));
        const std::int64_t step = result_.history.back().step;
        result_.steps = step + 1;
        if ((step + 1) % per_epoch_ == 0 || step + 1 == total_) {
            log_.epoch(name_, epoch_of(step), mean_components(epoch_losses_));
            epoch_losses_.clear();
        }
    }

    bool due(std::int64_t every, std::int64_t step) const { return every > 0 && (step + 1) % every == 0; }

private:
    const TrainConfig& config_;
    std::string name_;
    std::int64_t per_epoch_;
    std::int64_t total_;
    RunLog log_;
    StageResult result_;
    std::vector<json> epoch_losses_;  // step losses of the current epoch
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void save_tagged(const nets::Network& net, const fs::path& path, const std::string& stage, std::int64_t step,
                 const nn::Adam& opt, Pipeline pipeline, bool with_pipeline) {
    nets::Checkpoint c = nets::capture(net, stage, step, &opt);
    if (with_pipeline) c.metadata["pipeline"] = to_string(pipeline);
    nets::save_checkpoint(c, path);
}

void write_sample(const TrainConfig& config, const std::string& name, std::int64_t step, const data::Batch& batch,
                  nets::Generator& gen) {
    nn::NoGradGuard guard;
    const nn::Var pred = gen.forward(nn::Var(batch.lightness), false);
    const auto path = OutputLayout{config.out_dir}.samples() / (name + "_step" + std::to_string(step) + ".png");
    data::write_image(path, sample_grid(batch, pred.value()));
}

data::BatchStream make_stream(const TrainConfig& config, const data::DatasetManifest& manifest, data::BatchMode mode,
                              std::uint64_t id) {
    data::BatchOptions opts;
    opts.batch_size = config.batch_size;
    opts.mode = mode;
    opts.seed = derive_seed(config.seed, id);
    opts.resolution = config.resolution;
    return data::BatchStream(manifest, opts);
}

}  // namespace

data::RgbImage sample_grid(const data::Batch& batch, const nn::Tensor& predicted_chroma) {
    const int n = std::min(4, batch.lightness.dim(0));
    const int h = batch.lightness.dim(2), w = batch.lightness.dim(3);
    data::RgbImage grid(n * h, 3 * w);
    for (int i = 0; i < n; ++i) {
        data::LabImage lab(h, w);
        std::copy_n(batch.lightness.data() + static_cast<std::size_t>(i) * h * w, lab.plane(), lab.l.begin());
        const data::RgbImage gray = data::lab_to_rgb(lab).image;
        const data::RgbImage pred =
            data::lab_to_rgb(data::with_chroma(lab, data::chroma_from_tensor(predicted_chroma, i))).image;
        const data::RgbImage truth = data::rgb_from_tensor(batch.rgb, i);
        const data::RgbImage* panels[3] = {&gray, &pred, &truth};
        for (int p = 0; p < 3; ++p)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) grid.at(c, i * h + y, p * w + x) = panels[p]->at(c, y, x);
    }
    return grid;
}

// Pretraining

StageResult pretrain_generator(const TrainConfig& config, const data::DatasetManifest& manifest, Pipeline pipeline) {
    config.validate();
    const OutputLayout out{config.out_dir};
    out.create();
    const auto mode = pipeline == Pipeline::foreground ? data::BatchMode::foreground : data::BatchMode::background;
    data::BatchStream stream = make_stream(config, manifest, mode, stream_id(Stage::pretrain, pipeline));

    auto gen = nets::build_generator(config.generator_spec(pipeline), derive_seed(config.seed, 100 + stream_id(Stage::pretrain, pipeline)));
    nn::Adam opt(gen->parameters(), adam_options(config.gen_lr, config));
    const fs::path ckpt_path = out.pretrain_checkpoint(pipeline);
    std::int64_t start = 0;
    if (config.resume && fs::exists(ckpt_path)) {
        const nets::Checkpoint c = nets::load_checkpoint_into(ckpt_path, *gen);
        if (c.optimizer) opt.load_state(*c.optimizer);
        start = c.step;
    }

    const std::string name = "pretrain_" + short_name(pipeline);
    StageLoop loop(config, name, stream, start);
    const bool with_edge = pipeline == Pipeline::foreground;
    for (std::int64_t step = start; step < loop.total(); ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const data::Batch batch = stream.batch(static_cast<std::uint64_t>(step));
        gen->seed_noise(derive_seed(config.seed, 0x10000 + 2 * static_cast<std::uint64_t>(step) + static_cast<std::uint64_t>(pipeline)));
        const nn::Var lightness(batch.lightness), truth(batch.chroma);
        opt.zero_grad();
        const nn::Var pred = gen->forward(lightness, true);
        const losses::Objective obj = losses::pretrain_objective(lightness, pred, truth, config.weights, with_edge);
        require_finite(obj, loop.log(), name, step, "generator");
        obj.total.backward();
        opt.step();
        loop.record({step, loop.epoch_of(step), obj.breakdown, std::nullopt}, seconds_since(t0));
        if (loop.due(config.checkpoint_every, step)) save_tagged(*gen, ckpt_path, "pretrain", step + 1, opt, pipeline, true);
        if (loop.due(config.sample_every, step)) write_sample(config, name, step + 1, batch, *gen);
    }
    save_tagged(*gen, ckpt_path, "pretrain", loop.total(), opt, pipeline, true);
    StageResult result = std::move(loop.result());
    result.steps = loop.total();
    result.checkpoint = ckpt_path;
    return result;
}

// Adversarial training

AdversarialTrainer::AdversarialTrainer(const TrainConfig& config, Pipeline pipeline,
                                       std::unique_ptr<nets::Generator> generator,
                                       std::unique_ptr<nets::Discriminator> discriminator)
    : config_(config),
      pipeline_(pipeline),
      generator_(std::move(generator)),
      discriminator_(std::move(discriminator)),
      gen_opt_(generator_->parameters(), adam_options(config.gen_lr, config)),
      disc_opt_(discriminator_->parameters(), adam_options(config.disc_lr, config)) {}

nn::Var AdversarialTrainer::fake_chroma(const data::Batch& batch, std::int64_t step) {
    if (cached_step_ == step && cached_fake_.defined()) return cached_fake_;
    generator_->seed_noise(derive_seed(config_.seed, 0x20000 + 2 * static_cast<std::uint64_t>(step) +
                                                         static_cast<std::uint64_t>(pipeline_)));
    cached_fake_ = generator_->forward(nn::Var(batch.lightness), true);
    cached_step_ = step;
    return cached_fake_;
}

losses::Objective AdversarialTrainer::discriminator_step(const data::Batch& batch, std::int64_t step) {
    const nn::Var fake = fake_chroma(batch, step);
    const nn::Var lightness(batch.lightness);
    disc_opt_.zero_grad();
    const nn::Var real_scores = discriminator_->forward(losses::compose_lab(lightness, nn::Var(batch.chroma)), true);
    const nn::Var fake_scores = discriminator_->forward(losses::compose_lab(lightness, fake.detach()), true);
    losses::Objective obj = losses::discriminator_objective(real_scores, fake_scores, config_.flavor);
    if (std::isfinite(obj.breakdown.total)) {
        obj.total.backward();
        disc_opt_.step();
    }
    return obj;
}

losses::Objective AdversarialTrainer::generator_step(const data::Batch& batch, std::int64_t step) {
    const nn::Var fake = fake_chroma(batch, step);
    const nn::Var lightness(batch.lightness), truth(batch.chroma);
    gen_opt_.zero_grad();
    const nn::Var scores = discriminator_->forward(losses::compose_lab(lightness, fake), true);
    losses::Objective obj =
        pipeline_ == Pipeline::foreground
            ? losses::foreground_objective(lightness, fake, truth, scores, config_.weights, config_.flavor)
            : losses::background_objective(fake, truth, scores, config_.weights, config_.flavor);
    if (std::isfinite(obj.breakdown.total)) {
        obj.total.backward();
        gen_opt_.step();
    }
    disc_opt_.zero_grad();
    cached_fake_ = nn::Var();
    cached_step_ = -1;
    return obj;
}

StageResult train_adversarial(const TrainConfig& config, const data::DatasetManifest& manifest, Pipeline pipeline) {
    config.validate();
    const Stage stage = pipeline == Pipeline::foreground ? Stage::adversarial_fg : Stage::adversarial_bg;
    const std::string name = to_string(stage);
    if (pipeline == Pipeline::background && config.require_scenes && manifest.count(data::Source::scenes) == 0)
        throw DataError(name + ": the background pipeline draws from main and scenes sources, but the manifest has no "
                               "scenes entries (set data.scenes, or require_scenes=false to train on main only)");
    const OutputLayout out{config.out_dir};
    out.create();
    const auto mode = pipeline == Pipeline::foreground ? data::BatchMode::foreground : data::BatchMode::background;
    data::BatchStream stream = make_stream(config, manifest, mode, stream_id(stage, pipeline));

    const nets::NetworkSpec gen_spec = config.generator_spec(pipeline);
    auto gen = nets::build_generator(gen_spec, derive_seed(config.seed, 200 + stream_id(stage, pipeline)));
    auto disc = nets::build_discriminator(config.discriminator_spec(), derive_seed(config.seed, 300 + stream_id(stage, pipeline)));

    const fs::path gen_path = out.generator_checkpoint(pipeline), disc_path = out.discriminator_checkpoint(pipeline);
    const bool resuming = config.resume && fs::exists(gen_path) && fs::exists(disc_path);
    if (!resuming && !config.from_scratch) {
        const fs::path init = config.init_checkpoint.empty() ? out.pretrain_checkpoint(pipeline) : fs::path(config.init_checkpoint);
        if (!fs::exists(init))
            throw UsageError(name + " needs a pretrained generator at " + init.string() +
                             "; run the pretrain stage first or pass --from-scratch");
        const nets::Checkpoint c = nets::read_checkpoint(init);
        if (c.stage != "pretrain")
            throw UsageError(name + ": " + init.string() + " is tagged '" + c.stage + "', expected 'pretrain'");
        const std::string tagged = c.metadata.value("pipeline", std::string());
        if (!tagged.empty() && tagged != to_string(pipeline))
            throw UsageError(name + ": " + init.string() + " was pretrained for the " + tagged + " pipeline");
        try {
            nets::restore(c, *gen);
        } catch (const DataError& e) {
            throw DataError(init.string() + ": " + e.what());
        }
    }

    AdversarialTrainer trainer(config, pipeline, std::move(gen), std::move(disc));
    std::int64_t start = 0;
    if (resuming) {
        const nets::Checkpoint g = nets::load_checkpoint_into(gen_path, trainer.generator());
        const nets::Checkpoint d = nets::load_checkpoint_into(disc_path, trainer.discriminator());
        if (g.step != d.step) throw DataError(name + ": generator and discriminator checkpoints disagree on the step");
        if (g.optimizer) trainer.generator_optimizer().load_state(*g.optimizer);
        if (d.optimizer) trainer.discriminator_optimizer().load_state(*d.optimizer);
        start = g.step;
    }

    StageLoop loop(config, name, stream, start);
    auto save = [&](std::int64_t step) {
        save_tagged(trainer.generator(), gen_path, name, step, trainer.generator_optimizer(), pipeline, true);
        save_tagged(trainer.discriminator(), disc_path, name, step, trainer.discriminator_optimizer(), pipeline, true);
    };
    for (std::int64_t step = start; step < loop.total(); ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const data::Batch batch = stream.batch(static_cast<std::uint64_t>(step));
        const losses::Objective d = trainer.discriminator_step(batch, step);
        require_finite(d, loop.log(), name, step, "discriminator");
        const losses::Objective g = trainer.generator_step(batch, step);
        require_finite(g, loop.log(), name, step, "generator");
        loop.record({step, loop.epoch_of(step), g.breakdown, d.breakdown}, seconds_since(t0));
        if (loop.due(config.checkpoint_every, step)) save(step + 1);
        if (loop.due(config.sample_every, step)) write_sample(config, name, step + 1, batch, trainer.generator());
    }
    save(loop.total());
    StageResult result = std::move(loop.result());
    result.steps = loop.total();
    result.checkpoint = gen_path;
    result.discriminator_checkpoint = disc_path;
    return result;
}

std::vector<StageResult> train_parallel(const TrainConfig& config, const data::DatasetManifest& manifest) {
    std::vector<StageResult> results(2);
    std::exception_ptr errors[2];
    std::vector<std::thread> threads;
    const Pipeline order[2] = {Pipeline::foreground, Pipeline::background};
    for (int i = 0; i < 2; ++i)
        threads.emplace_back([&, i] {
            try {
                TrainConfig c = config;
                c.stage = order[i] == Pipeline::foreground ? Stage::adversarial_fg : Stage::adversarial_bg;
                results[i] = train_adversarial(c, manifest, order[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

// Fusion

double reconstruction_psnr(fusion::FusionNet& net, const data::DatasetManifest& manifest, int resolution) {
    data::ImageCache cache;
    double total = 0.0;
    const auto samples = data::eligible_samples(manifest, data::BatchMode::fusion);
    if (samples.empty()) throw DataError("no fusion samples to evaluate");
    for (const auto& s : samples) {
        const data::ColorSample cs = data::load_sample(manifest, s, resolution, cache);
        total += metrics::psnr(fusion::reconstruct(net, cs.rgb), cs.rgb);
    }
    return total / static_cast<double>(samples.size());
}

StageResult train_fusion(const TrainConfig& config, const data::DatasetManifest& manifest) {
    config.validate();
    const OutputLayout out{config.out_dir};
    out.create();
    data::BatchStream stream = make_stream(config, manifest, data::BatchMode::fusion, stream_id(Stage::fusion, Pipeline::foreground));
    auto net = fusion::build_fusion_net(config.fusion_spec(), derive_seed(config.seed, 400));
    nn::Adam opt(net->parameters(), adam_options(config.gen_lr, config));
    const fs::path ckpt_path = out.fusion_checkpoint();
    std::int64_t start = 0;
    if (config.resume && fs::exists(ckpt_path)) {
        const nets::Checkpoint c = nets::load_checkpoint_into(ckpt_path, *net);
        if (c.optimizer) opt.load_state(*c.optimizer);
        start = c.step;
    }
    int window = std::min(config.ssim_window, config.resolution);
    if (window % 2 == 0) --window;

    StageLoop loop(config, "fusion", stream, start);
    for (std::int64_t step = start; step < loop.total(); ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const data::Batch batch = stream.batch(static_cast<std::uint64_t>(step));
        const nn::Var target(batch.rgb);
        opt.zero_grad();
        const nn::Var recon = net->forward(target, true);
        const losses::Objective obj = losses::fusion_objective(recon, target, config.weights.lambda_ssim, window);
        require_finite(obj, loop.log(), "fusion", step, "fusion");
        obj.total.backward();
        opt.step();
        loop.record({step, loop.epoch_of(step), obj.breakdown, std::nullopt}, seconds_since(t0));
        if (loop.due(config.checkpoint_every, step)) nets::save_checkpoint(*net, ckpt_path, "fusion", step + 1, &opt);
    }
    nets::save_checkpoint(*net, ckpt_path, "fusion", loop.total(), &opt);
    StageResult result = std::move(loop.result());
    result.steps = loop.total();
    result.checkpoint = ckpt_path;
    const double train_psnr = reconstruction_psnr(*net, manifest, config.resolution);
    result.summary["train_psnr"] = train_psnr;
    loop.log().event({{"type", "evaluation"}, {"stage", "fusion"}, {"train_psnr", train_psnr}});
    return result;
}

std::vector<StageResult> run_stage(const TrainConfig& config, const data::DatasetManifest& manifest) {
    switch (config.stage) {
        case Stage::pretrain: {
            std::vector<StageResult> out;
            for (auto p : config.pipelines) out.push_back(pretrain_generator(config, manifest, p));
            return out;
        }
        case Stage::adversarial_fg: return {train_adversarial(config, manifest, Pipeline::foreground)};
        case Stage::adversarial_bg: return {train_adversarial(config, manifest, Pipeline::background)};
        case Stage::fusion: return {train_fusion(config, manifest)};
    }
    return {};
}

}  // namespace paracolor::training
