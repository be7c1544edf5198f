#include "paracolor/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "paracolor/data/color.hpp"
#include "paracolor/data/dataset.hpp"
#include "paracolor/data/tensors.hpp"
#include "paracolor/edgemap.hpp"
#include "paracolor/error.hpp"
#include "paracolor/metrics.hpp"
#include "paracolor/training.hpp"
#include "paracolor/util/random.hpp"

namespace paracolor::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string default_out_dir() {
    const char* env = std::getenv("PARACOLOR_OUT");
    return env && *env ? env : "runs/default";
}

bool has_color(const data::RgbImage& img) {
    const std::size_t plane = img.plane();
    for (std::size_t i = 0; i < plane; ++i) {
        const double r = img.pixels[i], g = img.pixels[plane + i], b = img.pixels[2 * plane + i];
        if (std::abs(r - g) > 0.5 / 255.0 || std::abs(r - b) > 0.5 / 255.0) return true;
    }
    return false;
}

namespace {

constexpr int kExitOk = static_cast<int>(ExitCode::ok);
constexpr int kExitUsage = static_cast<int>(ExitCode::usage);
constexpr int kExitData = static_cast<int>(ExitCode::data);
constexpr int kExitNumerical = static_cast<int>(ExitCode::numerical);

std::vector<double> predict_chroma(nets::Generator& gen, const data::LabImage& lab) {
    const int res = gen.spec().resolution;
    const data::LabImage small = data::resize_bilinear(lab, res, res);
    nn::NoGradGuard guard;
    const nn::Var pred = gen.forward(nn::Var(data::lightness_tensor(small)), false);
    data::LabImage out = data::with_chroma(small, data::chroma_from_tensor(pred.value(), 0));
    return data::resize_bilinear(out, lab.height, lab.width).ab;
}

}  // namespace

Colorized colorize(nets::Generator& foreground, nets::Generator& background, fusion::FusionNet& fusion_net,
                   const data::RgbImage& input, fusion::Strategy strategy) {
    Colorized out;
    out.had_color = has_color(input);
    const data::LabImage lab = data::rgb_to_lab(input);
    out.foreground = data::lab_to_rgb(data::with_chroma(lab, predict_chroma(foreground, lab))).image;
    out.background = data::lab_to_rgb(data::with_chroma(lab, predict_chroma(background, lab))).image;
    out.fused = fusion::fuse_images(fusion_net, out.foreground, out.background, strategy);
    return out;
}

namespace {

// Option documents: built-in defaults, then the --config file, then --set
// overrides, then explicit flags. The result is echoed next to the outputs.

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

void merge_known(json& doc, const json& file, const std::string& command) {
    if (!file.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [key, value] : file.items()) {
        if (!doc.contains(key)) throw UsageError("unknown " + command + " config field '" + key + "'");
        doc[key] = value;
    }
}

void write_echo(const fs::path& dir, const std::string& name, const json& doc) {
    fs::create_directories(dir);
    std::ofstream out(dir / (name + ".config.json"));
    if (!out) throw DataError("cannot write config echo in " + dir.string());
    out << doc.dump(2) << '\n';
}

template <class T>
T field(const json& doc, const char* key) {
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception&) {
        throw UsageError(std::string("config field '") + key + "' has the wrong type");
    }
}

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

std::unique_ptr<nets::Generator> load_generator(const fs::path& path) {
    if (!fs::exists(path)) throw UsageError("generator checkpoint not found: " + path.string());
    auto net = nets::load_checkpoint(path);
    if (net->spec().kind != nets::NetworkKind::generator)
        throw DataError(path.string() + " holds a " + nets::to_string(net->spec().kind) + ", not a generator");
    return std::unique_ptr<nets::Generator>(static_cast<nets::Generator*>(net.release()));
}

std::unique_ptr<fusion::FusionNet> load_fusion(const fs::path& path) {
    if (!fs::exists(path)) throw UsageError("fusion checkpoint not found: " + path.string());
    auto net = nets::load_checkpoint(path);
    if (net->spec().kind != nets::NetworkKind::fusion)
        throw DataError(path.string() + " holds a " + nets::to_string(net->spec().kind) + ", not a fusion network");
    return std::unique_ptr<fusion::FusionNet>(static_cast<fusion::FusionNet*>(net.release()));
}

struct Models {
    std::unique_ptr<nets::Generator> foreground, background;
    std::unique_ptr<fusion::FusionNet> fusion;
};

Models load_models(const json& doc) {
    const training::OutputLayout layout{field<std::string>(doc, "out_dir")};
    auto pick = [&](const char* key, const fs::path& fallback) {
        const auto given = field<std::string>(doc, key);
        return given.empty() ? fallback : fs::path(given);
    };
    Models m;
    m.foreground = load_generator(pick("fg_checkpoint", layout.generator_checkpoint(training::Pipeline::foreground)));
    m.background = load_generator(pick("bg_checkpoint", layout.generator_checkpoint(training::Pipeline::background)));
    m.fusion = load_fusion(pick("fusion_checkpoint", layout.fusion_checkpoint()));
    return m;
}

// Commands

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "Override a config field: key=value (repeatable)");
    cmd->add_option("--out-dir", c.out_dir, "Output root (default: $PARACOLOR_OUT or runs/default)");
}

json resolve(json defaults, const Common& c, const std::string& command) {
    if (!c.config.empty()) merge_known(defaults, read_json_file(c.config), command);
    for (const auto& s : c.overrides) {
        json patch = json::object();
        training::apply_override(patch, s);
        merge_known(defaults, patch, command);
    }
    if (!c.out_dir.empty()) defaults["out_dir"] = c.out_dir;
    return defaults;
}

int cmd_prepare(const json& doc, std::ostream& out, std::ostream& err) {
    const fs::path images = field<std::string>(doc, "images");
    if (images.empty()) throw UsageError("prepare needs --images");
    data::ManifestOptions opts;
    if (const auto p = field<std::string>(doc, "proposals"); !p.empty()) opts.proposal_file = p;
    if (const auto s = field<std::string>(doc, "scenes"); !s.empty()) opts.scenes_dir = s;
    opts.min_proposal_side = field<int>(doc, "min_proposal_side");
    const data::DatasetManifest manifest = data::load_manifest(images, opts);
    if (manifest.count(data::Source::main) == 0) throw DataError("no readable images under " + images.string());
    const fs::path root = field<std::string>(doc, "out_dir");
    const fs::path cache = doc.at("manifest").get<std::string>().empty() ? root / "manifest.json"
                                                                          : fs::path(field<std::string>(doc, "manifest"));
    data::save_manifest_cache(manifest, cache);
    write_echo(root, "prepare", doc);
    out << "manifest: " << cache.string() << '\n'
        << "images (main): " << manifest.count(data::Source::main) << '\n'
        << "images (scenes): " << manifest.count(data::Source::scenes) << '\n'
        << "proposals: " << manifest.proposal_count() << '\n'
        << "dropped proposals: " << manifest.stats.dropped_proposals << '\n'
        << "unknown image references: " << manifest.stats.unknown_references << '\n'
        << "skipped images: " << manifest.stats.skipped_images << '\n';
    if (manifest.stats.unknown_references > 0)
        err << "warning: " << manifest.stats.unknown_references << " proposals name unknown images and were skipped\n";
    return kExitOk;
}

data::DatasetManifest manifest_for(const training::TrainConfig& c) {
    if (!c.data.manifest.empty()) return data::load_manifest_cache(c.data.manifest);
    if (!c.data.images.empty()) {
        data::ManifestOptions opts;
        if (!c.data.proposals.empty()) opts.proposal_file = c.data.proposals;
        if (!c.data.scenes.empty()) opts.scenes_dir = c.data.scenes;
        return data::load_manifest(c.data.images, opts);
    }
    const fs::path cached = fs::path(c.out_dir) / "manifest.json";
    if (fs::exists(cached)) return data::load_manifest_cache(cached);
    throw UsageError("no training data: set data.manifest or data.images, or run prepare into the output directory");
}

void report_stage(const training::StageResult& r, std::ostream& out) {
    out << r.stage << ": steps " << r.start_step << ".." << r.steps;
    if (!r.history.empty()) {
        out << ", final loss";
        const auto& g = r.history.back().generator;
        for (const auto& c : g.components) out << ' ' << c.name << '=' << c.value;
        if (const auto& d = r.history.back().discriminator) {
            out << ", discriminator";
            for (const auto& c : d->components) out << ' ' << c.name << '=' << c.value;
        }
    }
    out << '\n';
    if (!r.checkpoint.empty()) out << "  checkpoint: " << r.checkpoint.string() << '\n';
    if (!r.discriminator_checkpoint.empty()) out << "  checkpoint: " << r.discriminator_checkpoint.string() << '\n';
    for (const auto& [k, v] : r.summary.items()) out << "  " << k << ": " << v.dump() << '\n';
}

int cmd_train(json doc, std::ostream& out) {
    const bool parallel = doc.value("stage", "") == "parallel";
    json config_doc = doc;
    if (parallel) config_doc["stage"] = "adversarial_fg";
    const training::TrainConfig config = training::TrainConfig::from_json(config_doc);
    json echo = config.to_json();
    if (parallel) echo["stage"] = "parallel";
    const training::OutputLayout layout{config.out_dir};
    layout.create();
    write_echo(layout.root, "train_" + echo["stage"].get<std::string>(), echo);
    const data::DatasetManifest manifest = manifest_for(config);
    const auto results = parallel ? training::train_parallel(config, manifest) : training::run_stage(config, manifest);
    for (const auto& r : results) report_stage(r, out);
    return kExitOk;
}

int cmd_colorize(const json& doc, std::ostream& out, std::ostream& err) {
    const fs::path input = field<std::string>(doc, "input");
    if (input.empty()) throw UsageError("colorize needs --input");
    if (!fs::exists(input)) throw DataError("input not found: " + input.string());
    const auto strategy = fusion::strategy_from_string(field<std::string>(doc, "fusion_strategy"));
    const bool intermediates = field<bool>(doc, "save_intermediates");
    const fs::path root = field<std::string>(doc, "out_dir");
    const fs::path dest = field<std::string>(doc, "output").empty() ? root / "colorized"
                                                                    : fs::path(field<std::string>(doc, "output"));
    Models models = load_models(doc);
    const std::uint64_t seed = field<std::uint64_t>(doc, "seed");
    models.foreground->seed_noise(derive_seed(seed, 1));
    models.background->seed_noise(derive_seed(seed, 2));

    const std::vector<fs::path> files = fs::is_directory(input) ? list_images(input) : std::vector<fs::path>{input};
    if (files.empty()) throw DataError("no PNG/JPEG images in " + input.string());
    fs::create_directories(dest);
    write_echo(root, "colorize", doc);
    for (const auto& file : files) {
        const data::RgbImage img = data::read_image(file);
        const Colorized result = colorize(*models.foreground, *models.background, *models.fusion, img, strategy);
        if (result.had_color)
            err << "warning: " << file.filename().string()
                << " is a color image; its lightness is extracted and recolorized\n";
        const std::string stem = file.stem().string();
        data::write_image(dest / (stem + ".png"), result.fused);
        if (intermediates) {
            fs::create_directories(dest / "intermediates");
            data::write_image(dest / "intermediates" / (stem + "_foreground.png"), result.foreground);
            data::write_image(dest / "intermediates" / (stem + "_background.png"), result.background);
        }
        out << (dest / (stem + ".png")).string() << '\n';
    }
    return kExitOk;
}

Eigen::MatrixXd features_for(const json& doc, const char* key, const std::vector<data::RgbImage>& images,
                             metrics::EmbedBackend backend, int expected_dim) {
    if (backend == metrics::EmbedBackend::pool_stats) return metrics::embed_pool_stats(images);
    const auto path = field<std::string>(doc, key);
    if (path.empty())
        throw UsageError(std::string("the external embed backend needs --") +
                         (std::string(key) == "generated_features" ? "generated-features" : "reference-features"));
    return metrics::read_feature_file(path, expected_dim).features;
}

int cmd_evaluate(const json& doc, std::ostream& out, std::ostream& err) {
    const fs::path gen_dir = field<std::string>(doc, "generated"), ref_dir = field<std::string>(doc, "reference");
    if (gen_dir.empty() || ref_dir.empty()) throw UsageError("evaluate needs --generated and --reference");
    for (const auto& d : {gen_dir, ref_dir})
        if (!fs::is_directory(d)) throw DataError("not a directory: " + d.string());
    const auto backend = metrics::embed_backend_from_string(field<std::string>(doc, "embed_backend"));
    const bool allow_partial = field<bool>(doc, "allow_partial");

    std::map<std::string, fs::path> gen_files, ref_files;
    for (const auto& p : list_images(gen_dir)) gen_files[p.stem().string()] = p;
    for (const auto& p : list_images(ref_dir)) ref_files[p.stem().string()] = p;
    std::vector<std::string> names, unpaired;
    for (const auto& [stem, _] : gen_files) (ref_files.count(stem) ? names : unpaired).push_back("generated/" + stem);
    for (const auto& [stem, _] : ref_files)
        if (!gen_files.count(stem)) unpaired.push_back("reference/" + stem);
    for (auto& n : names) n = n.substr(n.find('/') + 1);
    if (!unpaired.empty()) {
        std::string list;
        for (const auto& u : unpaired) list += "\n  " + u;
        if (!allow_partial) throw DataError(std::to_string(unpaired.size()) + " unpaired files:" + list);
        err << "warning: skipping " << unpaired.size() << " unpaired files:" << list << '\n';
    }
    if (names.empty()) throw DataError("no paired images to evaluate");

    std::vector<data::RgbImage> generated, reference;
    for (const auto& n : names) {
        generated.push_back(data::read_image(gen_files[n]));
        reference.push_back(data::read_image(ref_files[n]));
        if (generated.back().height != reference.back().height || generated.back().width != reference.back().width)
            throw DataError("size mismatch for pair " + n);
    }
    const int dim = field<int>(doc, "feature_dim");
    const Eigen::MatrixXd gf = features_for(doc, "generated_features", generated, backend, dim);
    const Eigen::MatrixXd rf = features_for(doc, "reference_features", reference, backend, dim);
    metrics::MetricReport report = metrics::build_report(names, generated, reference, gf, rf);
    report.embed_backend = metrics::to_string(backend);
    report.unpaired = unpaired.size();
    report.config = doc;

    const training::OutputLayout layout{field<std::string>(doc, "out_dir")};
    fs::create_directories(layout.reports());
    {
        std::ofstream j(layout.reports() / "metrics.json");
        j << report.to_json().dump(2) << '\n';
        std::ofstream c(layout.reports() / "metrics.csv");
        c << report.to_csv();
        if (!j || !c) throw DataError("cannot write reports in " + layout.reports().string());
    }
    write_echo(layout.root, "evaluate", doc);
    for (const auto& w : report.warnings) err << "warning: " << w << '\n';
    out << std::setprecision(8) << "pairs: " << report.images.size() << '\n'
        << "psnr: " << (std::isinf(report.mean_psnr) ? std::string("inf") : std::to_string(report.mean_psnr)) << '\n'
        << "ssim: " << report.mean_ssim << '\n'
        << "fid (" << report.embed_backend << "): " << report.fid << '\n'
        << "delta_colorful: " << report.delta_colorful << '\n'
        << "report: " << (layout.reports() / "metrics.json").string() << '\n';
    return kExitOk;
}

int cmd_score_humaneval(const json& doc, std::ostream& out) {
    const fs::path csv = field<std::string>(doc, "csv");
    if (csv.empty()) throw UsageError("score-humaneval needs a CSV path");
    const metrics::HumanEvalTable table = metrics::read_humaneval_csv(csv);
    const double f = metrics::fooling_score(table);
    const auto totals = table.case_totals();
    out << std::setprecision(10) << "fooling_score: " << f << '\n';
    for (int i = 0; i < 4; ++i) out << "case" << i + 1 << "_total: " << totals[i] << '\n';
    out << "decisions: " << table.total() << '\n';
    const training::OutputLayout layout{field<std::string>(doc, "out_dir")};
    fs::create_directories(layout.reports());
    std::ofstream(layout.reports() / "humaneval.json")
        << json{{"fooling_score", f},
                {"case_totals", totals},
                {"case_scores", table.case_scores},
                {"decisions", table.total()}}
               .dump(2)
        << '\n';
    write_echo(layout.root, "score-humaneval", doc);
    return kExitOk;
}

struct Timing {
    std::string stage;
    std::vector<double> seconds;
    double mean() const {
        double s = 0.0;
        for (double x : seconds) s += x;
        return seconds.empty() ? 0.0 : s / static_cast<double>(seconds.size());
    }
    double median() const {
        if (seconds.empty()) return 0.0;
        std::vector<double> v = seconds;
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
};

int cmd_benchmark(const json& doc, std::ostream& out) {
    const int n = field<int>(doc, "n_images"), warmup = field<int>(doc, "warmup"), res = field<int>(doc, "resolution");
    if (n < 1 || warmup < 0 || res < 16) throw UsageError("benchmark needs n_images >= 1, warmup >= 0, resolution >= 16");
    Models models = load_models(doc);
    const auto strategy = fusion::strategy_from_string(field<std::string>(doc, "fusion_strategy"));
    std::mt19937_64 rng(field<std::uint64_t>(doc, "seed"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    using clock = std::chrono::steady_clock;
    Timing color{"colorization", {}}, fuse{"fusion", {}}, total{"end_to_end", {}};
    for (int i = 0; i < warmup + n; ++i) {
        data::RgbImage img(res, res);
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                const double v = unit(rng);
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
            }
        const auto t0 = clock::now();
        const data::LabImage lab = data::rgb_to_lab(img);
        const auto fg = data::lab_to_rgb(data::with_chroma(lab, predict_chroma(*models.foreground, lab))).image;
        const auto bg = data::lab_to_rgb(data::with_chroma(lab, predict_chroma(*models.background, lab))).image;
        const auto t1 = clock::now();
        const auto fused = fusion::fuse_images(*models.fusion, fg, bg, strategy);
        const auto t2 = clock::now();
        if (i < warmup) continue;
        color.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        fuse.seconds.push_back(std::chrono::duration<double>(t2 - t1).count());
        total.seconds.push_back(std::chrono::duration<double>(t2 - t0).count());
    }
    json rows = json::array();
    out << std::left << std::setw(14) << "stage" << std::setw(14) << "mean_s" << std::setw(14) << "median_s"
        << "samples\n";
    for (const Timing* t : {&color, &fuse, &total}) {
        rows.push_back({{"stage", t->stage}, {"mean_seconds", t->mean()}, {"median_seconds", t->median()},
                        {"samples", t->seconds.size()}});
        out << std::setw(14) << t->stage << std::setw(14) << t->mean() << std::setw(14) << t->median()
            << t->seconds.size() << '\n';
    }
    const training::OutputLayout layout{field<std::string>(doc, "out_dir")};
    fs::create_directories(layout.reports());
    std::ofstream(layout.reports() / "benchmark.json")
        << json{{"resolution", res}, {"warmup", warmup}, {"rows", rows}}.dump(2) << '\n';
    write_echo(layout.root, "benchmark", doc);
    return kExitOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Parallel foreground/background colorization with fusion", "paracolor"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // prepare
    Common prep_c;
    std::string prep_images, prep_proposals, prep_scenes, prep_manifest;
    auto* prep = app.add_subcommand("prepare", "Scan images (and proposals, scenes) into a manifest cache");
    add_common(prep, prep_c);
    prep->add_option("--images", prep_images, "Main image directory");
    prep->add_option("--proposals", prep_proposals, "COCO-style proposal annotations");
    prep->add_option("--scenes", prep_scenes, "Scene-source image directory");
    prep->add_option("--manifest", prep_manifest, "Manifest cache path (default: <out-dir>/manifest.json)");

    // train
    Common train_c;
    std::string stage, train_images, train_manifest;
    std::uint64_t train_seed = 0;
    bool from_scratch = false;
    auto* train = app.add_subcommand("train", "Run one training stage");
    add_common(train, train_c);
    train->add_option("--stage", stage, "pretrain, adversarial_fg, adversarial_bg, fusion or parallel")
        ->check(CLI::IsMember({"pretrain", "adversarial_fg", "adversarial_bg", "fusion", "parallel"}));
    train->add_option("--seed", train_seed, "Random seed");
    train->add_flag("--from-scratch", from_scratch, "Allow adversarial training without a pretrained generator");
    train->add_option("--images", train_images, "Image directory (instead of a manifest)");
    train->add_option("--manifest", train_manifest, "Manifest cache written by prepare");

    // colorize
    Common col_c;
    std::string col_input, col_output, col_fg, col_bg, col_fusion, col_strategy;
    std::uint64_t col_seed = 0;
    bool intermediates = false;
    auto* col = app.add_subcommand("colorize", "Colorize a grayscale image or directory");
    add_common(col, col_c);
    col->add_option("--input", col_input, "Image file or directory");
    col->add_option("--output", col_output, "Output directory (default: <out-dir>/colorized)");
    col->add_option("--fg-checkpoint", col_fg, "Foreground generator checkpoint");
    col->add_option("--bg-checkpoint", col_bg, "Background generator checkpoint");
    col->add_option("--fusion-checkpoint", col_fusion, "Fusion network checkpoint");
    col->add_option("--fusion-strategy", col_strategy, "add, mean or l1norm")
        ->check(CLI::IsMember({"add", "mean", "l1norm"}));
    col->add_flag("--save-intermediates", intermediates, "Also write the foreground and background proposals");
    col->add_option("--seed", col_seed, "Random seed");

    // evaluate
    Common ev_c;
    std::string ev_gen, ev_ref, ev_backend, ev_gf, ev_rf;
    bool allow_partial = false;
    auto* ev = app.add_subcommand("evaluate", "Compare generated images against references");
    add_common(ev, ev_c);
    ev->add_option("--generated", ev_gen, "Directory of generated images");
    ev->add_option("--reference", ev_ref, "Directory of reference images");
    ev->add_option("--embed-backend", ev_backend, "pool_stats or external")
        ->check(CLI::IsMember({"pool_stats", "external"}));
    ev->add_option("--generated-features", ev_gf, "Feature file for the generated set (external backend)");
    ev->add_option("--reference-features", ev_rf, "Feature file for the reference set (external backend)");
    ev->add_flag("--allow-partial", allow_partial, "Skip unpaired files instead of failing");

    // score-humaneval
    Common he_c;
    std::string he_csv;
    auto* he = app.add_subcommand("score-humaneval", "Fooling score of a human-evaluation count table");
    add_common(he, he_c);
    he->add_option("csv", he_csv, "CSV with four case counts per row");

    // benchmark
    Common bm_c;
    std::string bm_fg, bm_bg, bm_fusion, bm_strategy;
    int bm_n = 0, bm_res = 0;
    std::uint64_t bm_seed = 0;
    auto* bm = app.add_subcommand("benchmark", "Time colorization and fusion on random inputs");
    add_common(bm, bm_c);
    bm->add_option("--n-images", bm_n, "Timed images");
    bm->add_option("--resolution", bm_res, "Input side length");
    bm->add_option("--fg-checkpoint", bm_fg, "Foreground generator checkpoint");
    bm->add_option("--bg-checkpoint", bm_bg, "Background generator checkpoint");
    bm->add_option("--fusion-checkpoint", bm_fusion, "Fusion network checkpoint");
    bm->add_option("--fusion-strategy", bm_strategy, "add, mean or l1norm")
        ->check(CLI::IsMember({"add", "mean", "l1norm"}));
    bm->add_option("--seed", bm_seed, "Random seed");

    std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(reversed.begin(), reversed.end());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        const auto subs = app.get_subcommands();
        err << "error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    auto given = [](CLI::App* cmd, const char* name) { return cmd->get_option(name)->count() > 0; };
    const std::string out_default = default_out_dir();

    if (prep->parsed()) {
        json doc = resolve({{"images", ""}, {"proposals", ""}, {"scenes", ""}, {"manifest", ""},
                            {"min_proposal_side", 16}, {"out_dir", out_default}},
                           prep_c, "prepare");
        if (given(prep, "--images")) doc["images"] = prep_images;
        if (given(prep, "--proposals")) doc["proposals"] = prep_proposals;
        if (given(prep, "--scenes")) doc["scenes"] = prep_scenes;
        if (given(prep, "--manifest")) doc["manifest"] = prep_manifest;
        return cmd_prepare(doc, out, err);
    }
    if (train->parsed()) {
        json doc = json::object();
        if (!train_c.config.empty()) doc = read_json_file(train_c.config);
        if (!doc.is_object()) throw UsageError("config must be a JSON object");
        for (const auto& s : train_c.overrides) training::apply_override(doc, s);
        if (!doc.contains("out_dir")) doc["out_dir"] = out_default;
        if (!train_c.out_dir.empty()) doc["out_dir"] = train_c.out_dir;
        if (given(train, "--stage")) doc["stage"] = stage;
        if (given(train, "--seed")) doc["seed"] = train_seed;
        if (from_scratch) doc["from_scratch"] = true;
        if (given(train, "--images")) doc["data"]["images"] = train_images;
        if (given(train, "--manifest")) doc["data"]["manifest"] = train_manifest;
        return cmd_train(doc, out);
    }
    const json model_defaults{{"fg_checkpoint", ""}, {"bg_checkpoint", ""}, {"fusion_checkpoint", ""},
                              {"fusion_strategy", "mean"}, {"seed", 0}, {"out_dir", out_default}};
    if (col->parsed()) {
        json defaults = model_defaults;
        defaults.update(json{{"input", ""}, {"output", ""}, {"save_intermediates", false}});
        json doc = resolve(defaults, col_c, "colorize");
        if (given(col, "--input")) doc["input"] = col_input;
        if (given(col, "--output")) doc["output"] = col_output;
        if (given(col, "--fg-checkpoint")) doc["fg_checkpoint"] = col_fg;
        if (given(col, "--bg-checkpoint")) doc["bg_checkpoint"] = col_bg;
        if (given(col, "--fusion-checkpoint")) doc["fusion_checkpoint"] = col_fusion;
        if (given(col, "--fusion-strategy")) doc["fusion_strategy"] = col_strategy;
        if (intermediates) doc["save_intermediates"] = true;
        if (given(col, "--seed")) doc["seed"] = col_seed;
        return cmd_colorize(doc, out, err);
    }
    if (ev->parsed()) {
        json doc = resolve({{"generated", ""}, {"reference", ""}, {"embed_backend", "pool_stats"},
                            {"generated_features", ""}, {"reference_features", ""}, {"feature_dim", -1},
                            {"allow_partial", false}, {"out_dir", out_default}},
                           ev_c, "evaluate");
        if (given(ev, "--generated")) doc["generated"] = ev_gen;
        if (given(ev, "--reference")) doc["reference"] = ev_ref;
        if (given(ev, "--embed-backend")) doc["embed_backend"] = ev_backend;
        if (given(ev, "--generated-features")) doc["generated_features"] = ev_gf;
        if (given(ev, "--reference-features")) doc["reference_features"] = ev_rf;
        if (allow_partial) doc["allow_partial"] = true;
        return cmd_evaluate(doc, out, err);
    }
    if (he->parsed()) {
        json doc = resolve({{"csv", ""}, {"out_dir", out_default}}, he_c, "score-humaneval");
        if (given(he, "csv")) doc["csv"] = he_csv;
        return cmd_score_humaneval(doc, out);
    }
    json defaults = model_defaults;
    defaults.update(json{{"n_images", 10}, {"resolution", 256}, {"warmup", 2}});
    json doc = resolve(defaults, bm_c, "benchmark");
    if (given(bm, "--n-images")) doc["n_images"] = bm_n;
    if (given(bm, "--resolution")) doc["resolution"] = bm_res;
    if (given(bm, "--fg-checkpoint")) doc["fg_checkpoint"] = bm_fg;
    if (given(bm, "--bg-checkpoint")) doc["bg_checkpoint"] = bm_bg;
    if (given(bm, "--fusion-checkpoint")) doc["fusion_checkpoint"] = bm_fusion;
    if (given(bm, "--fusion-strategy")) doc["fusion_strategy"] = bm_strategy;
    if (given(bm, "--seed")) doc["seed"] = bm_seed;
    return cmd_benchmark(doc, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericalError& e) {
        err << "numerical abort: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

}  // namespace paracolor::cli
