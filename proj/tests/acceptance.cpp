// One PASS/FAIL line per acceptance criterion; exits nonzero when any fails.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "paracolor/cli.hpp"
#include "paracolor/data/color.hpp"
#include "paracolor/data/tensors.hpp"
#include "paracolor/edgemap.hpp"
#include "paracolor/fusion.hpp"
#include "paracolor/losses.hpp"
#include "paracolor/metrics.hpp"
#include "paracolor/networks.hpp"
#include "paracolor/training.hpp"
#include "support/fixtures.hpp"

using namespace paracolor;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        if (!ok) pass = false;
        notes.push_back((ok ? "" : "!") + what);
    }
};

std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

// Fooling score over the published human-evaluation counts.
Outcome fooling_score() {
    Outcome o;
    const auto table = metrics::parse_humaneval_csv(
        "batch_case1,case2,case3,case4\n6,37,52,5\n12,40,40,8\n6,29,55,10\n7,34,49,10\n");
    const double f = metrics::fooling_score(table);
    o.check(std::abs(f - 0.5375) <= 1e-9, "F=" + fmt(f, 12));
    return o;
}

// Otsu against exhaustive between-class-variance search.
int brute_force_otsu(const std::vector<std::uint64_t>& h) {
    double total = 0, sum = 0;
    for (int i = 0; i < 256; ++i) {
        total += static_cast<double>(h[i]);
        sum += i * static_cast<double>(h[i]);
    }
    double best = -1.0;
    int best_t = -1;
    for (int t = 0; t < 255; ++t) {
        double n0 = 0, s0 = 0;
        for (int i = 0; i <= t; ++i) {
            n0 += static_cast<double>(h[i]);
            s0 += i * static_cast<double>(h[i]);
        }
        const double n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const double w0 = n0 / total, w1 = n1 / total;
        const double mu0 = s0 / n0, mu1 = (sum - s0) / n1;
        const double v = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (v > best * (1.0 + 1e-12)) {
            best = v;
            best_t = t;
        }
    }
    return best_t;
}

Outcome otsu_oracle() {
    Outcome o;
    std::mt19937_64 rng(11);
    int matches = 0;
    for (int k = 0; k < 100; ++k) {
        std::vector<std::uint64_t> h(256, 0);
        std::uniform_int_distribution<int> count(0, 1000), coin(0, 3);
        for (auto& c : h) c = coin(rng) == 0 ? 0 : static_cast<std::uint64_t>(count(rng));
        h[static_cast<std::size_t>(k)] += 1;  // never empty
        const auto r = edge::otsu_threshold(h);
        matches += !r.degenerate && r.threshold == brute_force_otsu(h);
    }
    o.check(matches == 100, std::to_string(matches) + "/100 exact");
    return o;
}

Outcome edge_detector() {
    Outcome o;
    const int n = 32;
    const auto flat = edge::canny(data::GrayImage(n, n, 0.4));
    o.check(flat.edge_count() == 0, "constant edges=" + std::to_string(flat.edge_count()));

    data::GrayImage step(n, n, 0.0);
    for (int y = 0; y < n; ++y)
        for (int x = n / 2; x < n; ++x) step.at(y, x) = 1.0;
    const auto e = edge::canny(step);
    bool single = true;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) single &= (e.at(y, x) != 0) == (x == n / 2);
    o.check(single, "step edge one pixel wide at column " + std::to_string(n / 2));

    std::mt19937_64 rng(5);
    int invariant = 0;
    for (int k = 0; k < 50; ++k) {
        const data::GrayImage g = data::to_gray(fixtures::random_image(rng, 24 + k % 9, 24 + (k * 7) % 11));
        data::GrayImage inv = g;
        for (double& v : inv.pixels) v = 1.0 - v;
        invariant += edge::canny(g).mask == edge::canny(inv).mask;
    }
    o.check(invariant == 50, "polarity " + std::to_string(invariant) + "/50");
    return o;
}

Outcome color_round_trip() {
    Outcome o;
    std::mt19937_64 rng(3);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const data::RgbImage img = fixtures::random_image(rng, 16, 16);
        const data::RgbImage back = data::lab_to_rgb(data::rgb_to_lab(img)).image;
        for (std::size_t i = 0; i < img.pixels.size(); ++i) worst = std::max(worst, std::abs(img.pixels[i] - back.pixels[i]));
    }
    o.check(worst <= 1.0 / 255.0, "max error " + fmt(worst, 3));
    return o;
}

nn::Tensor random_tensor(std::mt19937_64& rng, nn::Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    nn::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

Outcome gradient_checks() {
    Outcome o;
    std::mt19937_64 rng(17);
    const double tol = 1e-3;
    const nn::Shape one{1, 1, 8, 8}, lab{1, 3, 8, 8};

    const nn::Tensor x1 = random_tensor(rng, one, -1, 1), t1 = random_tensor(rng, one, -1, 1);
    const double l1 = fixtures::gradient_error([&](const nn::Var& v) { return losses::l1_loss(v, nn::Var(t1)); }, x1,
                                              1e-6, 1e-6,
                                              [&](std::int64_t i) { return std::abs(x1[i] - t1[i]) < 1e-4; });
    o.check(l1 <= tol, "l1 " + fmt(l1, 2));
    const double mse = fixtures::gradient_error([&](const nn::Var& v) { return losses::mse_loss(v, nn::Var(t1)); }, x1);
    o.check(mse <= tol, "mse " + fmt(mse, 2));

    for (auto flavor : {losses::AdversarialFlavor::least_squares, losses::AdversarialFlavor::log})
        for (auto target : {losses::Target::real, losses::Target::fake}) {
            const double err = fixtures::gradient_error(
                [&](const nn::Var& v) { return losses::adversarial_loss(v, target, flavor); }, x1);
            o.check(err <= tol, "adv_" + losses::to_string(flavor) + (target == losses::Target::real ? "_real " : "_fake ") +
                                    fmt(err, 2));
        }

    const nn::Tensor xl = random_tensor(rng, lab, -0.9, 0.9), tl = random_tensor(rng, lab, -0.9, 0.9);
    const double edge = fixtures::gradient_error(
        [&](const nn::Var& v) { return losses::edge_loss_soft(v, nn::Var(tl)); }, xl, 1e-6, 1e-6,
        [&](std::int64_t) { return false; });
    o.check(edge <= tol, "soft_edge " + fmt(edge, 2));

    const nn::Tensor xr = random_tensor(rng, lab, 0.05, 0.95), tr = random_tensor(rng, lab, 0.05, 0.95);
    const double fus = fixtures::gradient_error(
        [&](const nn::Var& v) { return losses::fusion_objective(v, nn::Var(tr), 1.0, 7).total; }, xr);
    o.check(fus <= tol, "fusion_mse_ssim " + fmt(fus, 2));
    return o;
}

Outcome architecture_contracts() {
    Outcome o;
    nn::NoGradGuard guard;
    std::mt19937_64 rng(23);

    auto gen = nets::build_generator(nets::generator_spec(nets::Variant::v3, 64, 256), 1);
    const nn::Var out = gen->forward(nn::Var(random_tensor(rng, {1, 1, 256, 256}, -1, 1)), false);
    bool in_range = true;
    for (double v : out.value().values()) in_range &= v >= -1.0 && v <= 1.0;
    o.check(out.shape() == nn::Shape{1, 2, 256, 256} && in_range,
            "generator " + nn::shape_string(out.shape()) + (in_range ? " in [-1,1]" : " out of range"));

    nn::ParameterRegistry registry;
    nets::SelfAttention attention(registry, "attention", 32, 1 << 22, rng);
    attention.gamma().mutable_value().fill(0.0);
    const nn::Tensor a = random_tensor(rng, {2, 32, 8, 8}, -2, 2);
    const nn::Var b = attention(nn::Var(a));
    double diff = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b.value()[i]));
    o.check(diff <= 1e-6, "attention gamma=0 max diff " + fmt(diff, 2));

    const nets::NetworkSpec dspec = nets::discriminator_spec(64, 256);
    auto disc = nets::build_discriminator(dspec, 2);
    const nn::Var scores = disc->forward(nn::Var(random_tensor(rng, {1, 3, 256, 256}, -1, 1)), false);
    const int side = nets::Discriminator::output_side(dspec, 256);
    o.check(scores.shape() == nn::Shape{1, 1, 30, 30} && side == 30,
            "patchgan " + nn::shape_string(scores.shape()) + " closed form " + std::to_string(side));

    fixtures::TempDir dir("accept-ckpt");
    auto small = nets::build_generator(nets::generator_spec(nets::Variant::v3, 8, 32), 3);
    const nn::Tensor probe = random_tensor(rng, {2, 1, 32, 32}, -1, 1);
    const nn::Tensor before = small->forward(nn::Var(probe), false).value();
    nets::save_checkpoint(*small, dir / "g.ckpt", "pretrain", 0);
    auto loaded = nets::load_checkpoint(dir / "g.ckpt");
    const nn::Tensor after = loaded->forward(nn::Var(probe), false).value();
    o.check(before.storage() == after.storage(), "checkpoint round trip bitwise");
    return o;
}

training::TrainConfig smoke_config(const fs::path& out) {
    training::TrainConfig c;
    c.stage = training::Stage::pretrain;
    c.pipelines = {training::Pipeline::foreground};
    c.resolution = 32;
    c.batch_size = 8;
    c.max_steps = 200;
    c.generator = nets::generator_spec(nets::Variant::v3, 8, 32);
    c.generator.depth = 3;
    c.generator.dropout = 0.0;
    c.discriminator = nets::discriminator_spec(8, 32);
    c.gen_lr = 1.5e-4;
    c.beta1 = 0.9;
    c.out_dir = out.string();
    return c;
}

Outcome training_smoke() {
    Outcome o;
    fixtures::TempDir dir("accept-smoke");
    fixtures::write_fixture(dir / "images", 8, 32, 1);
    const auto manifest = data::load_manifest(dir / "images");
    training::TrainConfig c = smoke_config(dir / "run");
    const auto pre = training::pretrain_generator(c, manifest, training::Pipeline::foreground);
    const double p0 = pre.history.front().generator.value("l1"), p1 = pre.history.back().generator.value("l1");
    o.check(pre.history.size() == 200 && p1 <= 0.5 * p0, "pretrain l1 " + fmt(p0, 4) + " -> " + fmt(p1, 4));

    c.stage = training::Stage::adversarial_fg;
    c.max_steps = 300;
    c.gen_lr = 5e-4;
    c.disc_lr = 2e-5;
    c.beta1 = 0.5;
    const auto adv = training::train_adversarial(c, manifest, training::Pipeline::foreground);
    const double a0 = adv.history.front().generator.value("l1"), a1 = adv.history.back().generator.value("l1");
    o.check(adv.history.size() == 300 && a1 <= 0.5 * a0, "adversarial l1 " + fmt(a0, 4) + " -> " + fmt(a1, 4));
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = adv.history.size() - 50; i < adv.history.size(); ++i)
        for (const char* name : {"real", "fake"}) {
            const double v = adv.history[i].discriminator->value(name);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    o.check(lo > 0.01 && hi < 1.5, "discriminator last 50 in [" + fmt(lo, 3) + ", " + fmt(hi, 3) + "]");
    return o;
}

Outcome fusion_criteria() {
    Outcome o;
    fixtures::TempDir dir("accept-fusion");
    fixtures::write_fixture(dir / "images", 200, 32, 2);
    const auto manifest = data::load_manifest(dir / "images");
    training::TrainConfig c;
    c.stage = training::Stage::fusion;
    c.resolution = 32;
    c.batch_size = 1;
    c.epochs = 5;
    c.generator = nets::generator_spec(nets::Variant::v3, 8, 32);
    c.generator.depth = 3;
    c.discriminator = nets::discriminator_spec(8, 32);
    c.out_dir = (dir / "run").string();
    const auto r = training::train_fusion(c, manifest);
    const double psnr = r.summary.at("train_psnr").get<double>();
    o.check(psnr >= 25.0, "reconstruction psnr " + fmt(psnr, 4) + " dB after " + std::to_string(r.steps) + " steps");

    auto net = fusion::build_fusion_net(nets::load_checkpoint(r.checkpoint)->spec(), 0);
    nets::load_checkpoint_into(r.checkpoint, *net);
    std::mt19937_64 rng(29);
    const data::RgbImage x = fixtures::random_image(rng, 24, 24), y = fixtures::random_image(rng, 24, 24);
    const data::RgbImage same = fusion::fuse_images(*net, x, x, fusion::Strategy::mean);
    o.check(same.pixels == fusion::reconstruct(*net, x).pixels, "fuse(x,x,mean) == decode(encode(x))");
    double asym = 0.0;
    for (auto s : {fusion::Strategy::add, fusion::Strategy::mean, fusion::Strategy::l1_norm}) {
        const auto ab = fusion::fuse_images(*net, x, y, s), ba = fusion::fuse_images(*net, y, x, s);
        for (std::size_t i = 0; i < ab.pixels.size(); ++i) asym = std::max(asym, std::abs(ab.pixels[i] - ba.pixels[i]));
    }
    o.check(asym <= 1e-12, "strategies symmetric, max diff " + fmt(asym, 2));
    o.check(fusion::overlay_fuse(x, y, 1.0).pixels == x.pixels && fusion::overlay_fuse(x, y, 0.0).pixels == y.pixels,
            "overlay endpoints exact");
    return o;
}

Outcome metric_criteria() {
    Outcome o;
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd a(300, 8);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
    const double self = metrics::fid(a, a);
    o.check(self <= 1e-6, "fid(a,a) " + fmt(self, 3));

    metrics::GaussianStats s0{Eigen::VectorXd::Constant(1, 0.0), Eigen::MatrixXd::Identity(1, 1)};
    metrics::GaussianStats s1{Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Identity(1, 1)};
    const double analytic = metrics::frechet_distance(s0, s1);
    o.check(std::abs(analytic - 1.0) <= 1e-6, "1-D gaussians " + fmt(analytic, 10));

    data::RgbImage gray(16, 16, 0.37);
    o.check(metrics::colorfulness(gray) == 0.0, "colorfulness(gray) " + fmt(metrics::colorfulness(gray)));
    data::RgbImage rg(16, 16, 0.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) rg.at(x < 8 ? 0 : 1, y, x) = 1.0;
    const double cf = metrics::colorfulness(rg);
    o.check(std::abs(cf - 293.25) <= 0.01, "colorfulness(red|green) " + fmt(cf, 6));

    const data::RgbImage base = fixtures::random_image(rng, 32, 32);
    data::RgbImage shifted = base;
    for (double& v : shifted.pixels) v = v > 0.5 ? v - 10.0 / 255.0 : v + 10.0 / 255.0;
    const double p = metrics::psnr(base, shifted);
    o.check(std::abs(p - 28.13) <= 0.01, "psnr constant offset " + fmt(p, 6));
    o.check(metrics::ssim(base, base) == 1.0, "ssim identity " + fmt(metrics::ssim(base, base), 12));
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    std::vector<std::string> full{"paracolor"};
    full.insert(full.end(), args.begin(), args.end());
    const int rc = cli::run(full, out, err);
    if (rc != 0) std::cerr << err.str();
    return rc;
}

Outcome end_to_end() {
    Outcome o;
    fixtures::TempDir dir("accept-e2e");
    const fs::path run = dir / "run";
    const training::OutputLayout layout{run};
    layout.create();
    nets::save_checkpoint(*nets::build_generator(nets::generator_spec(nets::Variant::v3, 8, 32), 1),
                          layout.generator_checkpoint(training::Pipeline::foreground), "adversarial_fg", 0);
    nets::save_checkpoint(*nets::build_generator(nets::generator_spec(nets::Variant::v2, 8, 32), 2),
                          layout.generator_checkpoint(training::Pipeline::background), "adversarial_bg", 0);
    nets::save_checkpoint(*fusion::build_fusion_net(fusion::FusionNetSpec{}, 3), layout.fusion_checkpoint(), "fusion",
                          0);
    fixtures::write_fixture(dir / "inputs", 4, 48, 7);

    bool ok = true;
    for (const char* name : {"a", "b"})
        ok &= cli({"colorize", "--input", (dir / "inputs").string(), "--out-dir", run.string(), "--output",
                   (dir / name).string(), "--seed", "5"}) == 0;
    bool identical = ok;
    for (const auto& e : fs::directory_iterator(dir / "a"))
        if (e.is_regular_file()) identical &= slurp(e.path()) == slurp(dir / "b" / e.path().filename());
    o.check(ok && identical, "colorize outputs byte-identical across runs");

    const int rc = cli({"evaluate", "--generated", (dir / "inputs").string(), "--reference",
                        (dir / "inputs").string(), "--out-dir", run.string()});
    const json report = rc == 0 ? json::parse(slurp(layout.reports() / "metrics.json")) : json::object();
    const json agg = report.value("aggregate", json::object());
    const bool psnr_inf = agg.value("psnr", json()) == "inf";
    const double ssim = agg.value("ssim", 0.0), fid = agg.value("fid", 1.0), dc = agg.value("delta_colorful", 1.0);
    o.check(rc == 0 && psnr_inf && ssim == 1.0 && fid <= 1e-6 && dc == 0.0,
            "evaluate self: psnr " + agg.value("psnr", json()).dump() + ", ssim " + fmt(ssim) + ", fid " + fmt(fid, 3) +
                ", delta_colorful " + fmt(dc));
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"fooling_score", fooling_score},
        {"otsu_oracle", otsu_oracle},
        {"edge_detector", edge_detector},
        {"color_round_trip", color_round_trip},
        {"gradient_checks", gradient_checks},
        {"architecture_contracts", architecture_contracts},
        {"unbalanced_training_smoke", training_smoke},
        {"fusion", fusion_criteria},
        {"metrics", metric_criteria},
        {"end_to_end_determinism", end_to_end},
    };
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << fmt(secs, 3) << " s):";
        for (const auto& n : o.notes) std::cout << ' ' << n << ';';
        std::cout << std::endl;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
