#include "paracolor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "paracolor/error.hpp"

namespace paracolor::metrics {

using nlohmann::json;

namespace {

void check_same_size(const data::RgbImage& a, const data::RgbImage& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.pixels.size() != b.pixels.size())
        throw UsageError(std::string(what) + ": image sizes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                         ")");
}

std::vector<double> gaussian_window(int window, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(window) * window);
    const int r = window / 2;
    double total = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double g = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            k[(y + r) * window + (x + r)] = g;
            total += g;
        }
    for (double& v : k) v /= total;
    return k;
}

double ssim_plane(const double* a, const double* b, int h, int w, const std::vector<double>& k, int window, double c1,
                  double c2) {
    const int oh = h - window + 1, ow = w - window + 1;
    double acc = 0.0;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx) {
                    const double g = k[dy * window + dx];
                    const double va = a[(y + dy) * w + x + dx], vb = b[(y + dy) * w + x + dx];
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
    return acc / (static_cast<double>(oh) * ow);
}

}  // namespace

double psnr(const data::RgbImage& a, const data::RgbImage& b, double max_value) {
    check_same_size(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) se += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    const double mse = se / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(max_value * max_value / mse);
}

double ssim(const data::GrayImage& a, const data::GrayImage& b, int window, double sigma, double max_value) {
    if (a.height != b.height || a.width != b.width) throw UsageError("ssim: image sizes differ");
    if (window < 1 || window % 2 == 0) throw UsageError("ssim window must be a positive odd size");
    if (a.height < window || a.width < window)
        throw UsageError("ssim: image smaller than the " + std::to_string(window) + "-pixel window");
    const auto k = gaussian_window(window, sigma);
    return ssim_plane(a.pixels.data(), b.pixels.data(), a.height, a.width, k, window, std::pow(0.01 * max_value, 2),
                      std::pow(0.03 * max_value, 2));
}

double ssim(const data::RgbImage& a, const data::RgbImage& b, int window, double sigma, double max_value) {
    check_same_size(a, b, "ssim");
    if (window < 1 || window % 2 == 0) throw UsageError("ssim window must be a positive odd size");
    if (a.height < window || a.width < window)
        throw UsageError("ssim: image smaller than the " + std::to_string(window) + "-pixel window");
    const auto k = gaussian_window(window, sigma);
    const double c1 = std::pow(0.01 * max_value, 2), c2 = std::pow(0.03 * max_value, 2);
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
        total += ssim_plane(a.pixels.data() + c * a.plane(), b.pixels.data() + c * b.plane(), a.height, a.width, k,
                            window, c1, c2);
    return total / 3.0;
}

double colorfulness(const data::RgbImage& img) {
    const std::size_t n = img.plane();
    if (n == 0 || img.pixels.size() != 3 * n) throw UsageError("colorfulness: malformed image");
    double s_rg = 0, s_yb = 0, q_rg = 0, q_yb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = img.pixels[i], g = img.pixels[n + i], b = img.pixels[2 * n + i];
        const double rg = 255.0 * (r - g), yb = 255.0 * (0.5 * (r + g) - b);
        s_rg += rg;
        s_yb += yb;
        q_rg += rg * rg;
        q_yb += yb * yb;
    }
    const double m_rg = s_rg / n, m_yb = s_yb / n;
    const double v_rg = std::max(0.0, q_rg / n - m_rg * m_rg), v_yb = std::max(0.0, q_yb / n - m_yb * m_yb);
    return std::sqrt(v_rg + v_yb) + 0.3 * std::sqrt(m_rg * m_rg + m_yb * m_yb);
}

double delta_colorful(const std::vector<data::RgbImage>& generated, const std::vector<data::RgbImage>& reference) {
    if (generated.size() != reference.size()) throw UsageError("delta_colorful: sets differ in size");
    if (generated.empty()) throw UsageError("delta_colorful: empty sets");
    double g = 0.0, r = 0.0;
    for (const auto& img : generated) g += colorfulness(img);
    for (const auto& img : reference) r += colorfulness(img);
    return std::abs(g - r) / static_cast<double>(generated.size());
}

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) throw UsageError("need at least two feature rows to estimate a covariance");
    if (!features.allFinite()) throw NumericalError("feature matrix contains non-finite values");
    GaussianStats s;
    s.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
    s.covariance = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
    return s;
}

namespace {

Eigen::VectorXd clamped_eigenvalues(const Eigen::MatrixXd& sym, Eigen::MatrixXd* vectors) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    Eigen::VectorXd values = solver.eigenvalues();
    const double top = std::max(0.0, values.maxCoeff());
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values[i] >= 0.0) continue;
        if (values[i] > -1e-6 * top || top == 0.0) values[i] = 0.0;
        else throw NumericalError("covariance product has a significantly negative eigenvalue");
    }
    if (vectors) *vectors = solver.eigenvectors();
    return values;
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size() || a.covariance.rows() != a.mean.size() ||
        b.covariance.rows() != b.mean.size())
        throw UsageError("frechet_distance: dimension mismatch");
    const Eigen::MatrixXd sa = 0.5 * (a.covariance + a.covariance.transpose());
    const Eigen::MatrixXd sb = 0.5 * (b.covariance + b.covariance.transpose());
    Eigen::MatrixXd vectors;
    const Eigen::VectorXd values = clamped_eigenvalues(sa, &vectors);
    const Eigen::MatrixXd root_a = vectors * values.cwiseSqrt().asDiagonal() * vectors.transpose();
    Eigen::MatrixXd m = root_a * sb * root_a;
    m = 0.5 * (m + m.transpose());
    const double trace_root = clamped_eigenvalues(m, nullptr).cwiseSqrt().sum();
    const double d = (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * trace_root;
    return std::max(0.0, d);
}

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::vector<std::string>* warnings) {
    if (a.cols() != b.cols())
        throw UsageError("fid: feature dimensions differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
    if (warnings) {
        for (const auto* m : {&a, &b})
            if (m->rows() <= m->cols())
                warnings->push_back("fid: " + std::to_string(m->rows()) + " samples for " +
                                    std::to_string(m->cols()) + " dimensions; covariance is rank deficient");
    }
    return frechet_distance(gaussian_stats(a), gaussian_stats(b));
}

std::string to_string(EmbedBackend backend) { return backend == EmbedBackend::pool_stats ? "pool_stats" : "external"; }

EmbedBackend embed_backend_from_string(const std::string& name) {
    if (name == "pool_stats") return EmbedBackend::pool_stats;
    if (name == "external") return EmbedBackend::external;
    throw UsageError("unknown embed backend '" + name + "' (expected pool_stats or external)");
}

Eigen::VectorXd embed_pool_stats(const data::RgbImage& image) {
    constexpr int side = 64;
    const data::RgbImage img = data::resize_bilinear(image, side, side);
    Eigen::VectorXd f(kPoolStatsDim);
    int k = 0;
    const std::size_t n = img.plane();

    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += img.pixels[c * n + i];
        f[k++] = s / n;
    }
    // Spread and gradient energy of 2^s box-pooled planes.
    for (int scale = 0; scale < 4; ++scale) {
        const int step = 1 << scale, ps = side / step;
        for (int c = 0; c < 3; ++c) {
            std::vector<double> pooled(static_cast<std::size_t>(ps) * ps, 0.0);
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) pooled[(y / step) * ps + x / step] += img.at(c, y, x);
            for (double& v : pooled) v /= step * step;
            double m = 0.0, q = 0.0, g = 0.0;
            for (double v : pooled) {
                m += v;
                q += v * v;
            }
            m /= pooled.size();
            for (int y = 0; y < ps; ++y)
                for (int x = 0; x < ps; ++x) {
                    if (x + 1 < ps) g += std::abs(pooled[y * ps + x + 1] - pooled[y * ps + x]);
                    if (y + 1 < ps) g += std::abs(pooled[(y + 1) * ps + x] - pooled[y * ps + x]);
                }
            f[k++] = std::sqrt(std::max(0.0, q / pooled.size() - m * m));
            f[k++] = g / (2.0 * ps * (ps - 1));
        }
    }
    for (int c = 0; c < 3; ++c) {
        std::array<double, 8> hist{};
        for (std::size_t i = 0; i < n; ++i) hist[std::min(7, static_cast<int>(img.pixels[c * n + i] * 8.0))] += 1.0;
        for (double h : hist) f[k++] = h / n;
    }
    double s_rg = 0, s_yb = 0, q_rg = 0, q_yb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = img.pixels[i], g = img.pixels[n + i], b = img.pixels[2 * n + i];
        const double rg = r - g, yb = 0.5 * (r + g) - b;
        s_rg += rg;
        s_yb += yb;
        q_rg += rg * rg;
        q_yb += yb * yb;
    }
    f[k++] = s_rg / n;
    f[k++] = std::sqrt(std::max(0.0, q_rg / n - (s_rg / n) * (s_rg / n)));
    f[k++] = s_yb / n;
    f[k++] = std::sqrt(std::max(0.0, q_yb / n - (s_yb / n) * (s_yb / n)));
    const data::GrayImage luma = data::to_gray(img);
    for (int gy = 0; gy < 3; ++gy)
        for (int gx = 0; gx < 3; ++gx) {
            const int y0 = gy * side / 3, y1 = (gy + 1) * side / 3, x0 = gx * side / 3, x1 = (gx + 1) * side / 3;
            double s = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) s += luma.at(y, x);
            f[k++] = s / ((y1 - y0) * (x1 - x0));
        }
    return f;
}

Eigen::MatrixXd embed_pool_stats(const std::vector<data::RgbImage>& images) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), kPoolStatsDim);
    for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed_pool_stats(images[i]);
    return out;
}

FeatureFile read_feature_file(const std::filesystem::path& path, int expected_dim) {
    const bool csv = path.extension() == ".csv";
    std::ifstream in(path, csv ? std::ios::in : std::ios::binary);
    if (!in) throw DataError("cannot open feature file " + path.string());
    std::string dim_line, tag;
    std::getline(in, dim_line);
    std::getline(in, tag);
    int dim = 0;
    try {
        std::size_t used = 0;
        dim = std::stoi(dim_line, &used);
        if (used != dim_line.size() || dim < 1) throw std::invalid_argument("dim");
    } catch (const std::exception&) {
        throw DataError(path.string() + ": first line must be the feature dimension, got '" + dim_line + "'");
    }
    if (expected_dim > 0 && dim != expected_dim)
        throw DataError(path.string() + ": feature dimension " + std::to_string(dim) + " does not match " +
                        std::to_string(expected_dim));
    std::vector<double> values;
    if (csv) {
        std::string line;
        int row = 0;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty() || line == "\r") continue;
            std::stringstream ss(line);
            std::string cell;
            int cols = 0;
            while (std::getline(ss, cell, ',')) {
                try {
                    values.push_back(std::stod(cell));
                } catch (const std::exception&) {
                    throw DataError(path.string() + ": row " + std::to_string(row) + " has a non-numeric value");
                }
                ++cols;
            }
            if (cols != dim)
                throw DataError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cols) +
                                " columns, dimension is " + std::to_string(dim));
        }
    } else {
        double v;
        while (in.read(reinterpret_cast<char*>(&v), sizeof v)) values.push_back(v);
        if (in.gcount() != 0) throw DataError(path.string() + ": trailing partial value");
        if (values.size() % dim != 0)
            throw DataError(path.string() + ": value count is not a multiple of dimension " + std::to_string(dim));
    }
    FeatureFile f;
    f.tag = tag;
    const Eigen::Index rows = static_cast<Eigen::Index>(values.size() / dim);
    f.features = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), rows, dim);
    if (!f.features.allFinite()) throw DataError(path.string() + ": non-finite feature values");
    return f;
}

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file) {
    const bool csv = path.extension() == ".csv";
    std::ofstream out(path, csv ? std::ios::out : std::ios::binary);
    if (!out) throw DataError("cannot write feature file " + path.string());
    out << file.features.cols() << '\n' << file.tag << '\n';
    for (Eigen::Index r = 0; r < file.features.rows(); ++r) {
        for (Eigen::Index c = 0; c < file.features.cols(); ++c) {
            const double v = file.features(r, c);
            if (csv) out << (c ? "," : "") << std::setprecision(17) << v;
            else out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
        if (csv) out << '\n';
    }
}

std::array<std::int64_t, 4> HumanEvalTable::case_totals() const {
    std::array<std::int64_t, 4> t{};
    for (const auto& row : counts)
        for (int i = 0; i < 4; ++i) t[i] += row[i];
    return t;
}

std::int64_t HumanEvalTable::total() const {
    const auto t = case_totals();
    return t[0] + t[1] + t[2] + t[3];
}

HumanEvalTable parse_humaneval_csv(const std::string& text) {
    HumanEvalTable table;
    std::stringstream in(text);
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        const bool numeric = !cells.empty() && std::all_of(cells.begin(), cells.end(), [](const std::string& c) {
            const auto b = c.find_first_not_of(" \t"), e = c.find_last_not_of(" \t");
            return b != std::string::npos &&
                   std::all_of(c.begin() + b, c.begin() + e + 1, [](char ch) { return ch >= '0' && ch <= '9'; });
        });
        if (!numeric) {
            if (table.counts.empty() && row == 1) continue;  // header
            throw DataError("human evaluation CSV row " + std::to_string(row) + " is not four non-negative integers");
        }
        if (cells.size() != 4)
            throw DataError("human evaluation CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " columns, expected 4");
        std::array<std::int64_t, 4> r{};
        for (int i = 0; i < 4; ++i) r[i] = std::stoll(cells[i]);
        table.counts.push_back(r);
    }
    if (table.counts.empty()) throw DataError("human evaluation CSV has no rows");
    return table;
}

HumanEvalTable read_humaneval_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_humaneval_csv(ss.str());
}

double fooling_score(const HumanEvalTable& table) {
    std::int64_t total = 0;
    double weighted = 0.0;
    for (const auto& row : table.counts)
        for (int i = 0; i < 4; ++i) {
            if (row[i] < 0) throw DataError("human evaluation counts must be non-negative");
            total += row[i];
            weighted += static_cast<double>(row[i]) * table.case_scores[i];
        }
    if (total == 0) throw DataError("human evaluation table has no decisions");
    return weighted / static_cast<double>(total);
}

namespace {

json number_or_inf(double v) { return std::isinf(v) ? json(v > 0 ? "inf" : "-inf") : json(v); }

std::string csv_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream ss;
    ss << std::setprecision(10) << v;
    return ss.str();
}

}  // namespace

json MetricReport::to_json() const {
    json per_image = json::array();
    for (const auto& r : images)
        per_image.push_back({{"name", r.name},
                             {"psnr", number_or_inf(r.psnr)},
                             {"ssim", r.ssim},
                             {"colorfulness_gen", r.colorfulness_generated},
                             {"colorfulness_ref", r.colorfulness_reference}});
    return json{{"images", per_image},
                {"aggregate",
                 {{"psnr", number_or_inf(mean_psnr)},
                  {"ssim", mean_ssim},
                  {"colorfulness_gen", mean_colorfulness_generated},
                  {"colorfulness_ref", mean_colorfulness_reference},
                  {"delta_colorful", delta_colorful},
                  {"fid", fid},
                  {"lpips", nullptr}}},
                {"counts", {{"pairs", images.size()}, {"unpaired", unpaired}}},
                {"embed_backend", embed_backend},
                {"warnings", warnings},
                {"config", config}};
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out << "name,psnr,ssim,colorfulness_gen,colorfulness_ref,delta_colorful,fid\n";
    for (const auto& r : images)
        out << r.name << ',' << csv_number(r.psnr) << ',' << csv_number(r.ssim) << ','
            << csv_number(r.colorfulness_generated) << ',' << csv_number(r.colorfulness_reference) << ",,\n";
    out << "aggregate," << csv_number(mean_psnr) << ',' << csv_number(mean_ssim) << ','
        << csv_number(mean_colorfulness_generated) << ',' << csv_number(mean_colorfulness_reference) << ','
        << csv_number(delta_colorful) << ',' << csv_number(fid) << '\n';
    return out.str();
}

MetricReport build_report(const std::vector<std::string>& names, const std::vector<data::RgbImage>& generated,
                          const std::vector<data::RgbImage>& reference, const Eigen::MatrixXd& generated_features,
                          const Eigen::MatrixXd& reference_features) {
    if (names.size() != generated.size() || generated.size() != reference.size())
        throw UsageError("build_report: list sizes differ");
    if (generated.empty()) throw DataError("no image pairs to evaluate");
    MetricReport report;
    double sum_psnr = 0.0, sum_ssim = 0.0, sum_cg = 0.0, sum_cr = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        ImageRecord r;
        r.name = names[i];
        r.psnr = psnr(generated[i], reference[i]);
        int window = std::min({11, generated[i].height, generated[i].width});
        if (window % 2 == 0) --window;
        r.ssim = ssim(generated[i], reference[i], window);
        r.colorfulness_generated = colorfulness(generated[i]);
        r.colorfulness_reference = colorfulness(reference[i]);
        sum_psnr += r.psnr;
        sum_ssim += r.ssim;
        sum_cg += r.colorfulness_generated;
        sum_cr += r.colorfulness_reference;
        report.images.push_back(r);
    }
    const double n = static_cast<double>(generated.size());
    report.mean_psnr = sum_psnr / n;
    report.mean_ssim = sum_ssim / n;
    report.mean_colorfulness_generated = sum_cg / n;
    report.mean_colorfulness_reference = sum_cr / n;
    report.delta_colorful = std::abs(sum_cg - sum_cr) / n;
    report.fid = fid(generated_features, reference_features, &report.warnings);
    return report;
}

}  // namespace paracolor::metrics
