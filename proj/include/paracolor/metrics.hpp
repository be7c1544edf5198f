#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "paracolor/data/image.hpp"

namespace paracolor::metrics {

/// Returned by psnr for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double psnr(const data::RgbImage& a, const data::RgbImage& b, double max_value = 1.0);

/// Mean SSIM over valid Gaussian windows and channels.
double ssim(const data::RgbImage& a, const data::RgbImage& b, int window = 11, double sigma = 1.5,
            double max_value = 1.0);
double ssim(const data::GrayImage& a, const data::GrayImage& b, int window = 11, double sigma = 1.5,
            double max_value = 1.0);

/// Hasler-Suesstrunk colorfulness on the 0-255 scale.
double colorfulness(const data::RgbImage& img);
/// |mean colorfulness(generated) - mean colorfulness(reference)| over paired sets.
double delta_colorful(const std::vector<data::RgbImage>& generated, const std::vector<data::RgbImage>& reference);

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

/// Sample mean and unbiased covariance of the rows of an N x d matrix.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the trace of the root
/// taken from the eigenvalues of the symmetric Sa^(1/2) Sb Sa^(1/2).
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// Frechet distance between Gaussians fitted to two feature sets. Appends a
/// note to `warnings` when a set has no more rows than columns.
double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::vector<std::string>* warnings = nullptr);

enum class EmbedBackend { pool_stats, external };

std::string to_string(EmbedBackend backend);
EmbedBackend embed_backend_from_string(const std::string& name);

inline constexpr int kPoolStatsDim = 64;

/// Handcrafted deterministic embedding, one row per image: channel means,
/// channel spreads and gradient energy at four scales, 8-bin channel histograms,
/// opponent-color moments and a 3x3 luma layout.
Eigen::MatrixXd embed_pool_stats(const std::vector<data::RgbImage>& images);
Eigen::VectorXd embed_pool_stats(const data::RgbImage& image);

/// Feature matrix with a two-line header: the dimension, then the embedder tag.
/// ".csv" files hold comma-separated rows; anything else is raw little-endian doubles.
struct FeatureFile {
    std::string tag;
    Eigen::MatrixXd features;
};

FeatureFile read_feature_file(const std::filesystem::path& path, int expected_dim = -1);
void write_feature_file(const std::filesystem::path& path, const FeatureFile& file);

struct HumanEvalTable {
    std::vector<std::array<std::int64_t, 4>> counts;  // rows are batches, columns cases 1..4
    int subjects = 0;                                  // 0 when unknown
    std::array<double, 4> case_scores{0.0, 0.25, 0.75, 1.0};

    std::array<std::int64_t, 4> case_totals() const;
    std::int64_t total() const;
};

/// Rows of four non-negative integer counts; an optional non-numeric header row is skipped.
HumanEvalTable read_humaneval_csv(const std::filesystem::path& path);
HumanEvalTable parse_humaneval_csv(const std::string& text);

/// Score-weighted decisions divided by the total number of decisions.
double fooling_score(const HumanEvalTable& table);

struct ImageRecord {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    double colorfulness_generated = 0.0;
    double colorfulness_reference = 0.0;
};

struct MetricReport {
    std::vector<ImageRecord> images;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_colorfulness_generated = 0.0;
    double mean_colorfulness_reference = 0.0;
    double delta_colorful = 0.0;
    double fid = 0.0;
    std::string embed_backend;
    std::size_t unpaired = 0;
    std::vector<std::string> warnings;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const;
    /// One row per image followed by one aggregate row.
    std::string to_csv() const;
};

/// Per-image metrics for paired images plus aggregates; FID uses the given feature rows.
MetricReport build_report(const std::vector<std::string>& names, const std::vector<data::RgbImage>& generated,
                          const std::vector<data::RgbImage>& reference, const Eigen::MatrixXd& generated_features,
                          const Eigen::MatrixXd& reference_features);

}  // namespace paracolor::metrics
