#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "paracolor/data/color.hpp"
#include "paracolor/nn/tensor.hpp"

namespace paracolor::data {

enum class Split { train, val };
enum class Source { main, scenes };

std::string to_string(Split split);
std::string to_string(Source source);

struct ObjectProposal {
    std::string image_id;
    BBox bbox;
    double score = 1.0;
};

struct ManifestEntry {
    std::string image_id;
    std::filesystem::path path;
    Split split = Split::train;
    Source source = Source::main;
    int width = 0;
    int height = 0;
};

struct ManifestStats {
    std::size_t skipped_images = 0;      // unreadable files
    std::size_t dropped_proposals = 0;   // below the minimum size after clamping
    std::size_t unknown_references = 0;  // annotations naming an image not in the manifest
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::map<std::string, std::vector<ObjectProposal>> proposals;
    ManifestStats stats;

    const ManifestEntry& entry(const std::string& image_id) const;
    bool contains(const std::string& image_id) const;
    std::size_t count(Source source) const;
    std::size_t proposal_count() const;
};

struct ManifestOptions {
    std::optional<std::filesystem::path> proposal_file;
    std::optional<std::filesystem::path> scenes_dir;
    int min_proposal_side = 16;
};

/// Scans `root` recursively for PNG/JPEG files. Files below a directory named
/// `val` get the val split. Image ids are paths relative to the scanned root
/// without extension, prefixed with "scenes/" for the scene source.
DatasetManifest load_manifest(const std::filesystem::path& root, const ManifestOptions& options = {});

/// Intersects a box with the image and drops it when either side falls below `min_side`.
std::optional<BBox> clamp_proposal(const BBox& box, int image_width, int image_height, int min_side);

void save_manifest_cache(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest_cache(const std::filesystem::path& path);

/// Thread-safe memo of decoded source images.
class ImageCache {
public:
    const RgbImage& get(const std::filesystem::path& path);

private:
    std::mutex mutex_;
    std::unordered_map<std::string, RgbImage> images_;
};

/// Each proposal of `image_id` cropped, resized to resolution x resolution and converted.
std::vector<LabImage> extract_crops(const DatasetManifest& manifest, const std::string& image_id, int resolution,
                                    ImageCache* cache = nullptr);

enum class BatchMode { foreground, background, fusion };

std::string to_string(BatchMode mode);
BatchMode batch_mode_from_string(const std::string& name);

/// One training example: a whole image or one proposal crop of it.
struct Sample {
    std::size_t entry = 0;
    std::optional<BBox> crop;
    friend bool operator==(const Sample&, const Sample&) = default;
};

struct Batch {
    nn::Tensor lightness;  // N x 1 x R x R, normalized L
    nn::Tensor chroma;     // N x 2 x R x R, normalized ab
    nn::Tensor rgb;        // N x 3 x R x R in [0,1]
    std::vector<Sample> samples;
};

struct BatchOptions {
    std::size_t batch_size = 16;
    BatchMode mode = BatchMode::foreground;
    std::uint64_t seed = 0;
    int resolution = 256;
    bool memoize = true;  // keep converted samples in memory across epochs
};

/// A sample at model resolution in both color spaces.
struct ColorSample {
    RgbImage rgb;
    LabImage lab;
};

/// Eligible samples of a mode in manifest order (train split only).
std::vector<Sample> eligible_samples(const DatasetManifest& manifest, BatchMode mode);

/// Deterministic shuffled batches. The content of global step k depends only on
/// (seed, k), so a stream can be resumed at any step. The last batch of an
/// epoch may be short.
class BatchStream {
public:
    BatchStream(const DatasetManifest& manifest, BatchOptions options);

    std::size_t samples_per_epoch() const noexcept { return samples_.size(); }
    std::size_t batches_per_epoch() const noexcept;

    /// Sample order of one epoch.
    std::vector<Sample> epoch_order(std::uint64_t epoch) const;
    std::vector<Sample> batch_samples(std::uint64_t step) const;
    Batch batch(std::uint64_t step);
    Batch next() { return batch(cursor_++); }
    void seek(std::uint64_t step) noexcept { cursor_ = step; }

    const BatchOptions& options() const noexcept { return options_; }

private:
    const DatasetManifest* manifest_;
    BatchOptions options_;
    std::vector<Sample> samples_;
    std::uint64_t cursor_ = 0;
    std::unique_ptr<ImageCache> cache_;
    std::vector<std::optional<ColorSample>> memo_;
};

/// Crops (when the sample names a box), resizes and converts one sample.
ColorSample load_sample(const DatasetManifest& manifest, const Sample& sample, int resolution, ImageCache& cache);

/// Packs equally sized samples into batch tensors.
Batch make_batch(const std::vector<ColorSample>& items, std::vector<Sample> samples = {});

}  // namespace paracolor::data
