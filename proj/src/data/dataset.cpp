#include "paracolor/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "paracolor/error.hpp"
#include "paracolor/util/random.hpp"

namespace paracolor::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split split) { return split == Split::train ? "train" : "val"; }
std::string to_string(Source source) { return source == Source::main ? "main" : "scenes"; }

namespace {

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    throw DataError("unknown split tag '" + s + "'");
}

Source source_from_string(const std::string& s) {
    if (s == "main") return Source::main;
    if (s == "scenes") return Source::scenes;
    throw DataError("unknown source tag '" + s + "'");
}

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("image directory not found: " + root.string());
    std::vector<fs::path> files;
    for (const auto& item : fs::recursive_directory_iterator(root))
        if (item.is_regular_file() && is_image_file(item.path())) files.push_back(item.path());
    std::sort(files.begin(), files.end());
    return files;
}

void scan_into(DatasetManifest& manifest, const fs::path& root, Source source) {
    for (const fs::path& file : list_images(root)) {
        const fs::path rel = fs::relative(file, root);
        std::string id = (rel.parent_path() / rel.stem()).generic_string();
        if (source == Source::scenes) id = "scenes/" + id;
        Split split = Split::train;
        for (const auto& part : rel.parent_path())
            if (part == "val") split = Split::val;
        RgbImage img;
        try {
            img = read_image(file);
        } catch (const DataError&) {
            ++manifest.stats.skipped_images;
            continue;
        }
        if (manifest.contains(id)) continue;
        manifest.entries.push_back({id, file, split, source, img.width, img.height});
    }
}

// Reads a COCO-style detection document: images[{id, file_name}] plus
// annotations[{image_id, bbox:[x,y,w,h], score?}].
void ingest_proposals(DatasetManifest& manifest, const fs::path& root, const fs::path& file, int min_side) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open proposal file " + file.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("proposal file " + file.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array() || !doc.contains("annotations") ||
        !doc["annotations"].is_array())
        throw DataError("proposal file " + file.string() + " needs 'images' and 'annotations' arrays");

    auto key_of = [](const json& id) { return id.is_string() ? id.get<std::string>() : id.dump(); };

    // COCO image id -> manifest image id
    std::map<std::string, std::string> ids;
    for (std::size_t i = 0; i < doc["images"].size(); ++i) {
        const json& rec = doc["images"][i];
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("file_name") || !rec["file_name"].is_string() ||
            !(rec["id"].is_number_integer() || rec["id"].is_string()))
            throw DataError("malformed record images[" + std::to_string(i) + "]: " + rec.dump());
        const fs::path name = rec["file_name"].get<std::string>();
        const std::string stem = (name.parent_path() / name.stem()).generic_string();
        std::string match;
        for (const auto& e : manifest.entries) {
            if (e.source != Source::main) continue;
            const fs::path rel = fs::relative(e.path, root);
            if (e.image_id == stem || rel == name || e.path.filename() == name.filename()) {
                match = e.image_id;
                break;
            }
        }
        if (!match.empty()) ids[key_of(rec["id"])] = match;
    }

    for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
        const json& rec = doc["annotations"][i];
        const std::string where = "annotations[" + std::to_string(i) + "]";
        if (!rec.is_object() || !rec.contains("image_id") || !rec.contains("bbox"))
            throw DataError("malformed record " + where + ": " + rec.dump());
        const json& bb = rec["bbox"];
        if (!bb.is_array() || bb.size() != 4 || !std::all_of(bb.begin(), bb.end(), [](const json& v) {
                return v.is_number();
            }))
            throw DataError("malformed record " + where + ": bbox must be four numbers");
        double score = 1.0;
        if (rec.contains("score")) {
            if (!rec["score"].is_number()) throw DataError("malformed record " + where + ": score must be a number");
            score = rec["score"].get<double>();
            if (score < 0.0 || score > 1.0) throw DataError("malformed record " + where + ": score outside [0,1]");
        }
        const double w = bb[2].get<double>(), h = bb[3].get<double>();
        if (!(w >= 0.0) || !(h >= 0.0)) throw DataError("malformed record " + where + ": negative box size");

        auto it = ids.find(key_of(rec["image_id"]));
        if (it == ids.end()) {
            ++manifest.stats.unknown_references;
            continue;
        }
        const ManifestEntry& entry = manifest.entry(it->second);
        const double x = bb[0].get<double>(), y = bb[1].get<double>();
        const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        const int x1 = static_cast<int>(std::ceil(x + w)), y1 = static_cast<int>(std::ceil(y + h));
        auto clamped = clamp_proposal({x0, y0, x1 - x0, y1 - y0}, entry.width, entry.height, min_side);
        if (!clamped) {
            ++manifest.stats.dropped_proposals;
            continue;
        }
        manifest.proposals[entry.image_id].push_back({entry.image_id, *clamped, score});
    }
}

}  // namespace

const ManifestEntry& DatasetManifest::entry(const std::string& image_id) const {
    for (const auto& e : entries)
        if (e.image_id == image_id) return e;
    throw DataError("image id not in manifest: " + image_id);
}

bool DatasetManifest::contains(const std::string& image_id) const {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.image_id == image_id; });
}

std::size_t DatasetManifest::count(Source source) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.source == source; }));
}

std::size_t DatasetManifest::proposal_count() const {
    std::size_t n = 0;
    for (const auto& [id, list] : proposals) n += list.size();
    return n;
}

std::optional<BBox> clamp_proposal(const BBox& box, int image_width, int image_height, int min_side) {
    const int x0 = std::max(box.x, 0), y0 = std::max(box.y, 0);
    const int x1 = std::min(box.x + box.w, image_width), y1 = std::min(box.y + box.h, image_height);
    if (x1 - x0 < min_side || y1 - y0 < min_side) return std::nullopt;
    return BBox{x0, y0, x1 - x0, y1 - y0};
}

DatasetManifest load_manifest(const fs::path& root, const ManifestOptions& options) {
    DatasetManifest manifest;
    scan_into(manifest, root, Source::main);
    if (options.scenes_dir) scan_into(manifest, *options.scenes_dir, Source::scenes);
    if (options.proposal_file) ingest_proposals(manifest, root, *options.proposal_file, options.min_proposal_side);
    return manifest;
}

void save_manifest_cache(const DatasetManifest& manifest, const fs::path& path) {
    json doc;
    doc["format"] = "paracolor-manifest";
    doc["version"] = 1;
    json entries = json::array();
    for (const auto& e : manifest.entries)
        entries.push_back({{"image_id", e.image_id},
                           {"path", e.path.generic_string()},
                           {"split", to_string(e.split)},
                           {"source", to_string(e.source)},
                           {"width", e.width},
                           {"height", e.height}});
    doc["entries"] = std::move(entries);
    json proposals = json::object();
    for (const auto& [id, list] : manifest.proposals) {
        json arr = json::array();
        for (const auto& p : list) arr.push_back({{"bbox", {p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h}}, {"score", p.score}});
        proposals[id] = std::move(arr);
    }
    doc["proposals"] = std::move(proposals);
    doc["stats"] = {{"skipped_images", manifest.stats.skipped_images},
                    {"dropped_proposals", manifest.stats.dropped_proposals},
                    {"unknown_references", manifest.stats.unknown_references}};
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest cache " + path.string());
    out << doc.dump(2) << '\n';
}

DatasetManifest load_manifest_cache(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest cache " + path.string());
    DatasetManifest manifest;
    try {
        const json doc = json::parse(in);
        if (doc.value("format", "") != "paracolor-manifest" || doc.value("version", 0) != 1)
            throw DataError("unsupported manifest cache format in " + path.string());
        for (const auto& e : doc.at("entries"))
            manifest.entries.push_back({e.at("image_id").get<std::string>(), fs::path(e.at("path").get<std::string>()),
                                        split_from_string(e.at("split")), source_from_string(e.at("source")),
                                        e.at("width").get<int>(), e.at("height").get<int>()});
        for (const auto& [id, arr] : doc.at("proposals").items()) {
            if (!manifest.contains(id)) throw DataError("manifest cache proposal for unknown image " + id);
            for (const auto& p : arr) {
                const auto& b = p.at("bbox");
                manifest.proposals[id].push_back(
                    {id, {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()},
                     p.at("score").get<double>()});
            }
        }
        const auto& st = doc.at("stats");
        manifest.stats = {st.at("skipped_images"), st.at("dropped_proposals"), st.at("unknown_references")};
    } catch (const json::exception& e) {
        throw DataError("malformed manifest cache " + path.string() + ": " + e.what());
    }
    return manifest;
}

const RgbImage& ImageCache::get(const fs::path& path) {
    std::lock_guard lock(mutex_);
    auto it = images_.find(path.string());
    if (it == images_.end()) it = images_.emplace(path.string(), read_image(path)).first;
    return it->second;
}

ColorSample load_sample(const DatasetManifest& manifest, const Sample& sample, int resolution, ImageCache& cache) {
    const ManifestEntry& entry = manifest.entries.at(sample.entry);
    const RgbImage& source = cache.get(entry.path);
    RgbImage rgb = sample.crop ? crop(source, *sample.crop) : source;
    rgb = resize_bilinear(rgb, resolution, resolution);
    for (double& v : rgb.pixels) v = std::clamp(v, 0.0, 1.0);
    LabImage lab = rgb_to_lab(rgb);
    return {std::move(rgb), std::move(lab)};
}

std::vector<LabImage> extract_crops(const DatasetManifest& manifest, const std::string& image_id, int resolution,
                                    ImageCache* cache) {
    const ManifestEntry& entry = manifest.entry(image_id);
    std::vector<LabImage> out;
    auto it = manifest.proposals.find(image_id);
    if (it == manifest.proposals.end() || it->second.empty()) return out;
    ImageCache local;
    ImageCache& images = cache ? *cache : local;
    const std::size_t index = static_cast<std::size_t>(&entry - manifest.entries.data());
    for (const auto& p : it->second) out.push_back(load_sample(manifest, {index, p.bbox}, resolution, images).lab);
    return out;
}

std::string to_string(BatchMode mode) {
    switch (mode) {
        case BatchMode::foreground: return "foreground";
        case BatchMode::background: return "background";
        case BatchMode::fusion: return "fusion";
    }
    return "foreground";
}

BatchMode batch_mode_from_string(const std::string& name) {
    if (name == "foreground") return BatchMode::foreground;
    if (name == "background") return BatchMode::background;
    if (name == "fusion") return BatchMode::fusion;
    throw UsageError("unknown batch mode '" + name + "'");
}

std::vector<Sample> eligible_samples(const DatasetManifest& manifest, BatchMode mode) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const ManifestEntry& e = manifest.entries[i];
        if (e.split != Split::train) continue;
        if (e.source == Source::scenes && mode != BatchMode::background) continue;
        out.push_back({i, std::nullopt});
        if (mode != BatchMode::foreground) continue;
        if (auto it = manifest.proposals.find(e.image_id); it != manifest.proposals.end())
            for (const auto& p : it->second) out.push_back({i, p.bbox});
    }
    return out;
}

BatchStream::BatchStream(const DatasetManifest& manifest, BatchOptions options)
    : manifest_(&manifest),
      options_(options),
      samples_(eligible_samples(manifest, options.mode)),
      cache_(std::make_unique<ImageCache>()) {
    if (samples_.empty()) throw DataError("no training samples for " + to_string(options.mode) + " mode");
    if (options.batch_size < 1) throw UsageError("batch size must be positive");
    if (options.batch_size > samples_.size())
        throw UsageError("batch size " + std::to_string(options.batch_size) + " exceeds the " +
                         std::to_string(samples_.size()) + " available samples");
    if (options.resolution < 1) throw UsageError("resolution must be positive");
    memo_.resize(samples_.size());
}

std::size_t BatchStream::batches_per_epoch() const noexcept {
    return (samples_.size() + options_.batch_size - 1) / options_.batch_size;
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, epoch));
    shuffle_in_place(order, rng);
    return order;
}

}  // namespace

std::vector<Sample> BatchStream::epoch_order(std::uint64_t epoch) const {
    std::vector<Sample> out;
    for (std::size_t i : permutation(samples_.size(), options_.seed, epoch)) out.push_back(samples_[i]);
    return out;
}

std::vector<Sample> BatchStream::batch_samples(std::uint64_t step) const {
    const std::uint64_t per_epoch = batches_per_epoch();
    const auto order = permutation(samples_.size(), options_.seed, step / per_epoch);
    const std::size_t begin = static_cast<std::size_t>(step % per_epoch) * options_.batch_size;
    const std::size_t end = std::min(begin + options_.batch_size, order.size());
    std::vector<Sample> out;
    for (std::size_t i = begin; i < end; ++i) out.push_back(samples_[order[i]]);
    return out;
}

Batch BatchStream::batch(std::uint64_t step) {
    const std::uint64_t per_epoch = batches_per_epoch();
    const auto order = permutation(samples_.size(), options_.seed, step / per_epoch);
    const std::size_t begin = static_cast<std::size_t>(step % per_epoch) * options_.batch_size;
    const std::size_t end = std::min(begin + options_.batch_size, order.size());
    std::vector<ColorSample> items;
    std::vector<Sample> samples;
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t k = order[i];
        samples.push_back(samples_[k]);
        if (options_.memoize) {
            if (!memo_[k]) memo_[k] = load_sample(*manifest_, samples_[k], options_.resolution, *cache_);
            items.push_back(*memo_[k]);
        } else {
            items.push_back(load_sample(*manifest_, samples_[k], options_.resolution, *cache_));
        }
    }
    return make_batch(items, std::move(samples));
}

Batch make_batch(const std::vector<ColorSample>& items, std::vector<Sample> samples) {
    if (items.empty()) throw UsageError("cannot build an empty batch");
    const int n = static_cast<int>(items.size());
    const int h = items[0].lab.height, w = items[0].lab.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Batch batch{nn::Tensor(nn::Shape{n, 1, h, w}), nn::Tensor(nn::Shape{n, 2, h, w}), nn::Tensor(nn::Shape{n, 3, h, w}),
                std::move(samples)};
    for (int i = 0; i < n; ++i) {
        const ColorSample& s = items[i];
        if (s.lab.height != h || s.lab.width != w || s.rgb.height != h || s.rgb.width != w)
            throw UsageError("batch items must share one size");
        std::copy(s.lab.l.begin(), s.lab.l.end(), batch.lightness.data() + i * plane);
        std::copy(s.lab.ab.begin(), s.lab.ab.end(), batch.chroma.data() + i * 2 * plane);
        std::copy(s.rgb.pixels.begin(), s.rgb.pixels.end(), batch.rgb.data() + i * 3 * plane);
    }
    return batch;
}

}  // namespace paracolor::data
