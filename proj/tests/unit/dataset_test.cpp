#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include <json.hpp>

#include "paracolor/data/dataset.hpp"
#include "paracolor/error.hpp"
#include "support/fixtures.hpp"

using namespace paracolor;
using nlohmann::json;

namespace {

void write_proposals(const std::filesystem::path& path, const json& annotations) {
    json doc{{"images", json::array()}, {"annotations", annotations}};
    for (int i = 0; i < 4; ++i) doc["images"].push_back({{"id", i}, {"file_name", fixtures::fixture_name(i)}});
    std::ofstream(path) << doc.dump();
}

}  // namespace

TEST(Manifest, ScansImagesAndSplits) {
    fixtures::TempDir dir("manifest");
    fixtures::write_fixture(dir / "images", 3, 24, 1);
    fixtures::write_fixture(dir / "images" / "val", 2, 24, 2);
    const auto m = data::load_manifest(dir / "images");
    ASSERT_EQ(m.entries.size(), 5u);
    int val = 0;
    for (const auto& e : m.entries) val += e.split == data::Split::val;
    EXPECT_EQ(val, 2);
    EXPECT_TRUE(m.contains(fixtures::fixture_id(0)));
}

TEST(Manifest, ProposalsAreClampedAndFiltered) {
    fixtures::TempDir dir("manifest");
    fixtures::write_fixture(dir / "images", 4, 32, 1);
    write_proposals(dir / "p.json", json::array({
                                        {{"image_id", 0}, {"bbox", {-4, -4, 20, 20}}},
                                        {{"image_id", 1}, {"bbox", {0, 0, 8, 8}}},
                                        {{"image_id", 99}, {"bbox", {0, 0, 20, 20}}},
                                    }));
    data::ManifestOptions opts;
    opts.proposal_file = dir / "p.json";
    const auto m = data::load_manifest(dir / "images", opts);
    EXPECT_EQ(m.proposal_count(), 1u);
    EXPECT_EQ(m.stats.dropped_proposals, 1u);
    EXPECT_EQ(m.stats.unknown_references, 1u);
    EXPECT_EQ(m.proposals.at(fixtures::fixture_id(0)).front().bbox, (data::BBox{0, 0, 16, 16}));
}

TEST(Manifest, MalformedProposalFileIsDataError) {
    fixtures::TempDir dir("manifest");
    fixtures::write_fixture(dir / "images", 2, 32, 1);
    std::ofstream(dir / "p.json") << "{\"images\": []}";
    data::ManifestOptions opts;
    opts.proposal_file = dir / "p.json";
    EXPECT_THROW(data::load_manifest(dir / "images", opts), DataError);
}

TEST(Manifest, ClampProposal) {
    EXPECT_EQ(data::clamp_proposal({10, 10, 100, 100}, 50, 40, 16), (data::BBox{10, 10, 40, 30}));
    EXPECT_FALSE(data::clamp_proposal({45, 0, 10, 10}, 50, 40, 16).has_value());
}

TEST(Manifest, CacheRoundTrip) {
    fixtures::TempDir dir("manifest");
    fixtures::write_fixture(dir / "images", 4, 32, 1);
    write_proposals(dir / "p.json", json::array({{{"image_id", 2}, {"bbox", {2, 2, 20, 18}}, {"score", 0.5}}}));
    data::ManifestOptions opts;
    opts.proposal_file = dir / "p.json";
    const auto m = data::load_manifest(dir / "images", opts);
    data::save_manifest_cache(m, dir / "m.json");
    const auto back = data::load_manifest_cache(dir / "m.json");
    ASSERT_EQ(back.entries.size(), m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) EXPECT_EQ(back.entries[i].image_id, m.entries[i].image_id);
    EXPECT_EQ(back.proposal_count(), 1u);
    EXPECT_EQ(back.proposals.at(fixtures::fixture_id(2)).front().score, 0.5);
}

TEST(Manifest, ScenesAreSeparateSource) {
    fixtures::TempDir dir("manifest");
    fixtures::write_fixture(dir / "images", 2, 32, 1);
    fixtures::write_fixture(dir / "scenes", 3, 32, 2);
    data::ManifestOptions opts;
    opts.scenes_dir = dir / "scenes";
    const auto m = data::load_manifest(dir / "images", opts);
    EXPECT_EQ(m.count(data::Source::main), 2u);
    EXPECT_EQ(m.count(data::Source::scenes), 3u);
    EXPECT_EQ(data::eligible_samples(m, data::BatchMode::background).size(), 5u);
    EXPECT_EQ(data::eligible_samples(m, data::BatchMode::fusion).size(), 2u);
}

TEST(BatchStream, DeterministicAndCoversEpoch) {
    fixtures::TempDir dir("stream");
    fixtures::write_fixture(dir / "images", 5, 32, 1);
    const auto m = data::load_manifest(dir / "images");
    data::BatchOptions opts;
    opts.batch_size = 2;
    opts.mode = data::BatchMode::fusion;
    opts.resolution = 16;
    opts.seed = 9;
    data::BatchStream a(m, opts), b(m, opts);
    EXPECT_EQ(a.batches_per_epoch(), 3u);
    std::multiset<std::size_t> seen;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto x = a.batch(s), y = b.batch(s);
        EXPECT_EQ(x.samples, y.samples);
        EXPECT_EQ(x.lightness.storage(), y.lightness.storage());
        EXPECT_EQ(x.lightness.shape()[2], 16);
        for (const auto& smp : x.samples) seen.insert(smp.entry);
    }
    for (std::size_t e = 0; e < 5; ++e) EXPECT_GE(seen.count(e), 1u);
}

TEST(BatchStream, NoTrainSamplesIsDataError) {
    fixtures::TempDir dir("stream");
    fixtures::write_fixture(dir / "images" / "val", 2, 32, 1);
    const auto m = data::load_manifest(dir / "images");
    data::BatchOptions opts;
    opts.batch_size = 1;
    EXPECT_THROW(data::BatchStream(m, opts), DataError);
}

TEST(BatchStream, BatchLargerThanDatasetRejected) {
    fixtures::TempDir dir("stream");
    fixtures::write_fixture(dir / "images", 2, 32, 1);
    const auto m = data::load_manifest(dir / "images");
    data::BatchOptions opts;
    opts.batch_size = 3;
    EXPECT_THROW(data::BatchStream(m, opts), UsageError);
}
