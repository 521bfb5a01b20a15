#include <doctest.h>

#include <filesystem>
#include <set>

#include "medart/dataset.hpp"
#include "medart/image_io.hpp"
#include "support/common.hpp"

using namespace medart;
using medart::testing::TempDir;
namespace fs = std::filesystem;

namespace {

void write_solid(const std::string& path, int size, uint8_t r, uint8_t g, uint8_t b) {
    Image img{size, size, {}};
    for (int i = 0; i < size * size; ++i) img.rgb.insert(img.rgb.end(), {r, g, b});
    write_png(path, img);
}

void make_category(const TempDir& d, const std::string& name, int n) {
    fs::create_directories(d.path() / name);
    for (int i = 0; i < n; ++i)
        write_solid((d.path() / name / ("img" + std::to_string(i) + ".png")).string(), 4, static_cast<uint8_t>(10 * i),
                    20, 30);
}

}  // namespace

TEST_CASE("split sizes follow the ceiling rule") {
    TempDir d("split");
    make_category(d, "ten", 10);
    make_category(d, "five", 5);
    const DatasetManifest m = scan_and_split(d.str(), 0.8, 1);
    std::map<std::string, std::pair<int, int>> counts;
    for (const auto& r : m.records) (r.split == Split::Train ? counts[r.category].first : counts[r.category].second)++;
    CHECK(counts["ten"] == std::pair{8, 2});
    CHECK(counts["five"] == std::pair{4, 1});
    CHECK(m.categories() == std::vector<std::string>{"five", "ten"});
    CHECK(m.indices(Split::Train).size() == 12);
    CHECK(m.indices(Split::Test).size() == 3);
}

TEST_CASE("split is deterministic, disjoint and stable under re-serialization") {
    TempDir d("split2");
    make_category(d, "a", 9);
    make_category(d, "b", 7);
    const DatasetManifest m1 = scan_and_split(d.str(), 0.7, 5), m2 = scan_and_split(d.str(), 0.7, 5);
    CHECK(m1.to_jsonl() == m2.to_jsonl());
    const DatasetManifest m3 = scan_and_split(d.str(), 0.7, 6);
    CHECK(m3.to_jsonl() != m1.to_jsonl());

    std::set<std::string> train, test;
    for (const auto& r : m1.records) (r.split == Split::Train ? train : test).insert(r.image_path);
    for (const auto& p : test) CHECK(train.count(p) == 0);
    CHECK(train.size() + test.size() == 16);

    m1.write(d.str("m.jsonl"));
    const DatasetManifest back = DatasetManifest::read(d.str("m.jsonl"));
    CHECK(back.to_jsonl() == m1.to_jsonl());
    back.write(d.str("m2.jsonl"));
    CHECK(medart::testing::read_text(d.str("m2.jsonl")) == medart::testing::read_text(d.str("m.jsonl")));
}

TEST_CASE("scan errors") {
    TempDir d("split3");
    CHECK_THROWS(scan_and_split(d.str("missing"), 0.8, 1));
    make_category(d, "ok", 2);
    fs::create_directories(d.path() / "empty");
    CHECK_THROWS_WITH(scan_and_split(d.str(), 0.8, 1), doctest::Contains("empty"));
    fs::remove(d.path() / "empty");
    medart::testing::write_text(d.str("ok/bad.png"), "not a png");
    CHECK_THROWS(scan_and_split(d.str(), 0.8, 1));
    fs::remove(d.path() / "ok" / "bad.png");
    CHECK_THROWS(scan_and_split(d.str(), 1.5, 1));
}

TEST_CASE("manifest json lines") {
    DatasetManifest m;
    m.records.push_back({"x/a.png", "x", Split::Train, std::string("a caption")});
    m.records.push_back({"x/b.png", "x", Split::Test, std::nullopt});
    const std::string text = m.to_jsonl();
    CHECK(text ==
          "{\"image_path\":\"x/a.png\",\"category\":\"x\",\"split\":\"train\",\"caption\":\"a caption\"}\n"
          "{\"image_path\":\"x/b.png\",\"category\":\"x\",\"split\":\"test\",\"caption\":null}\n");
    CHECK(DatasetManifest::from_jsonl(text).to_jsonl() == text);
    CHECK_THROWS(DatasetManifest::from_jsonl("{\"image_path\":1}\n"));
    CHECK_THROWS(parse_split("val"));

    CHECK_NOTHROW(m.require_train_captions());
    m.records[0].caption.reset();
    CHECK_THROWS(m.require_train_captions());
    CHECK(join_captions(m, {{"x/a.png", "new"}, {"y.png", "other"}}) == 1);
    CHECK(*m.records[0].caption == "new");
}

TEST_CASE("fixture images load with the expected values") {
    using medart::testing::data_path;
    const auto expected = medart::testing::read_json(data_path("expected.json"));
    DatasetManifest m;
    m.records.push_back({data_path("white_1x1.png"), "w", Split::Train, std::string("white")});
    m.records.push_back({data_path("gray_4x4.png"), "g", Split::Train, std::string("gray")});
    m.records.push_back({data_path("pair/a.png"), "p", Split::Train, std::string("a")});
    m.records.push_back({data_path("pair/b.png"), "p", Split::Train, std::string("b")});

    const std::vector<size_t> white{0};
    const TrainBatch w = load_batch(m, white, {1});
    CHECK(w.images.shape() == Shape{1, 3, 1, 1});
    for (double v : w.images.data()) CHECK(v == 1.0);
    CHECK(w.captions == std::vector<std::string>{"white"});

    const std::vector<size_t> gray{1};
    const TrainBatch g = load_batch(m, gray, {4});
    const auto want = expected["gray_4x4"].get<std::vector<double>>();
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i) CHECK(g.images.data()[c * 16 + i] == doctest::Approx(want[i]).epsilon(1e-15));

    const std::vector<size_t> pair{2, 3};
    const TrainBatch p = load_batch(m, pair, {6});
    double sum = 0, weighted = 0;
    for (size_t i = 0; i < p.images.data().size(); ++i) {
        sum += p.images.data()[i];
        weighted += p.images.data()[i] * static_cast<double>(i % 97 + 1);
    }
    CHECK(sum == doctest::Approx(expected["pair_sum"].get<double>()).epsilon(1e-12));
    CHECK(weighted == doctest::Approx(expected["pair_weighted"].get<double>()).epsilon(1e-12));

    // resizing keeps values in range and constant images constant
    const TrainBatch up = load_batch(m, white, {5});
    for (double v : up.images.data()) CHECK(v == 1.0);
}

TEST_CASE("bad images and missing captions") {
    TempDir d("load");
    write_solid(d.str("ok.png"), 4, 1, 2, 3);
    medart::testing::write_text(d.str("bad.png"), "garbage");
    DatasetManifest m;
    m.records.push_back({d.str("ok.png"), "c", Split::Train, std::string("ok")});
    m.records.push_back({d.str("bad.png"), "c", Split::Train, std::string("bad")});
    m.records.push_back({d.str("ok.png"), "c", Split::Train, std::nullopt});
    const std::vector<size_t> both{0, 1};
    CHECK_THROWS(load_batch(m, both, {4}));
    LoadOptions skip{4, true, true};
    const TrainBatch b = load_batch(m, both, skip);
    CHECK(b.images.dim(0) == 1);
    const std::vector<size_t> nocap{2};
    CHECK_THROWS(load_batch(m, nocap, {4}));
    const std::vector<size_t> oob{7};
    CHECK_THROWS(load_batch(m, oob, {4}));
}

TEST_CASE("epoch batches and prefetching") {
    TempDir d("prefetch");
    make_category(d, "c", 7);
    DatasetManifest m = scan_and_split(d.str(), 1.0, 3);
    for (auto& r : m.records) r.caption = "cap " + r.image_path;
    Rng r1(4), r2(4);
    const auto order = epoch_batches(m, 3, r1);
    CHECK(order == epoch_batches(m, 3, r2));
    REQUIRE(order.size() == 3);
    CHECK(order[2].size() == 1);
    std::set<size_t> seen;
    for (const auto& b : order) seen.insert(b.begin(), b.end());
    CHECK(seen.size() == 7);

    BatchPrefetcher pf(m, order, {4}, 2);
    for (const auto& idx : order) {
        auto got = pf.next();
        REQUIRE(got.has_value());
        const TrainBatch direct = load_batch(m, idx, {4});
        CHECK(got->images.to_vector() == direct.images.to_vector());
        CHECK(got->captions == direct.captions);
    }
    CHECK_FALSE(pf.next().has_value());

    m.records[0].caption.reset();
    BatchPrefetcher failing(m, {{0}}, {4}, 2);
    CHECK_THROWS(failing.next());
}
