#include <doctest.h>

#include <cmath>

#include "medart/dataset.hpp"
#include "medart/extractors.hpp"
#include "support/common.hpp"

using namespace medart;
using medart::testing::data_path;

namespace {
Tensor fixture_real() {
    DatasetManifest m;
    std::vector<size_t> idx;
    for (int i = 0; i < 10; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "eval/real/%02d.png", i);
        m.records.push_back({data_path(name), "r", Split::Train, std::string("x")});
        idx.push_back(static_cast<size_t>(i));
    }
    return load_batch(m, idx, {32}).images;
}
}  // namespace

TEST_CASE("channel statistics extractor") {
    ChannelStatsExtractor e;
    const Eigen::MatrixXd f = e.features(Tensor::full({2, 3, 4, 4}, 0.3));
    REQUIRE(f.rows() == 2);
    REQUIRE(f.cols() == 6);
    for (int j = 0; j < 3; ++j) CHECK(f(0, j) == doctest::Approx(0.3).epsilon(1e-15));
    for (int j = 3; j < 6; ++j) CHECK(f(1, j) == 0.0);
    const Tensor x = fixture_real();
    CHECK(e.features(x) == e.features(x));
    CHECK(e.extract(x).extractor_id == "channel-stats-v1");
}

TEST_CASE("bundled CNN matches the stored fixture checksum") {
    const auto expected = medart::testing::read_json(data_path("expected.json"));
    const CnnExtractor e = CnnExtractor::bundled();
    CHECK(e.id() == expected["cnn_id"].get<std::string>());
    CHECK(e.dim() == 32);
    const Tensor x = fixture_real();
    const Eigen::MatrixXd f = e.features(x);
    double sum = 0, weighted = 0;
    int64_t k = 0;
    for (int64_t i = 0; i < f.rows(); ++i)
        for (int64_t j = 0; j < f.cols(); ++j, ++k) {
            sum += f(i, j);
            weighted += f(i, j) * static_cast<double>(k % 97 + 1);
        }
    CHECK(sum == doctest::Approx(expected["cnn_sum"].get<double>()).epsilon(1e-10));
    CHECK(weighted == doctest::Approx(expected["cnn_weighted"].get<double>()).epsilon(1e-10));
    CHECK(e.features(x) == f);
}

TEST_CASE("CNN weights load from an archive and resize inputs") {
    medart::testing::TempDir dir("cnn");
    const CnnExtractor loaded = CnnExtractor::load(data_path("tiny_cnn_bundled.ckpt"));
    const Tensor x = fixture_real();
    CHECK(loaded.features(x) == CnnExtractor::bundled().features(x));
    loaded.save(dir.str("c.ckpt"));
    CHECK(CnnExtractor::load(dir.str("c.ckpt")).features(x) == loaded.features(x));
    CHECK_THROWS(CnnExtractor::load(dir.str("missing.ckpt")));

    // other resolutions are resized to the network input
    const Eigen::MatrixXd small = loaded.features(Tensor::full({1, 3, 8, 8}, 0.5));
    const Eigen::MatrixXd big = loaded.features(Tensor::full({1, 3, 32, 32}, 0.5));
    CHECK(small.isApprox(big, 1e-12));

    const auto same = resize_chw(x.data().data(), 3, 32, 32, 32, 32);
    for (size_t i = 0; i < same.size(); ++i) REQUIRE(same[i] == x.data()[i]);
}

TEST_CASE("extractor factory") {
    CHECK(make_extractor("channel-stats")->id() == "channel-stats-v1");
    CHECK(make_extractor("tiny-cnn")->id() == "tiny-cnn-v1@32-bilinear");
    CHECK(make_extractor("cnn:" + data_path("tiny_cnn_bundled.ckpt"))->dim() == 32);
    CHECK_THROWS(make_extractor("inception"));
}
