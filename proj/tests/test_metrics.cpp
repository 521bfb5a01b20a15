#include <doctest.h>

#include <cmath>

#include "medart/metrics.hpp"
#include "medart/rng.hpp"
#include "support/common.hpp"
#include "support/oracles.hpp"

using namespace medart;

namespace {

FeatureSet gaussian(int64_t n, int64_t d, double shift, uint64_t seed) {
    Rng r(seed);
    FeatureSet f{Eigen::MatrixXd(n, d), "test"};
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) f.features(i, j) = r.normal() + (j == 0 ? shift : 0.0);
    return f;
}

medart::testing::Rows rows(const Eigen::MatrixXd& m) {
    medart::testing::Rows out;
    for (int64_t i = 0; i < m.rows(); ++i) {
        out.emplace_back();
        for (int64_t j = 0; j < m.cols(); ++j) out.back().push_back(m(i, j));
    }
    return out;
}

}  // namespace

TEST_CASE("Frechet distance closed forms") {
    const FeatureSet a = gaussian(500, 8, 0.0, 1);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-6);

    const FeatureSet x = gaussian(2000, 8, 0.0, 2);
    FeatureSet shifted = x;
    shifted.features.col(0).array() += 1.0;
    CHECK(std::abs(frechet_distance(x, shifted) - 1.0) < 1e-8);

    // y = 2x: |mu|^2 + tr(S + 4S - 2 * 2S) = |mu|^2 + tr(S)
    FeatureSet doubled = x;
    doubled.features *= 2.0;
    const Eigen::RowVectorXd mu = x.features.colwise().mean();
    const Eigen::MatrixXd c = x.features.rowwise() - mu;
    const double tr = (c.array().square().colwise().sum() / static_cast<double>(x.features.rows() - 1)).sum();
    CHECK(std::abs(frechet_distance(x, doubled) - (mu.squaredNorm() + tr)) < 1e-8);


    FeatureSet p{Eigen::MatrixXd(2, 1), ""}, q{Eigen::MatrixXd(2, 1), ""};
    p.features << 0, 2;
    q.features << 1, 3;
    CHECK(frechet_distance(p, q) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("Frechet distance preconditions") {
    const FeatureSet a = gaussian(10, 3, 0.0, 1), b = gaussian(10, 4, 0.0, 2);
    CHECK_THROWS(frechet_distance(a, b));
    FeatureSet c = gaussian(10, 3, 0.0, 3);
    c.extractor_id = "other";
    CHECK_THROWS(frechet_distance(a, c));
    FeatureSet one = gaussian(1, 3, 0.0, 4);
    CHECK_THROWS(frechet_distance(a, one));
    c.extractor_id = "test";
    c.features(0, 0) = std::nan("");
    CHECK_THROWS(frechet_distance(a, c));
}

TEST_CASE("trace of the matrix square root") {
    Eigen::MatrixXd s1(2, 2), s2(2, 2);
    s1 << 4, 0, 0, 9;
    s2 << 1, 0, 0, 4;
    CHECK(trace_sqrt_product(s1, s2) == doctest::Approx(2.0 + 6.0).epsilon(1e-12));
    // rank-deficient inputs stay finite
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 3);
    CHECK(std::isfinite(trace_sqrt_product(z, z)));
}

TEST_CASE("KID hand example") {
    FeatureSet x{Eigen::MatrixXd(2, 1), ""}, y{Eigen::MatrixXd(2, 1), ""};
    x.features << 1, -1;
    y.features << 0, 0;
    CHECK(mmd2_unbiased(x.features, y.features) == -1.0);
    const KidResult k = kid(x, y, 1, 2, 0);
    CHECK(k.mean == -1.0);
    CHECK(k.std == 0.0);
}

TEST_CASE("KID matches a brute-force kernel sum") {
    const FeatureSet a = gaussian(100, 4, 0.0, 5), b = gaussian(100, 4, 0.3, 6);
    const double oracle = medart::testing::brute_mmd2(rows(a.features), rows(b.features));
    CHECK(std::abs(mmd2_unbiased(a.features, b.features) - oracle) < 1e-10);
    const KidResult k = kid(a, b, 3, 100, 9);
    CHECK(std::abs(k.mean - oracle) < 1e-10);
    CHECK(k.std < 1e-12);
}

TEST_CASE("KID null property and subset rules") {
    const FeatureSet all = gaussian(400, 4, 0.0, 7);
    const FeatureSet a{all.features.topRows(200), "test"}, b{all.features.bottomRows(200), "test"};
    const KidResult k = kid(a, b, 50, 50, 1);
    CHECK(std::abs(k.mean) <= 3.0 * k.std);
    CHECK(k.subsets == 50);
    CHECK(k.subset_size == 50);

    const KidResult again = kid(a, b, 50, 50, 1);
    CHECK(again.mean == k.mean);
    const KidResult dflt = kid(a, b, 2);
    CHECK(dflt.subset_size == 200);

    CHECK_THROWS(kid(a, b, 10, 1, 0));
    CHECK_THROWS(kid(a, b, 10, 201, 0));
    CHECK_THROWS(kid(a, b, 0, 10, 0));
}

TEST_CASE("feature files and reports roundtrip") {
    medart::testing::TempDir dir("feat");
    const FeatureSet a = gaussian(7, 5, 0.0, 8);
    write_feature_file(dir.str("a.feat"), a);
    const FeatureSet back = read_feature_file(dir.str("a.feat"));
    CHECK(back.extractor_id == "test");
    CHECK(back.features.isApprox(a.features, 1e-6));
    medart::testing::write_text(dir.str("bad.feat"), "MDFEAT01");
    CHECK_THROWS(read_feature_file(dir.str("bad.feat")));
    CHECK_THROWS(read_feature_file(dir.str("none.feat")));

    const MetricReport r = evaluate_features(back, back, 2, 4, 3);
    CHECK(r.n_real == 7);
    CHECK(r.kid_subsets == 2);
    const MetricReport j = MetricReport::from_json(nlohmann::json::parse(r.to_json().dump()));
    CHECK(report_max_abs_diff(r, j) == 0.0);
    CHECK(j.extractor_id == "test");
    MetricReport shifted = j;
    shifted.fd += 0.5;
    CHECK(report_max_abs_diff(r, shifted) == doctest::Approx(0.5));
}
