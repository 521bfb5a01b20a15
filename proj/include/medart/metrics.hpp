#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <string>

namespace medart {

struct FeatureSet {
    Eigen::MatrixXd features;  // [n, d]
    std::string extractor_id;

    int64_t n() const { return features.rows(); }
    int64_t d() const { return features.cols(); }
};

/// Binary feature file: "MDFEAT01", u64 n, u64 d, u32 id length, id bytes,
/// then n*d little-endian float32 values row-major.
void write_feature_file(const std::string& path, const FeatureSet& fs);
FeatureSet read_feature_file(const std::string& path);

/// Squared Frechet distance between Gaussian fits (covariance divisor n-1).
double frechet_distance(const FeatureSet& real, const FeatureSet& gen);

/// Trace of the principal square root of Sigma1 * Sigma2, via the symmetric
/// form Sigma1^{1/2} Sigma2 Sigma1^{1/2}.
double trace_sqrt_product(const Eigen::MatrixXd& sigma1, const Eigen::MatrixXd& sigma2);

/// Unbiased MMD^2 with k(x, y) = (x.y / d + 1)^3.
double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct KidResult {
    double mean = 0.0;
    double std = 0.0;  // population std over subsets
    int subsets = 0;
    int64_t subset_size = 0;
};

inline constexpr int kKidSubsets = 100;
inline constexpr int64_t kKidMaxSubsetSize = 1000;

/// subset_size <= 0 selects min(1000, n_real, n_gen). Subsets are drawn
/// without replacement from each side.
KidResult kid(const FeatureSet& real, const FeatureSet& gen, int subsets = kKidSubsets, int64_t subset_size = 0,
              uint64_t seed = 0);

struct MetricReport {
    double fd = 0.0;
    double kid_mean = 0.0;
    double kid_std = 0.0;
    std::string extractor_id;
    int64_t n_real = 0;
    int64_t n_gen = 0;
    int kid_subsets = 0;
    int64_t kid_subset_size = 0;
    uint64_t kid_seed = 0;

    nlohmann::ordered_json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
};

MetricReport evaluate_features(const FeatureSet& real, const FeatureSet& gen, int subsets = kKidSubsets,
                               int64_t subset_size = 0, uint64_t seed = 0);

/// Max absolute difference over the numeric fields; throws when the
/// identifying fields (extractor, sizes, subset config) differ.
double report_max_abs_diff(const MetricReport& a, const MetricReport& b);

}  // namespace medart
