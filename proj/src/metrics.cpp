#include "medart/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "medart/rng.hpp"

namespace medart {

namespace {

constexpr char kFeatMagic[8] = {'M', 'D', 'F', 'E', 'A', 'T', '0', '1'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated feature file " + path);
    return v;
}

void check_finite(const FeatureSet& f, const char* side) {
    if (!f.features.allFinite()) throw std::invalid_argument(std::string("non-finite ") + side + " features");
}

void check_pair(const FeatureSet& real, const FeatureSet& gen) {
    if (real.d() != gen.d())
        throw std::invalid_argument("feature dimension mismatch: " + std::to_string(real.d()) + " vs " +
                                    std::to_string(gen.d()));
    if (!real.extractor_id.empty() && !gen.extractor_id.empty() && real.extractor_id != gen.extractor_id)
        throw std::invalid_argument("feature sets come from different extractors: " + real.extractor_id + " vs " +
                                    gen.extractor_id);
    check_finite(real, "real");
    check_finite(gen, "generated");
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mu) {
    const Eigen::MatrixXd c = x.rowwise() - mu;
    return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double tol_for(const Eigen::VectorXd& ev) { return 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff()); }

}  // namespace

void write_feature_file(const std::string& path, const FeatureSet& fs) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write feature file " + path);
    os.write(kFeatMagic, 8);
    put<uint64_t>(os, static_cast<uint64_t>(fs.n()));
    put<uint64_t>(os, static_cast<uint64_t>(fs.d()));
    put<uint32_t>(os, static_cast<uint32_t>(fs.extractor_id.size()));
    os.write(fs.extractor_id.data(), static_cast<std::streamsize>(fs.extractor_id.size()));
    for (int64_t i = 0; i < fs.n(); ++i)
        for (int64_t j = 0; j < fs.d(); ++j) put<float>(os, static_cast<float>(fs.features(i, j)));
    if (!os) throw std::runtime_error("failed writing feature file " + path);
}

FeatureSet read_feature_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open feature file " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kFeatMagic, 8) != 0)
        throw std::runtime_error("not a feature file: " + path);
    const auto n = get<uint64_t>(is, path);
    const auto d = get<uint64_t>(is, path);
    const auto id_len = get<uint32_t>(is, path);
    if (id_len > (1u << 16) || n > (1ull << 32) || d > (1ull << 24)) throw std::runtime_error("corrupt feature file " + path);
    FeatureSet fs;
    fs.extractor_id.resize(id_len);
    if (!is.read(fs.extractor_id.data(), id_len)) throw std::runtime_error("truncated feature file " + path);
    fs.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (uint64_t i = 0; i < n; ++i)
        for (uint64_t j = 0; j < d; ++j)
            fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = get<float>(is, path);
    return fs;
}

double trace_sqrt_product(const Eigen::MatrixXd& sigma1_in, const Eigen::MatrixXd& sigma2_in) {
    Eigen::MatrixXd s1 = sigma1_in, s2 = sigma2_in;
    const Eigen::Index d = s1.rows();
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1, Eigen::EigenvaluesOnly);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e2(s2, Eigen::EigenvaluesOnly);
        if (e1.eigenvalues().minCoeff() <= 0.0 || e2.eigenvalues().minCoeff() <= 0.0) {
            s1 += 1e-10 * Eigen::MatrixXd::Identity(d, d);
            s2 += 1e-10 * Eigen::MatrixXd::Identity(d, d);
        }
    }
    const Eigen::MatrixXd r = psd_sqrt(s1);
    Eigen::MatrixXd m = r * s2 * r;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    const double tol = tol_for(ev);
    double tr = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -tol) throw std::runtime_error("covariance product has a negative eigenvalue " + std::to_string(ev(i)));
        tr += std::sqrt(std::max(0.0, ev(i)));
    }
    return tr;
}

double frechet_distance(const FeatureSet& real, const FeatureSet& gen) {
    check_pair(real, gen);
    if (real.n() < 2 || gen.n() < 2) throw std::invalid_argument("Frechet distance needs at least 2 samples per side");
    const Eigen::RowVectorXd mu1 = real.features.colwise().mean();
    const Eigen::RowVectorXd mu2 = gen.features.colwise().mean();
    const Eigen::MatrixXd s1 = covariance(real.features, mu1);
    const Eigen::MatrixXd s2 = covariance(gen.features, mu2);
    const double fd = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * trace_sqrt_product(s1, s2);
    return fd;
}

double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.cols() != y.cols()) throw std::invalid_argument("mmd2: dimension mismatch");
    const Eigen::Index m = x.rows(), n = y.rows();
    if (m < 2 || n < 2) throw std::invalid_argument("mmd2: need at least 2 samples per side");
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    auto kern = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        Eigen::MatrixXd k = (a * b.transpose()) * inv_d;
        return ((k.array() + 1.0).cube()).matrix().eval();
    };
    const Eigen::MatrixXd kxx = kern(x, x), kyy = kern(y, y), kxy = kern(x, y);
    const double sxx = kxx.sum() - kxx.trace();
    const double syy = kyy.sum() - kyy.trace();
    const double dm = static_cast<double>(m), dn = static_cast<double>(n);
    return sxx / (dm * (dm - 1.0)) + syy / (dn * (dn - 1.0)) - 2.0 * kxy.sum() / (dm * dn);
}

namespace {
Eigen::MatrixXd pick_rows(const Eigen::MatrixXd& x, int64_t k, Rng& rng) {
    std::vector<int64_t> idx(static_cast<size_t>(x.rows()));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    // partial Fisher-Yates
    for (int64_t i = 0; i < k; ++i) {
        const auto j = rng.uniform_int(i, static_cast<int64_t>(idx.size()) - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    Eigen::MatrixXd out(k, x.cols());
    for (int64_t i = 0; i < k; ++i) out.row(i) = x.row(idx[static_cast<size_t>(i)]);
    return out;
}
}  // namespace

KidResult kid(const FeatureSet& real, const FeatureSet& gen, int subsets, int64_t subset_size, uint64_t seed) {
    check_pair(real, gen);
    if (subsets < 1) throw std::invalid_argument("kid: subsets must be >= 1");
    const int64_t limit = std::min(real.n(), gen.n());
    if (subset_size <= 0) subset_size = std::min(kKidMaxSubsetSize, limit);
    if (subset_size < 2) throw std::invalid_argument("kid: subset size must be >= 2");
    if (subset_size > limit)
        throw std::invalid_argument("kid: subset size " + std::to_string(subset_size) + " exceeds min(n_real, n_gen) = " +
                                    std::to_string(limit));
    Rng rng(seed);
    std::vector<double> vals;
    vals.reserve(static_cast<size_t>(subsets));
    for (int s = 0; s < subsets; ++s) {
        const Eigen::MatrixXd x = pick_rows(real.features, subset_size, rng);
        const Eigen::MatrixXd y = pick_rows(gen.features, subset_size, rng);
        vals.push_back(mmd2_unbiased(x, y));
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size());
    return {mean, std::sqrt(var), subsets, subset_size};
}

nlohmann::ordered_json MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["extractor_id"] = extractor_id;
    j["fd"] = fd;
    j["kid_mean"] = kid_mean;
    j["kid_std"] = kid_std;
    j["n_real"] = n_real;
    j["n_gen"] = n_gen;
    j["kid_subsets"] = kid_subsets;
    j["kid_subset_size"] = kid_subset_size;
    j["kid_seed"] = kid_seed;
    return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    r.extractor_id = j.at("extractor_id").get<std::string>();
    r.fd = j.at("fd").get<double>();
    r.kid_mean = j.at("kid_mean").get<double>();
    r.kid_std = j.at("kid_std").get<double>();
    r.n_real = j.at("n_real").get<int64_t>();
    r.n_gen = j.at("n_gen").get<int64_t>();
    r.kid_subsets = j.at("kid_subsets").get<int>();
    r.kid_subset_size = j.at("kid_subset_size").get<int64_t>();
    r.kid_seed = j.at("kid_seed").get<uint64_t>();
    return r;
}

MetricReport evaluate_features(const FeatureSet& real, const FeatureSet& gen, int subsets, int64_t subset_size,
                               uint64_t seed) {
    MetricReport r;
    r.fd = frechet_distance(real, gen);
    const KidResult k = kid(real, gen, subsets, subset_size, seed);
    r.kid_mean = k.mean;
    r.kid_std = k.std;
    r.extractor_id = real.extractor_id.empty() ? gen.extractor_id : real.extractor_id;
    r.n_real = real.n();
    r.n_gen = gen.n();
    r.kid_subsets = k.subsets;
    r.kid_subset_size = k.subset_size;
    r.kid_seed = seed;
    return r;
}

double report_max_abs_diff(const MetricReport& a, const MetricReport& b) {
    if (a.extractor_id != b.extractor_id || a.n_real != b.n_real || a.n_gen != b.n_gen ||
        a.kid_subsets != b.kid_subsets || a.kid_subset_size != b.kid_subset_size || a.kid_seed != b.kid_seed)
        throw std::invalid_argument("reports describe different evaluations");
    return std::max({std::abs(a.fd - b.fd), std::abs(a.kid_mean - b.kid_mean), std::abs(a.kid_std - b.kid_std)});
}

}  // namespace medart
