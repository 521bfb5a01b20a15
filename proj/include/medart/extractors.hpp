#pragma once

#include <memory>
#include <string>
#include <vector>

#include "medart/metrics.hpp"
#include "medart/tensor.hpp"

namespace medart {

/// Maps a [B, 3, H, W] batch in [0, 1] to features. Implementations are pure;
/// any resizing they do is part of id().
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual int64_t dim() const = 0;
    virtual Eigen::MatrixXd features(const Tensor& images) const = 0;

    FeatureSet extract(const Tensor& images) const { return {features(images), id()}; }
};

/// Per-channel mean and population std: (mu_r, mu_g, mu_b, sd_r, sd_g, sd_b).
class ChannelStatsExtractor final : public FeatureExtractor {
public:
    std::string id() const override { return "channel-stats-v1"; }
    int64_t dim() const override { return 6; }
    Eigen::MatrixXd features(const Tensor& images) const override;
};

/// Two stride-2 3x3 convolutions with ReLU, then per-channel global mean and
/// max. Inputs are bilinearly resized to input_size first.
class CnnExtractor final : public FeatureExtractor {
public:
    struct Weights {
        std::vector<double> w1, b1, w2, b2;  // w: [out, in, 3, 3]
        int c1 = 8, c2 = 16;
    };

    CnnExtractor(Weights w, int input_size, std::string id);

    /// Bundled extractor with weights drawn from a fixed seed.
    static CnnExtractor bundled();
    /// Weights from an archive with kind "cnn-extractor".
    static CnnExtractor load(const std::string& path);
    void save(const std::string& path) const;

    std::string id() const override { return id_; }
    int64_t dim() const override { return 2 * weights_.c2; }
    Eigen::MatrixXd features(const Tensor& images) const override;

private:
    Weights weights_;
    int input_size_;
    std::string id_;
};

/// Bilinear resize of one [3, H, W] plane stack (half-pixel centers).
std::vector<double> resize_chw(const double* src, int64_t channels, int64_t h, int64_t w, int64_t oh, int64_t ow);

/// "channel-stats", "tiny-cnn", or "cnn:<archive path>".
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec);

}  // namespace medart
