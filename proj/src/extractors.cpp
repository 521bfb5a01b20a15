#include "medart/extractors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "medart/archive.hpp"
#include "medart/rng.hpp"

namespace medart {

namespace {
void check_images(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) != 3) throw std::invalid_argument("extractor: expected [B,3,H,W], got " + shape_str(x.shape()));
    if (x.dim(0) < 1) throw std::invalid_argument("extractor: empty batch");
}

constexpr uint64_t kBundledSeed = 0x5eedcafe;
constexpr int kBundledInput = 32;
}  // namespace

Eigen::MatrixXd ChannelStatsExtractor::features(const Tensor& images) const {
    check_images(images);
    const int64_t B = images.dim(0), hw = images.dim(2) * images.dim(3);
    const auto d = images.data();
    Eigen::MatrixXd f(B, 6);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < 3; ++c) {
            const double* p = d.data() + (b * 3 + c) * hw;
            double shift = 0.0;
            for (int64_t i = 0; i < hw; ++i) shift += p[i] - p[0];
            const double mu = p[0] + shift / static_cast<double>(hw);
            double var = 0.0;
            for (int64_t i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
            f(b, c) = mu;
            f(b, 3 + c) = std::sqrt(var / static_cast<double>(hw));
        }
    return f;
}

std::vector<double> resize_chw(const double* src, int64_t channels, int64_t h, int64_t w, int64_t oh, int64_t ow) {
    std::vector<double> out(static_cast<size_t>(channels * oh * ow));
    if (oh == h && ow == w) {
        std::copy(src, src + channels * h * w, out.begin());
        return out;
    }
    const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
    for (int64_t c = 0; c < channels; ++c) {
        const double* p = src + c * h * w;
        for (int64_t y = 0; y < oh; ++y) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
            const auto y0 = static_cast<int64_t>(fy);
            const int64_t y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - y0;
            for (int64_t x = 0; x < ow; ++x) {
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
                const auto x0 = static_cast<int64_t>(fx);
                const int64_t x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - x0;
                const double top = p[y0 * w + x0] * (1 - wx) + p[y0 * w + x1] * wx;
                const double bot = p[y1 * w + x0] * (1 - wx) + p[y1 * w + x1] * wx;
                out[static_cast<size_t>((c * oh + y) * ow + x)] = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

CnnExtractor::CnnExtractor(Weights w, int input_size, std::string id)
    : weights_(std::move(w)), input_size_(input_size), id_(std::move(id)) {
    if (input_size_ < 4) throw std::invalid_argument("cnn extractor: input size too small");
    const auto n1 = static_cast<size_t>(weights_.c1 * 3 * 9), n2 = static_cast<size_t>(weights_.c2 * weights_.c1 * 9);
    if (weights_.w1.size() != n1 || weights_.b1.size() != static_cast<size_t>(weights_.c1) ||
        weights_.w2.size() != n2 || weights_.b2.size() != static_cast<size_t>(weights_.c2))
        throw std::invalid_argument("cnn extractor: weight shapes inconsistent");
}

CnnExtractor CnnExtractor::bundled() {
    Weights w;
    Rng rng(kBundledSeed);
    w.w1 = rng.normal_vec(static_cast<size_t>(w.c1 * 27), std::sqrt(2.0 / 27.0));
    w.b1 = rng.normal_vec(static_cast<size_t>(w.c1), 0.1);
    w.w2 = rng.normal_vec(static_cast<size_t>(w.c2 * w.c1 * 9), std::sqrt(2.0 / (w.c1 * 9.0)));
    w.b2 = rng.normal_vec(static_cast<size_t>(w.c2), 0.1);
    return CnnExtractor(std::move(w), kBundledInput, "tiny-cnn-v1@32-bilinear");
}

CnnExtractor CnnExtractor::load(const std::string& path) {
    if (!std::filesystem::exists(path)) throw std::runtime_error("extractor file not found: " + path);
    const Archive ar = read_archive(path);
    if (ar.meta.value("kind", "") != "cnn-extractor") throw std::runtime_error(path + " is not a cnn-extractor archive");
    auto need = [&](const char* name) -> const Tensor& {
        const Tensor* t = ar.find(name);
        if (!t) throw std::runtime_error(path + ": missing tensor " + name);
        return *t;
    };
    Weights w;
    const Tensor& w1 = need("conv1.w");
    const Tensor& w2 = need("conv2.w");
    if (w1.ndim() != 4 || w2.ndim() != 4 || w1.dim(1) != 3 || w2.dim(1) != w1.dim(0) || w1.dim(2) != 3 ||
        w1.dim(3) != 3 || w2.dim(2) != 3 || w2.dim(3) != 3)
        throw std::runtime_error(path + ": unexpected convolution shapes");
    w.c1 = static_cast<int>(w1.dim(0));
    w.c2 = static_cast<int>(w2.dim(0));
    w.w1 = w1.to_vector();
    w.w2 = w2.to_vector();
    w.b1 = need("conv1.b").to_vector();
    w.b2 = need("conv2.b").to_vector();
    const int input = ar.meta.value("input_size", kBundledInput);
    const std::string id = ar.meta.value("id", std::string("cnn:") + std::filesystem::path(path).filename().string());
    return CnnExtractor(std::move(w), input, id);
}

void CnnExtractor::save(const std::string& path) const {
    Archive ar;
    ar.meta["kind"] = "cnn-extractor";
    ar.meta["id"] = id_;
    ar.meta["input_size"] = input_size_;
    ar.tensors.emplace_back("conv1.w", Tensor::from({weights_.c1, 3, 3, 3}, weights_.w1));
    ar.tensors.emplace_back("conv1.b", Tensor::from({weights_.c1}, weights_.b1));
    ar.tensors.emplace_back("conv2.w", Tensor::from({weights_.c2, weights_.c1, 3, 3}, weights_.w2));
    ar.tensors.emplace_back("conv2.b", Tensor::from({weights_.c2}, weights_.b2));
    write_archive(path, ar);
}

namespace {
// 3x3, stride 2, zero padding 1, ReLU.
std::vector<double> conv_s2_relu(const std::vector<double>& in, int64_t cin, int64_t h, int64_t w,
                                 const std::vector<double>& wt, const std::vector<double>& bias, int64_t cout,
                                 int64_t& oh, int64_t& ow) {
    oh = (h + 1) / 2;
    ow = (w + 1) / 2;
    std::vector<double> out(static_cast<size_t>(cout * oh * ow));
    for (int64_t o = 0; o < cout; ++o)
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t x = 0; x < ow; ++x) {
                double acc = bias[static_cast<size_t>(o)];
                for (int64_t i = 0; i < cin; ++i)
                    for (int64_t ky = 0; ky < 3; ++ky) {
                        const int64_t iy = 2 * y + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < 3; ++kx) {
                            const int64_t ix = 2 * x + kx - 1;
                            if (ix < 0 || ix >= w) continue;
                            acc += wt[static_cast<size_t>(((o * cin + i) * 3 + ky) * 3 + kx)] *
                                   in[static_cast<size_t>((i * h + iy) * w + ix)];
                        }
                    }
                out[static_cast<size_t>((o * oh + y) * ow + x)] = std::max(0.0, acc);
            }
    return out;
}
}  // namespace

Eigen::MatrixXd CnnExtractor::features(const Tensor& images) const {
    check_images(images);
    const int64_t B = images.dim(0), H = images.dim(2), W = images.dim(3);
    const auto d = images.data();
    Eigen::MatrixXd f(B, dim());
    for (int64_t b = 0; b < B; ++b) {
        const std::vector<double> x = resize_chw(d.data() + b * 3 * H * W, 3, H, W, input_size_, input_size_);
        int64_t h1, w1, h2, w2;
        const auto a1 = conv_s2_relu(x, 3, input_size_, input_size_, weights_.w1, weights_.b1, weights_.c1, h1, w1);
        const auto a2 = conv_s2_relu(a1, weights_.c1, h1, w1, weights_.w2, weights_.b2, weights_.c2, h2, w2);
        const int64_t hw = h2 * w2;
        for (int64_t c = 0; c < weights_.c2; ++c) {
            double s = 0.0, mx = 0.0;
            for (int64_t i = 0; i < hw; ++i) {
                const double v = a2[static_cast<size_t>(c * hw + i)];
                s += v;
                mx = std::max(mx, v);
            }
            f(b, c) = s / static_cast<double>(hw);
            f(b, weights_.c2 + c) = mx;
        }
    }
    return f;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec) {
    if (spec == "channel-stats" || spec == "channel-stats-v1") return std::make_unique<ChannelStatsExtractor>();
    if (spec == "tiny-cnn" || spec == "tiny-cnn-v1@32-bilinear") return std::make_unique<CnnExtractor>(CnnExtractor::bundled());
    if (spec.rfind("cnn:", 0) == 0) return std::make_unique<CnnExtractor>(CnnExtractor::load(spec.substr(4)));
    throw std::invalid_argument("unknown feature extractor '" + spec + "'");
}

}  // namespace medart
