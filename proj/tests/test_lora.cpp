#include <doctest.h>

#include <cmath>

#include "medart/lora.hpp"
#include "medart/denoiser.hpp"
#include "support/common.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny_model.hpp"

using namespace medart;
using medart::testing::tiny_dit;

namespace {
template <class T>
RowMatrix<T> random_matrix(Rng& r, int rows, int cols) {
    RowMatrix<T> m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = static_cast<T>(r.uniform() * 2.0 - 1.0);
    return m;
}
}  // namespace

TEST_CASE("rank-1 hand example") {
    RowMatrix<double> base = RowMatrix<double>::Identity(2, 2), a(2, 1), b(1, 2);
    a << 1, 0;
    b << 0, 1;
    RowMatrix<double> want(2, 2);
    want << 1, 1, 0, 1;
    CHECK(merged_weight<double>(base, a, b, 1.0) == want);
    CHECK(merged_weight<double>(base, a, b, 0.0) == base);
    CHECK_THROWS(merged_weight<double>(base, b, a, 1.0));

    const Tensor tb = Tensor::from({2, 2}, {1, 0, 0, 1});
    LoraAdapter ad{"x", Tensor::from({2, 1}, {1, 0}), Tensor::from({1, 2}, {0, 1}), 1, 1.0};
    CHECK(merged_weight(tb, ad).to_vector() == std::vector<double>{1, 1, 0, 1});
    ad.scale = 0.0;
    CHECK(merged_weight(tb, ad).to_vector() == tb.to_vector());
}

TEST_CASE("merged and adapter paths agree at 32 and 64 bit") {
    Rng r(2024);
    double worst32 = 0, worst64 = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const double s = r.uniform() * 2.0;
        const auto base = random_matrix<double>(r, 4, 4), a = random_matrix<double>(r, 4, 2),
                   b = random_matrix<double>(r, 2, 4);
        ColVector<double> x(4);
        for (int i = 0; i < 4; ++i) x(i) = r.uniform() * 2.0 - 1.0;
        const ColVector<double> m64 = merged_weight<double>(base, a, b, s) * x;
        worst64 = std::max(worst64, (m64 - adapter_forward<double>(base, a, b, s, x)).cwiseAbs().maxCoeff());

        const RowMatrix<float> bf = base.cast<float>(), af = a.cast<float>(), bbf = b.cast<float>();
        const ColVector<float> xf = x.cast<float>();
        const ColVector<float> m32 = merged_weight<float>(bf, af, bbf, static_cast<float>(s)) * xf;
        const ColVector<float> p32 = adapter_forward<float>(bf, af, bbf, static_cast<float>(s), xf);
        worst32 = std::max(worst32, static_cast<double>((m32 - p32).cwiseAbs().maxCoeff()));
    }
    CHECK(worst32 < 1e-6);
    CHECK(worst64 < 1e-12);
}

TEST_CASE("attach zero-initialises B and counts parameters") {
    Rng init(1);
    DenoiserModel model(tiny_dit(), init);
    const auto targets = model.default_lora_targets(true, true);
    REQUIRE(!targets.empty());
    Rng lr(2);
    LoraSet set = attach(model, targets, 2, 1.0, lr);
    CHECK(set.size() == targets.size());
    int64_t expect = 0;
    for (const auto& [name, ad] : set.adapters()) {
        for (double v : ad.B.data()) CHECK(v == 0.0);
        expect += 2 * (ad.out_features() + ad.in_features());
        CHECK(ad.out_features() == model.find_linear(name)->out_features());
    }
    CHECK(set.parameter_count() == expect);
    CHECK(set.parameters().size() == 2 * targets.size());

    Rng lr2(2);
    CHECK_THROWS(attach(model, {"no.such.layer"}, 2, 1.0, lr2));
    CHECK_THROWS(attach(model, targets, 0, 1.0, lr2));
    CHECK_THROWS(attach(model, targets, 1000, 1.0, lr2));
}

TEST_CASE("dit-only targets skip the text encoder") {
    Rng init(1);
    DenoiserModel model(tiny_dit(), init);
    for (const auto& n : model.default_lora_targets(true, false)) CHECK(n.rfind("dit.", 0) == 0);
    for (const auto& n : model.default_lora_targets(false, true)) CHECK(n.rfind("text.", 0) == 0);
}

TEST_CASE("adapter checkpoint roundtrip") {
    medart::testing::TempDir dir("lora");
    Rng init(1);
    DenoiserModel model(tiny_dit(), init);
    Rng lr(3);
    LoraSet set = attach(model, model.default_lora_targets(true, true), 2, 0.5, lr);
    for (auto& t : set.parameters())
        for (auto& v : t.data()) v += 0.01;
    const std::string path = dir.str("a.lora");
    save_adapters(path, set);
    const LoraSet back = load_adapters(path, model);
    REQUIRE(back.size() == set.size());
    for (const auto& [name, ad] : set.adapters()) {
        const LoraAdapter* other = back.find(name);
        REQUIRE(other);
        CHECK(other->A.to_vector() == ad.A.to_vector());
        CHECK(other->B.to_vector() == ad.B.to_vector());
        CHECK(other->scale == 0.5);
    }
    CHECK_THROWS(load_adapters(dir.str("missing.lora"), model));
    model.save(dir.str("m.ckpt"));
    CHECK_THROWS(load_adapters(dir.str("m.ckpt"), model));
}
