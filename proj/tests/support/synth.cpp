#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "medart/image_io.hpp"

namespace medart::testing {

std::vector<SynthClass> synth_classes() {
    return {
        {"crimson lesion", {0.78, 0.32, 0.30}, 0.0, 3.0},
        {"verdant polyp", {0.30, 0.74, 0.36}, std::numbers::pi / 4, 4.0},
        {"azure mucosa", {0.28, 0.38, 0.80}, std::numbers::pi / 2, 2.0},
    };
}

Tensor synth_images(const SynthClass& cls, int n, int size, Rng& rng) {
    std::vector<double> px(static_cast<size_t>(n) * 3 * size * size);
    const double ca = std::cos(cls.angle), sa = std::sin(cls.angle);
    for (int i = 0; i < n; ++i) {
        const double phase = 2.0 * std::numbers::pi * rng.uniform();
        const double amp = 0.08 + 0.06 * rng.uniform();
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double u = (x * ca + y * sa) / size;
                const double s = std::sin(2.0 * std::numbers::pi * cls.cycles * u + phase);
                for (int c = 0; c < 3; ++c) {
                    const double v = cls.rgb[c] + amp * s + 0.02 * rng.normal();
                    px[((static_cast<size_t>(i) * 3 + c) * size + y) * size + x] = std::clamp(v, 0.0, 1.0);
                }
            }
    }
    return Tensor::from({n, 3, size, size}, std::move(px));
}

void write_synth_dataset(const std::string& root, const std::vector<SynthClass>& classes, int per_class, int size,
                         uint64_t seed) {
    namespace fs = std::filesystem;
    const SeedStreams seeds(seed);
    for (const auto& cls : classes) {
        const fs::path dir = fs::path(root) / cls.name;
        fs::create_directories(dir);
        Rng rng = seeds.stream("synth/" + cls.name);
        const Tensor imgs = synth_images(cls, per_class, size, rng);
        for (int i = 0; i < per_class; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "%03d.png", i);
            write_png((dir / name).string(), tensor_to_image(imgs, i));
        }
    }
}

}  // namespace medart::testing
