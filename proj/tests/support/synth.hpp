#pragma once

#include <string>
#include <vector>

#include "medart/rng.hpp"
#include "medart/tensor.hpp"

namespace medart::testing {

/// Class of the synthetic corpus: a base color modulated by oriented stripes.
struct SynthClass {
    std::string name;
    double rgb[3];
    double angle;  // stripe orientation, radians
    double cycles;  // stripe periods across the image
};

std::vector<SynthClass> synth_classes();

/// [n, 3, size, size] in [0, 1].
Tensor synth_images(const SynthClass& cls, int n, int size, Rng& rng);

/// Writes root/<class>/<i>.png for every class.
void write_synth_dataset(const std::string& root, const std::vector<SynthClass>& classes, int per_class, int size,
                         uint64_t seed);

}  // namespace medart::testing
