#pragma once

#include <map>
#include <string>
#include <vector>

#include "medart/lora.hpp"
#include "medart/rng.hpp"
#include "medart/tensor.hpp"

namespace medart {

/// Named parameters in registration order.
class ParameterStore {
public:
    Tensor add(const std::string& name, Tensor t);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    int64_t numel() const;
    void set_requires_grad(bool on);

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, size_t> index_;
};

struct Linear {
    std::string name;
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    static Linear create(ParameterStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
                         double init_std = -1.0);
    int64_t in_features() const { return weight.dim(1); }
    int64_t out_features() const { return weight.dim(0); }
    /// Adds the adapter registered under `name` when present.
    Tensor forward(const Tensor& x, const LoraSet* adapters = nullptr) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;
    static LayerNorm create(ParameterStore& ps, const std::string& name, int64_t dim);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

/// A model whose linear layers can be looked up by name (LoRA attachment point).
class LinearHost {
public:
    virtual ~LinearHost() = default;
    virtual const Linear* find_linear(const std::string& name) const = 0;
    virtual std::vector<std::string> linear_names() const = 0;
};

}  // namespace medart
