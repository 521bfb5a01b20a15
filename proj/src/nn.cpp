#include "medart/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace medart {

Tensor ParameterStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return items_[it->second].second;
}

int64_t ParameterStore::numel() const {
    int64_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
}

void ParameterStore::set_requires_grad(bool on) {
    for (auto& [_, t] : items_) t.set_requires_grad(on);
}

Linear Linear::create(ParameterStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
                      double init_std) {
    if (init_std < 0.0) init_std = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.name = name;
    l.weight = ps.add(name + ".weight",
                      Tensor::from({out, in}, rng.normal_vec(static_cast<size_t>(out * in), init_std)));
    l.bias = ps.add(name + ".bias", Tensor::zeros({out}));
    return l;
}

Tensor Linear::forward(const Tensor& x, const LoraSet* adapters) const {
    Tensor y = linear(x, weight, bias);
    if (adapters) {
        if (const LoraAdapter* ad = adapters->find(name)) {
            Tensor low = linear(linear(x, ad->B), ad->A);
            y = add(y, scale(low, ad->scale));
        }
    }
    return y;
}

LayerNorm LayerNorm::create(ParameterStore& ps, const std::string& name, int64_t dim) {
    LayerNorm ln;
    ln.gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.0));
    ln.beta = ps.add(name + ".beta", Tensor::zeros({dim}));
    return ln;
}

}  // namespace medart
