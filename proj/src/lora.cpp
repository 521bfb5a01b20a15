#include "medart/lora.hpp"

#include "medart/archive.hpp"
#include "medart/nn.hpp"

namespace medart {

void LoraSet::add(LoraAdapter ad) {
    if (adapters_.count(ad.target)) throw std::invalid_argument("duplicate LoRA target: " + ad.target);
    adapters_.emplace(ad.target, std::move(ad));
}

const LoraAdapter* LoraSet::find(const std::string& target) const {
    auto it = adapters_.find(target);
    return it == adapters_.end() ? nullptr : &it->second;
}

LoraAdapter* LoraSet::find(const std::string& target) {
    auto it = adapters_.find(target);
    return it == adapters_.end() ? nullptr : &it->second;
}

std::vector<Tensor> LoraSet::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [_, ad] : adapters_) {
        out.push_back(ad.A);
        out.push_back(ad.B);
    }
    return out;
}

int64_t LoraSet::parameter_count() const {
    int64_t n = 0;
    for (const auto& [_, ad] : adapters_) n += static_cast<int64_t>(ad.rank) * (ad.out_features() + ad.in_features());
    return n;
}

void LoraSet::set_trainable(bool on) {
    for (auto& [_, ad] : adapters_) {
        ad.A.set_requires_grad(on);
        ad.B.set_requires_grad(on);
    }
}

LoraSet attach(const LinearHost& model, const std::vector<std::string>& targets, int rank, double scale, Rng& init) {
    if (rank < 1) throw std::invalid_argument("LoRA rank must be >= 1");
    LoraSet set;
    for (const auto& name : targets) {
        const Linear* lin = model.find_linear(name);
        if (!lin) throw std::invalid_argument("LoRA target is not a linear layer: " + name);
        const int64_t d = lin->out_features(), k = lin->in_features();
        if (rank > std::min(d, k))
            throw std::invalid_argument("LoRA rank " + std::to_string(rank) + " exceeds dimensions of " + name);
        LoraAdapter ad;
        ad.target = name;
        ad.rank = rank;
        ad.scale = scale;
        ad.A = Tensor::from({d, rank}, init.normal_vec(static_cast<size_t>(d * rank), 0.02), true);
        ad.B = Tensor::zeros({rank, k}, true);
        set.add(std::move(ad));
    }
    return set;
}

Tensor merged_weight(const Tensor& base, const LoraAdapter& ad) {
    if (base.ndim() != 2 || ad.A.dim(0) != base.dim(0) || ad.B.dim(1) != base.dim(1) || ad.A.dim(1) != ad.B.dim(0))
        throw std::invalid_argument("merged_weight: dimension mismatch for " + ad.target);
    const int64_t d = base.dim(0), k = base.dim(1), r = ad.A.dim(1);
    const auto a = ad.A.data();
    const auto b = ad.B.data();
    std::vector<double> out = base.to_vector();
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int64_t q = 0; q < r; ++q) acc += a[i * r + q] * b[q * k + j];
            out[i * k + j] += ad.scale * acc;
        }
    return Tensor::from({d, k}, std::move(out));
}

void save_adapters(const std::string& path, const LoraSet& set) {
    Archive ar;
    ar.meta["format"] = "medart-archive";
    ar.meta["kind"] = "lora";
    auto targets = nlohmann::ordered_json::array();
    for (const auto& [name, ad] : set.adapters()) {
        targets.push_back({{"target", name}, {"rank", ad.rank}, {"scale", ad.scale}});
        ar.tensors.emplace_back(name + ".A", ad.A);
        ar.tensors.emplace_back(name + ".B", ad.B);
    }
    ar.meta["adapters"] = targets;
    write_archive(path, ar);
}

LoraSet load_adapters(const std::string& path, const LinearHost& model) {
    Archive ar = read_archive(path);
    if (ar.meta.value("kind", "") != "lora") throw std::runtime_error("not an adapter checkpoint: " + path);
    LoraSet set;
    for (const auto& entry : ar.meta.at("adapters")) {
        LoraAdapter ad;
        ad.target = entry.at("target").get<std::string>();
        ad.rank = entry.at("rank").get<int>();
        ad.scale = entry.at("scale").get<double>();
        const Linear* lin = model.find_linear(ad.target);
        if (!lin) throw std::runtime_error("adapter target missing from model: " + ad.target);
        const Tensor* a = ar.find(ad.target + ".A");
        const Tensor* b = ar.find(ad.target + ".B");
        if (!a || !b) throw std::runtime_error("adapter factors missing for " + ad.target);
        if (a->shape() != Shape{lin->out_features(), ad.rank} || b->shape() != Shape{ad.rank, lin->in_features()})
            throw std::runtime_error("adapter shape mismatch for " + ad.target);
        ad.A = Tensor::from(a->shape(), a->to_vector(), true);
        ad.B = Tensor::from(b->shape(), b->to_vector(), true);
        set.add(std::move(ad));
    }
    return set;
}

}  // namespace medart
