#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "medart/rng.hpp"
#include "medart/tensor.hpp"

namespace medart {

class LinearHost;

/// Low-rank update on a named base linear layer W[d, k]:
/// forward becomes W x + scale * A (B x), i.e. dW = scale * A B.
struct LoraAdapter {
    std::string target;
    Tensor A;  // [d, r]
    Tensor B;  // [r, k]
    int rank = 0;
    double scale = 1.0;

    int64_t out_features() const { return A.dim(0); }
    int64_t in_features() const { return B.dim(1); }
};

class LoraSet {
public:
    void add(LoraAdapter ad);
    const LoraAdapter* find(const std::string& target) const;
    LoraAdapter* find(const std::string& target);
    bool empty() const { return adapters_.empty(); }
    size_t size() const { return adapters_.size(); }
    const std::map<std::string, LoraAdapter>& adapters() const { return adapters_; }

    /// All A and B factors in target order.
    std::vector<Tensor> parameters() const;
    /// Sum of r * (d + k) over adapters.
    int64_t parameter_count() const;
    void set_trainable(bool on);

private:
    std::map<std::string, LoraAdapter> adapters_;
};

/// Attaches fresh adapters (A ~ N(0, 0.02^2), B = 0) to each target layer.
LoraSet attach(const LinearHost& model, const std::vector<std::string>& targets, int rank, double scale, Rng& init);

/// base + scale * A B.
Tensor merged_weight(const Tensor& base, const LoraAdapter& ad);

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Dense-matrix route of merged_weight, usable at any precision.
template <class T>
RowMatrix<T> merged_weight(const RowMatrix<T>& base, const RowMatrix<T>& a, const RowMatrix<T>& b, T scale) {
    if (a.rows() != base.rows() || b.cols() != base.cols() || a.cols() != b.rows())
        throw std::invalid_argument("merged_weight: dimension mismatch");
    return base + scale * (a * b);
}

/// Unmerged adapter path: base x + scale * A (B x).
template <class T>
ColVector<T> adapter_forward(const RowMatrix<T>& base, const RowMatrix<T>& a, const RowMatrix<T>& b, T scale,
                             const ColVector<T>& x) {
    if (a.rows() != base.rows() || b.cols() != base.cols() || a.cols() != b.rows() || x.size() != base.cols())
        throw std::invalid_argument("adapter_forward: dimension mismatch");
    return base * x + scale * (a * (b * x));
}

/// Adapter-only checkpoint in the shared archive container.
void save_adapters(const std::string& path, const LoraSet& set);
LoraSet load_adapters(const std::string& path, const LinearHost& model);

}  // namespace medart
