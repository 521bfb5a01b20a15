#pragma once

// Minimal reverse-mode autodiff tensor for CPU, 64-bit values.
//
// A Tensor is a shared handle onto a graph node. Ops record their parents and
// a backward closure only while grad mode is enabled and at least one input
// requires a gradient. backward() walks the graph in reverse topological order
// and frees the recorded closures as it goes.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace medart {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Live/peak byte counters over all tensor buffers (values and gradients).
class MemoryStats {
public:
    static void add(int64_t bytes);
    static void sub(int64_t bytes);
    static int64_t live();
    static int64_t peak();
    /// Resets the peak to the current live value.
    static void reset_peak();

private:
    static std::atomic<int64_t> live_;
    static std::atomic<int64_t> peak_;
};

class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    Node(Shape s, std::vector<double> d);
    ~Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    void ensure_grad();
    bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    int64_t dim(int i) const;
    int64_t ndim() const { return static_cast<int64_t>(shape().size()); }
    int64_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    std::vector<double> to_vector() const;
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);

    /// Gradient buffer; empty span when no gradient has been accumulated.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    bool has_grad() const;
    void zero_grad();

    /// Backpropagates from a scalar (seed 1) or with an explicit seed gradient.
    void backward();
    void backward(std::span<const double> seed);

    /// New leaf holding a copy of the values, cut from the graph.
    Tensor detach() const;

    // Internal: used by ops.
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Runs backward from several roots at once, each seeded with its own gradient.
void backward_multi(const std::vector<Tensor>& roots, const std::vector<std::span<const double>>& seeds);

// ---- elementwise / broadcasting ----------------------------------------

/// a + b. b may equal a's shape or be a trailing-suffix of it (broadcast over leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product with the same suffix broadcasting rule as add().
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
/// sqrt with zero subgradient at 0.
Tensor sqrt(const Tensor& a);
Tensor gelu(const Tensor& a);
/// Gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);
/// x[b, ...] * coeffs[b]; coefficients are constants.
Tensor scale_per_sample(const Tensor& a, std::span<const double> coeffs);
/// x[B, N, D] + v[B, D] broadcast over N.
Tensor add_per_sample(const Tensor& x, const Tensor& v);

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- shape --------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape);
/// Concatenate along dim 0; trailing dims must agree.
Tensor concat0(const std::vector<Tensor>& parts);
/// Rows [begin, end) along dim 0.
Tensor slice0(const Tensor& a, int64_t begin, int64_t end);
/// [B, C, H, W] -> [B, (H/p)*(W/p), C*p*p]
Tensor patchify(const Tensor& x, int64_t p);
/// Inverse of patchify.
Tensor unpatchify(const Tensor& x, int64_t channels, int64_t height, int64_t width, int64_t p);

// ---- linear algebra / nn ------------------------------------------------

/// x[..., in] @ w[out, in]^T (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Multi-head scaled dot-product attention. q [B, Lq, D], k/v [B, Lk, D].
/// key_mask (optional, [B*Lk]) excludes keys; a query row with no valid key yields zeros.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads,
                 std::span<const uint8_t> key_mask = {});
/// Rows of table[V, D] gathered by ids -> [ids.size(), D].
Tensor embedding(const Tensor& table, std::span<const int64_t> ids);

/// Per-image per-channel spatial mean and population std of x[B, C, H, W];
/// returns {mu [B, C], sd [B, C]}.
std::pair<Tensor, Tensor> channel_mean_std(const Tensor& x);

// ---- recomputation ------------------------------------------------------

using SegmentFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

/// Runs fn without recording a graph and returns its outputs wired to a single
/// node that re-runs fn under grad mode during backward. Parameters captured by
/// fn receive gradients as if fn had been recorded directly.
std::vector<Tensor> checkpoint(const SegmentFn& fn, const std::vector<Tensor>& inputs);

}  // namespace medart
