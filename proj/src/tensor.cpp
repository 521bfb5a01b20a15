#include "medart/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace medart {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ']';
    return os.str();
}

std::atomic<int64_t> MemoryStats::live_{0};
std::atomic<int64_t> MemoryStats::peak_{0};

void MemoryStats::add(int64_t bytes) {
    int64_t now = live_.fetch_add(bytes) + bytes;
    int64_t prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
}
void MemoryStats::sub(int64_t bytes) { live_.fetch_sub(bytes); }
int64_t MemoryStats::live() { return live_.load(); }
int64_t MemoryStats::peak() { return peak_.load(); }
void MemoryStats::reset_peak() { peak_.store(live_.load()); }

namespace {
thread_local bool g_grad_enabled = true;

class EnableGradGuard {
public:
    EnableGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(true); }
    ~EnableGradGuard() { GradMode::set_enabled(prev_); }

private:
    bool prev_;
};
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

namespace detail {

Node::Node(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    MemoryStats::add(static_cast<int64_t>(data.size() * sizeof(double)));
}

Node::~Node() {
    MemoryStats::sub(static_cast<int64_t>((data.size() + grad.size()) * sizeof(double)));
}

void Node::ensure_grad() {
    if (grad.empty() && !data.empty()) {
        grad.assign(data.size(), 0.0);
        MemoryStats::add(static_cast<int64_t>(grad.size() * sizeof(double)));
    }
}

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

void release_grad(Node& n) {
    MemoryStats::sub(static_cast<int64_t>(n.grad.size() * sizeof(double)));
    std::vector<double>().swap(n.grad);
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>(std::move(shape), std::move(data));
    if (GradMode::enabled()) {
        bool need = false;
        for (const auto& p : parents) need = need || (p.defined() && p.requires_grad());
        if (need) {
            n->requires_grad = true;
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backward_fn = std::move(fn);
        }
    }
    return Tensor(std::move(n));
}

// Parent i of a node, when it needs a gradient; nullptr otherwise.
Node* grad_target(Node& self, size_t i) {
    if (i >= self.parents.size() || !self.parents[i]) return nullptr;
    Node* p = self.parents[i].get();
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p;
}

void run_backward(const std::vector<NodePtr>& roots) {
    // Iterative post-order DFS so long sampler chains don't overflow the stack.
    std::vector<NodePtr> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<NodePtr, size_t>> stack;
    for (const auto& r : roots) {
        if (!r || visited.count(r.get())) continue;
        visited.insert(r.get());
        stack.emplace_back(r, 0);
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                NodePtr p = node->parents[idx++];
                if (p && p->requires_grad && !visited.count(p.get())) {
                    visited.insert(p.get());
                    stack.emplace_back(std::move(p), 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodePtr& n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            release_grad(*n);
        }
        n.reset();
    }
}

// Returns b's numel when b is a trailing suffix of a's shape.
int64_t suffix_period(const Tensor& a, const Tensor& b, const char* op) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
    if (!ok)
        throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(sb) +
                                    " onto " + shape_str(sa));
    return b.numel();
}

Tensor unary(const Tensor& a, const std::function<double(double)>& f,
             std::function<double(double x, double y)> dfdx) {
    const auto in = a.data();
    std::vector<double> out(in.size());
    for (size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result(a.shape(), std::move(out), {a}, [dfdx = std::move(dfdx)](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.data.size(); ++i)
                p->grad[i] += self.grad[i] * dfdx(p->data[i], self.data[i]);
    });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return from(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    auto n = std::make_shared<Node>(shape, std::move(values));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

const Shape& Tensor::shape() const {
    if (!node_) throw std::logic_error("undefined tensor");
    return node_->shape;
}

int64_t Tensor::dim(int i) const {
    const auto& s = shape();
    if (i < 0) i += static_cast<int>(s.size());
    if (i < 0 || i >= static_cast<int>(s.size())) throw std::out_of_range("tensor dim index");
    return s[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

std::span<double> Tensor::data() { return node_->data; }
std::span<const double> Tensor::data() const { return node_->data; }
std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw std::logic_error("set_requires_grad on non-leaf tensor");
    node_->requires_grad = on;
}

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
}
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
    if (node_) release_grad(*node_);
}

void Tensor::backward() {
    if (numel() != 1) throw std::logic_error("backward() without seed requires a scalar");
    const double one = 1.0;
    backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) { backward_multi({*this}, {seed}); }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

void backward_multi(const std::vector<Tensor>& roots, const std::vector<std::span<const double>>& seeds) {
    if (roots.size() != seeds.size()) throw std::invalid_argument("backward_multi: roots/seeds size mismatch");
    std::vector<NodePtr> nodes;
    for (size_t i = 0; i < roots.size(); ++i) {
        const auto& n = roots[i].node();
        if (!n->requires_grad) continue;
        if (static_cast<int64_t>(seeds[i].size()) != roots[i].numel())
            throw std::invalid_argument("backward seed size mismatch");
        n->ensure_grad();
        for (size_t j = 0; j < seeds[i].size(); ++j) n->grad[j] += seeds[i][j];
        nodes.push_back(n);
    }
    run_backward(nodes);
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    const int64_t period = suffix_period(a, b, "add");
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % static_cast<size_t>(period)];
    return make_result(a.shape(), std::move(out), {a, b}, [period](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        if (Node* p = grad_target(self, 1))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i % static_cast<size_t>(period)] += self.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const int64_t period = suffix_period(a, b, "sub");
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i % static_cast<size_t>(period)];
    return make_result(a.shape(), std::move(out), {a, b}, [period](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        if (Node* p = grad_target(self, 1))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i % static_cast<size_t>(period)] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const int64_t period = suffix_period(a, b, "mul");
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % static_cast<size_t>(period)];
    return make_result(a.shape(), std::move(out), {a, b}, [period](Node& self) {
        const auto per = static_cast<size_t>(period);
        const auto& xa = self.parents[0]->data;
        const auto& yb = self.parents[1]->data;
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * yb[i % per];
        if (Node* p = grad_target(self, 1))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i % per] += self.grad[i] * xa[i];
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    return unary(a, [](double x) { return std::sqrt(x); },
                 [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor gelu(const Tensor& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
        [](double x, double) {
            const double u = k * (x + c * x * x * x);
            const double th = std::tanh(u);
            const double du = k * (1.0 + 3.0 * c * x * x);
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
        });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                 [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor scale_per_sample(const Tensor& a, std::span<const double> coeffs) {
    const int64_t B = a.dim(0);
    if (static_cast<int64_t>(coeffs.size()) != B)
        throw std::invalid_argument("scale_per_sample: expected " + std::to_string(B) + " coefficients");
    const int64_t inner = a.numel() / std::max<int64_t>(B, 1);
    std::vector<double> c(coeffs.begin(), coeffs.end());
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < inner; ++i) out[b * inner + i] = x[b * inner + i] * c[b];
    return make_result(a.shape(), std::move(out), {a}, [c, inner](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c[i / inner];
    });
}

Tensor add_per_sample(const Tensor& x, const Tensor& v) {
    if (x.ndim() != 3 || v.ndim() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(2))
        throw std::invalid_argument("add_per_sample: expected x[B,N,D] and v[B,D], got " +
                                    shape_str(x.shape()) + " and " + shape_str(v.shape()));
    const int64_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
    const auto xd = x.data();
    const auto vd = v.data();
    std::vector<double> out(xd.size());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t d = 0; d < D; ++d) out[(b * N + n) * D + d] = xd[(b * N + n) * D + d] + vd[b * D + d];
    return make_result(x.shape(), std::move(out), {x, v}, [B, N, D](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        if (Node* p = grad_target(self, 1))
            for (int64_t b = 0; b < B; ++b)
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t d = 0; d < D; ++d) p->grad[b * D + d] += self.grad[(b * N + n) * D + d];
    });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a) {
    const auto x = a.data();
    const double s = std::accumulate(x.begin(), x.end(), 0.0);
    return make_result({}, {s}, {a}, [](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (auto& g : p->grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const auto n = static_cast<double>(a.numel());
    const auto x = a.data();
    const double s = std::accumulate(x.begin(), x.end(), 0.0) / n;
    return make_result({}, {s}, {a}, [n](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (auto& g : p->grad) g += self.grad[0] / n;
    });
}

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    return make_result(shape, a.to_vector(), {a}, [](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    });
}

Tensor concat0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat0: no inputs");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    int64_t rows = 0;
    std::vector<double> out;
    std::vector<int64_t> offsets;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail) throw std::invalid_argument("concat0: trailing shape mismatch");
        offsets.push_back(static_cast<int64_t>(out.size()));
        rows += p.dim(0);
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return make_result(shape, std::move(out), parts, [offsets](Node& self) {
        for (size_t k = 0; k < offsets.size(); ++k)
            if (Node* p = grad_target(self, k))
                for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[offsets[k] + i];
    });
}

Tensor slice0(const Tensor& a, int64_t begin, int64_t end) {
    if (a.ndim() < 1 || begin < 0 || end > a.dim(0) || begin >= end)
        throw std::out_of_range("slice0: bad range");
    const int64_t inner = a.numel() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = end - begin;
    std::vector<double> out(a.data().begin() + begin * inner, a.data().begin() + end * inner);
    const int64_t off = begin * inner;
    return make_result(shape, std::move(out), {a}, [off](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[off + i] += self.grad[i];
    });
}

namespace {
// Source index in [B,C,H,W] for each element of the patchified [B, N, C*p*p] layout.
std::vector<int64_t> patch_index(int64_t B, int64_t C, int64_t H, int64_t W, int64_t p) {
    const int64_t nh = H / p, nw = W / p, P = C * p * p;
    std::vector<int64_t> idx(static_cast<size_t>(B * C * H * W));
    size_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t ph = 0; ph < nh; ++ph)
            for (int64_t pw = 0; pw < nw; ++pw)
                for (int64_t f = 0; f < P; ++f) {
                    const int64_t c = f / (p * p), dy = (f / p) % p, dx = f % p;
                    idx[o++] = ((b * C + c) * H + ph * p + dy) * W + pw * p + dx;
                }
    return idx;
}
}  // namespace

Tensor patchify(const Tensor& x, int64_t p) {
    if (x.ndim() != 4) throw std::invalid_argument("patchify: expected [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (p <= 0 || H % p || W % p) throw std::invalid_argument("patchify: size not divisible by patch");
    auto idx = patch_index(B, C, H, W, p);
    const auto xd = x.data();
    std::vector<double> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = xd[idx[i]];
    return make_result({B, (H / p) * (W / p), C * p * p}, std::move(out), {x}, [idx](Node& self) {
        if (Node* q = grad_target(self, 0))
            for (size_t i = 0; i < idx.size(); ++i) q->grad[idx[i]] += self.grad[i];
    });
}

Tensor unpatchify(const Tensor& x, int64_t channels, int64_t height, int64_t width, int64_t p) {
    const int64_t B = x.dim(0);
    if (x.ndim() != 3 || x.dim(1) != (height / p) * (width / p) || x.dim(2) != channels * p * p)
        throw std::invalid_argument("unpatchify: shape " + shape_str(x.shape()) + " incompatible");
    auto idx = patch_index(B, channels, height, width, p);
    const auto xd = x.data();
    std::vector<double> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[idx[i]] = xd[i];
    return make_result({B, channels, height, width}, std::move(out), {x}, [idx](Node& self) {
        if (Node* q = grad_target(self, 0))
            for (size_t i = 0; i < idx.size(); ++i) q->grad[i] += self.grad[idx[i]];
    });
}

// ---- nn ---------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.ndim() != 2) throw std::invalid_argument("linear: weight must be 2-D");
    const int64_t out_f = w.dim(0), in_f = w.dim(1);
    if (x.ndim() < 1 || x.dim(-1) != in_f)
        throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    if (bias.defined() && bias.numel() != out_f) throw std::invalid_argument("linear: bias size");
    const int64_t rows = x.numel() / in_f;
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    std::vector<double> out(static_cast<size_t>(rows * out_f));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * in_f;
        double* yr = out.data() + r * out_f;
        for (int64_t o = 0; o < out_f; ++o) {
            const double* wo = wd + o * in_f;
            double acc = 0.0;
            for (int64_t i = 0; i < in_f; ++i) acc += xr[i] * wo[i];
            yr[o] = acc;
        }
        if (bias.defined()) {
            const double* bd = bias.data().data();
            for (int64_t o = 0; o < out_f; ++o) yr[o] += bd[o];
        }
    }
    Shape shape = x.shape();
    shape.back() = out_f;
    std::vector<Tensor> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    return make_result(shape, std::move(out), parents, [rows, in_f, out_f](Node& self) {
        const double* g = self.grad.data();
        const double* xd = self.parents[0]->data.data();
        const double* wd = self.parents[1]->data.data();
        if (Node* px = grad_target(self, 0)) {
            for (int64_t r = 0; r < rows; ++r) {
                double* gx = px->grad.data() + r * in_f;
                for (int64_t o = 0; o < out_f; ++o) {
                    const double go = g[r * out_f + o];
                    if (go == 0.0) continue;
                    const double* wo = wd + o * in_f;
                    for (int64_t i = 0; i < in_f; ++i) gx[i] += go * wo[i];
                }
            }
        }
        if (Node* pw = grad_target(self, 1)) {
            for (int64_t r = 0; r < rows; ++r) {
                const double* xr = xd + r * in_f;
                for (int64_t o = 0; o < out_f; ++o) {
                    const double go = g[r * out_f + o];
                    if (go == 0.0) continue;
                    double* gw = pw->grad.data() + o * in_f;
                    for (int64_t i = 0; i < in_f; ++i) gw[i] += go * xr[i];
                }
            }
        }
        if (Node* pb = grad_target(self, 2))
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t o = 0; o < out_f; ++o) pb->grad[o] += g[r * out_f + o];
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t n = x.dim(-1);
    if (gamma.numel() != n || beta.numel() != n) throw std::invalid_argument("layer_norm: affine size");
    const int64_t rows = x.numel() / n;
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    std::vector<double> out(xd.size()), xhat(xd.size()), rstd(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (int64_t i = 0; i < n; ++i) mu += xd[r * n + i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d = xd[r * n + i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (int64_t i = 0; i < n; ++i) {
            xhat[r * n + i] = (xd[r * n + i] - mu) * rstd[r];
            out[r * n + i] = xhat[r * n + i] * gd[i] + bd[i];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        const auto& g = self.grad;
        const auto& gm = self.parents[1]->data;
        if (Node* px = grad_target(self, 0)) {
            std::vector<double> gxh(static_cast<size_t>(n));
            for (int64_t r = 0; r < rows; ++r) {
                double s1 = 0.0, s2 = 0.0;
                for (int64_t i = 0; i < n; ++i) {
                    gxh[i] = g[r * n + i] * gm[i];
                    s1 += gxh[i];
                    s2 += gxh[i] * xhat[r * n + i];
                }
                const double k = rstd[r] / static_cast<double>(n);
                for (int64_t i = 0; i < n; ++i)
                    px->grad[r * n + i] += k * (static_cast<double>(n) * gxh[i] - s1 - xhat[r * n + i] * s2);
            }
        }
        if (Node* pg = grad_target(self, 1))
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < n; ++i) pg->grad[i] += g[r * n + i] * xhat[r * n + i];
        if (Node* pb = grad_target(self, 2))
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < n; ++i) pb->grad[i] += g[r * n + i];
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads,
                 std::span<const uint8_t> key_mask) {
    if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3) throw std::invalid_argument("attention: expected 3-D inputs");
    const int64_t B = q.dim(0), Lq = q.dim(1), D = q.dim(2), Lk = k.dim(1);
    if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != D || v.dim(2) != D || v.dim(1) != Lk)
        throw std::invalid_argument("attention: shape mismatch q" + shape_str(q.shape()) + " k" +
                                    shape_str(k.shape()) + " v" + shape_str(v.shape()));
    if (heads <= 0 || D % heads) throw std::invalid_argument("attention: dim not divisible by heads");
    if (!key_mask.empty() && static_cast<int64_t>(key_mask.size()) != B * Lk)
        throw std::invalid_argument("attention: key mask size");
    const int64_t dh = D / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<uint8_t> mask(key_mask.begin(), key_mask.end());
    const auto qd = q.data();
    const auto kd = k.data();
    const auto vd = v.data();
    std::vector<double> out(static_cast<size_t>(B * Lq * D), 0.0);
    std::vector<double> probs(static_cast<size_t>(B * heads * Lq * Lk), 0.0);
    std::vector<double> s(static_cast<size_t>(Lk));
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            for (int64_t i = 0; i < Lq; ++i) {
                const double* qi = qd.data() + (b * Lq + i) * D + h * dh;
                double mx = -INFINITY;
                for (int64_t j = 0; j < Lk; ++j) {
                    if (!mask.empty() && !mask[b * Lk + j]) continue;
                    const double* kj = kd.data() + (b * Lk + j) * D + h * dh;
                    double acc = 0.0;
                    for (int64_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
                    s[j] = acc * inv;
                    mx = std::max(mx, s[j]);
                }
                if (mx == -INFINITY) continue;
                double z = 0.0;
                double* pr = probs.data() + ((b * heads + h) * Lq + i) * Lk;
                for (int64_t j = 0; j < Lk; ++j) {
                    if (!mask.empty() && !mask[b * Lk + j]) continue;
                    pr[j] = std::exp(s[j] - mx);
                    z += pr[j];
                }
                double* oi = out.data() + (b * Lq + i) * D + h * dh;
                for (int64_t j = 0; j < Lk; ++j) {
                    if (pr[j] == 0.0) continue;
                    pr[j] /= z;
                    const double* vj = vd.data() + (b * Lk + j) * D + h * dh;
                    for (int64_t e = 0; e < dh; ++e) oi[e] += pr[j] * vj[e];
                }
            }
        }
    }
    return make_result({B, Lq, D}, std::move(out), {q, k, v},
                       [B, Lq, Lk, D, heads, dh, inv, probs = std::move(probs)](Node& self) {
        const auto& g = self.grad;
        const auto& qd = self.parents[0]->data;
        const auto& kd = self.parents[1]->data;
        const auto& vd = self.parents[2]->data;
        Node* pq = grad_target(self, 0);
        Node* pk = grad_target(self, 1);
        Node* pv = grad_target(self, 2);
        std::vector<double> gp(static_cast<size_t>(Lk));
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t i = 0; i < Lq; ++i) {
                    const double* pr = probs.data() + ((b * heads + h) * Lq + i) * Lk;
                    const double* gi = g.data() + (b * Lq + i) * D + h * dh;
                    double dot = 0.0;
                    for (int64_t j = 0; j < Lk; ++j) {
                        gp[j] = 0.0;
                        if (pr[j] == 0.0) continue;
                        const double* vj = vd.data() + (b * Lk + j) * D + h * dh;
                        double acc = 0.0;
                        for (int64_t e = 0; e < dh; ++e) acc += gi[e] * vj[e];
                        gp[j] = acc;
                        dot += pr[j] * acc;
                        if (pv) {
                            double* gvj = pv->grad.data() + (b * Lk + j) * D + h * dh;
                            for (int64_t e = 0; e < dh; ++e) gvj[e] += pr[j] * gi[e];
                        }
                    }
                    const double* qi = qd.data() + (b * Lq + i) * D + h * dh;
                    for (int64_t j = 0; j < Lk; ++j) {
                        if (pr[j] == 0.0) continue;
                        const double gs = pr[j] * (gp[j] - dot) * inv;
                        const double* kj = kd.data() + (b * Lk + j) * D + h * dh;
                        if (pq) {
                            double* gqi = pq->grad.data() + (b * Lq + i) * D + h * dh;
                            for (int64_t e = 0; e < dh; ++e) gqi[e] += gs * kj[e];
                        }
                        if (pk) {
                            double* gkj = pk->grad.data() + (b * Lk + j) * D + h * dh;
                            for (int64_t e = 0; e < dh; ++e) gkj[e] += gs * qi[e];
                        }
                    }
                }
    });
}

Tensor embedding(const Tensor& table, std::span<const int64_t> ids) {
    if (table.ndim() != 2) throw std::invalid_argument("embedding: table must be 2-D");
    const int64_t V = table.dim(0), D = table.dim(1);
    std::vector<int64_t> idv(ids.begin(), ids.end());
    std::vector<double> out(idv.size() * static_cast<size_t>(D));
    const auto td = table.data();
    for (size_t r = 0; r < idv.size(); ++r) {
        if (idv[r] < 0 || idv[r] >= V) throw std::out_of_range("embedding: id out of range");
        std::copy_n(td.begin() + idv[r] * D, D, out.begin() + static_cast<int64_t>(r) * D);
    }
    return make_result({static_cast<int64_t>(idv.size()), D}, std::move(out), {table}, [idv, D](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t r = 0; r < idv.size(); ++r)
                for (int64_t d = 0; d < D; ++d) p->grad[idv[r] * D + d] += self.grad[r * D + d];
    });
}

std::pair<Tensor, Tensor> channel_mean_std(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("channel_mean_std: expected [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), n = x.dim(2) * x.dim(3);
    const auto xd = x.data();
    std::vector<double> mu(static_cast<size_t>(B * C)), sd(static_cast<size_t>(B * C));
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double x0 = xd[bc * n];
        double shift = 0.0;
        for (int64_t i = 0; i < n; ++i) shift += xd[bc * n + i] - x0;
        const double m = x0 + shift / static_cast<double>(n);
        double v = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d = xd[bc * n + i] - m;
            v += d * d;
        }
        mu[bc] = m;
        sd[bc] = std::sqrt(v / static_cast<double>(n));
    }
    // Both outputs read the same input; each owns its own backward.
    Tensor mu_t = make_result({B, C}, mu, {x}, [n](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t bc = 0; bc < self.grad.size(); ++bc)
                for (int64_t i = 0; i < n; ++i) p->grad[bc * n + i] += self.grad[bc] / static_cast<double>(n);
    });
    Tensor sd_t = make_result({B, C}, sd, {x}, [n, mu](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t bc = 0; bc < self.grad.size(); ++bc) {
                const double s = self.data[bc];
                if (s <= 0.0) continue;
                const double k = self.grad[bc] / (static_cast<double>(n) * s);
                for (int64_t i = 0; i < n; ++i) p->grad[bc * n + i] += k * (p->data[bc * n + i] - mu[bc]);
            }
    });
    return {mu_t, sd_t};
}

// ---- recomputation ----------------------------------------------------------

namespace {
Tensor slice_flat(const Tensor& packed, int64_t offset, const Shape& shape) {
    const int64_t n = shape_numel(shape);
    std::vector<double> out(packed.data().begin() + offset, packed.data().begin() + offset + n);
    return make_result(shape, std::move(out), {packed}, [offset](Node& self) {
        if (Node* p = grad_target(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[offset + i] += self.grad[i];
    });
}
}  // namespace

std::vector<Tensor> checkpoint(const SegmentFn& fn, const std::vector<Tensor>& inputs) {
    for (const auto& t : inputs)
        if (!t.defined()) throw std::invalid_argument("checkpoint: undefined input");
    if (!GradMode::enabled()) return fn(inputs);

    std::vector<Tensor> outs;
    {
        NoGradGuard ng;
        outs = fn(inputs);
    }
    std::vector<Shape> shapes;
    std::vector<int64_t> offsets;
    std::vector<double> packed;
    for (const auto& o : outs) {
        shapes.push_back(o.shape());
        offsets.push_back(static_cast<int64_t>(packed.size()));
        packed.insert(packed.end(), o.data().begin(), o.data().end());
    }
    const int64_t total = static_cast<int64_t>(packed.size());
    outs.clear();

    auto node = std::make_shared<Node>(Shape{total}, std::move(packed));
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = [fn, shapes, offsets](Node& self) {
        EnableGradGuard eg;
        std::vector<Tensor> fresh;
        fresh.reserve(self.parents.size());
        for (const auto& p : self.parents) {
            Tensor t = Tensor::from(p->shape, p->data, p->requires_grad);
            fresh.push_back(t);
        }
        std::vector<Tensor> re = fn(fresh);
        if (re.size() != shapes.size()) throw std::logic_error("checkpoint: recompute changed output count");
        std::vector<Tensor> roots;
        std::vector<std::span<const double>> seeds;
        for (size_t k = 0; k < re.size(); ++k) {
            if (re[k].shape() != shapes[k]) throw std::logic_error("checkpoint: recompute changed output shape");
            roots.push_back(re[k]);
            seeds.emplace_back(self.grad.data() + offsets[k], static_cast<size_t>(shape_numel(shapes[k])));
        }
        backward_multi(roots, seeds);
        for (size_t i = 0; i < fresh.size(); ++i)
            if (Node* p = grad_target(self, i); p && fresh[i].has_grad()) {
                const auto g = fresh[i].grad();
                for (size_t j = 0; j < g.size(); ++j) p->grad[j] += g[j];
            }
    };
    Tensor pack(std::move(node));
    std::vector<Tensor> result;
    for (size_t k = 0; k < shapes.size(); ++k) result.push_back(slice_flat(pack, offsets[k], shapes[k]));
    return result;
}

}  // namespace medart
