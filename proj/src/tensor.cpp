#include "lvd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace lvd {

using detail::Node;

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

static void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

static thread_local bool g_grad_enabled = true;

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor Tensor::zeros(const Shape& s) {
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->v.assign(static_cast<size_t>(shape_numel(s)), 0.0);
    return wrap(n);
}

Tensor Tensor::full(const Shape& s, double value) {
    Tensor t = zeros(s);
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
}

Tensor Tensor::from_data(const Shape& s, std::vector<double> data) {
    check(static_cast<int64_t>(data.size()) == shape_numel(s),
          "from_data: size does not match shape " + shape_str(s));
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->v = std::move(data);
    return wrap(n);
}

Tensor Tensor::param(const Shape& s, std::vector<double> data) {
    Tensor t = from_data(s, std::move(data));
    t.n_->requires_grad = true;
    return t;
}

Tensor Tensor::randn(const Shape& s, RngStream& rng, double stddev) {
    Tensor t = zeros(s);
    for (auto& x : t.vec()) x = rng.gaussian() * stddev;
    return t;
}

double Tensor::item() const {
    check(numel() == 1, "item: tensor is not a scalar");
    return n_->v[0];
}

double* Tensor::grad() {
    n_->ensure_grad();
    return n_->g.data();
}

void Tensor::zero_grad() {
    if (!n_->g.empty()) std::fill(n_->g.begin(), n_->g.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<Node>();
    n->shape = n_->shape;
    n->v = n_->v;
    return wrap(n);
}

void Tensor::backward() {
    check(numel() == 1, "backward: root must be a scalar");
    if (!n_->requires_grad) return;

    // post-order DFS over parent edges, then replay reversed
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        size_t next;
    };
    std::vector<Frame> stack{{n_.get(), 0}};
    seen.insert(n_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    n_->ensure_grad();
    n_->g[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// Builds the output node; wires autodiff only when enabled and some parent needs it.
static Tensor make_node(Shape shape, std::vector<double> v,
                        std::vector<std::shared_ptr<Node>> parents,
                        std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->v = std::move(v);
    if (g_grad_enabled) {
        bool rg = false;
        for (const auto& p : parents)
            if (p->requires_grad) rg = true;
        if (rg) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward = std::move(backward);
        }
    }
    return Tensor::wrap(n);
}

// ---------------------------------------------------------------------------
// gemm kernels (C is accumulated into)
// ---------------------------------------------------------------------------

// C[M,N] += A[M,K] * B[K,N]
static void gemm_nn(const double* A, const double* B, double* C, int64_t M, int64_t K,
                    int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (int64_t p = 0; p < K; ++p) {
            double av = a[p];
            const double* b = B + p * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,K] += A[M,N] * B[K,N]^T
static void gemm_nt(const double* A, const double* B, double* C, int64_t M, int64_t N,
                    int64_t K) {
    for (int64_t i = 0; i < M; ++i) {
        const double* a = A + i * N;
        double* c = C + i * K;
        for (int64_t j = 0; j < K; ++j) {
            const double* b = B + j * N;
            double acc = 0.0;
            for (int64_t p = 0; p < N; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
static void gemm_tn(const double* A, const double* B, double* C, int64_t M, int64_t K,
                    int64_t N) {
    for (int64_t p = 0; p < M; ++p) {
        const double* a = A + p * K;
        const double* b = B + p * N;
        for (int64_t i = 0; i < K; ++i) {
            double av = a[i];
            double* c = C + i * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.vec());
    const double* pb = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] += pb[i];
    auto na = a.node(), nb = b.node();
    return make_node(a.shape(), std::move(v), {na, nb}, [na, nb](Node& n) {
        if (na->requires_grad) {
            na->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) na->g[i] += n.g[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) nb->g[i] += n.g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.vec());
    const double* pb = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= pb[i];
    auto na = a.node(), nb = b.node();
    return make_node(a.shape(), std::move(v), {na, nb}, [na, nb](Node& n) {
        if (na->requires_grad) {
            na->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) na->g[i] += n.g[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) nb->g[i] -= n.g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.vec());
    const double* pb = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= pb[i];
    auto na = a.node(), nb = b.node();
    return make_node(a.shape(), std::move(v), {na, nb}, [na, nb](Node& n) {
        if (na->requires_grad) {
            na->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) na->g[i] += n.g[i] * nb->v[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) nb->g[i] += n.g[i] * na->v[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.vec());
    for (auto& x : v) x *= s;
    auto na = a.node();
    return make_node(a.shape(), std::move(v), {na}, [na, s](Node& n) {
        na->ensure_grad();
        for (size_t i = 0; i < n.g.size(); ++i) na->g[i] += n.g[i] * s;
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.vec());
    for (auto& x : v) x += s;
    auto na = a.node();
    return make_node(a.shape(), std::move(v), {na}, [na](Node& n) {
        na->ensure_grad();
        for (size_t i = 0; i < n.g.size(); ++i) na->g[i] += n.g[i];
    });
}

Tensor silu(const Tensor& a) {
    std::vector<double> v(a.vec().size());
    const double* pa = a.data();
    for (size_t i = 0; i < v.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-pa[i]));
        v[i] = pa[i] * s;
    }
    auto na = a.node();
    return make_node(a.shape(), std::move(v), {na}, [na](Node& n) {
        na->ensure_grad();
        for (size_t i = 0; i < n.g.size(); ++i) {
            double x = na->v[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            na->g[i] += n.g[i] * (s * (1.0 + x * (1.0 - s)));
        }
    });
}

Tensor gelu(const Tensor& a) {
    static const double inv_sqrt2 = 0.7071067811865475244;
    static const double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<double> v(a.vec().size());
    const double* pa = a.data();
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * inv_sqrt2));
    auto na = a.node();
    return make_node(a.shape(), std::move(v), {na}, [na](Node& n) {
        na->ensure_grad();
        for (size_t i = 0; i < n.g.size(); ++i) {
            double x = na->v[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            na->g[i] += n.g[i] * (cdf + x * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& s) {
    check(shape_numel(s) == a.numel(),
          "reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(s));
    std::vector<double> v(a.vec());
    auto na = a.node();
    return make_node(s, std::move(v), {na}, [na](Node& n) {
        na->ensure_grad();
        for (size_t i = 0; i < n.g.size(); ++i) na->g[i] += n.g[i];
    });
}

static std::vector<int64_t> contiguous_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    const int r = a.rank();
    check(static_cast<int>(axes.size()) == r, "permute: axes rank mismatch");
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = a.dim(axes[i]);
    auto in_strides = contiguous_strides(a.shape());
    // stride of input walked in output order
    std::vector<int64_t> walk(r);
    for (int i = 0; i < r; ++i) walk[i] = in_strides[axes[i]];

    auto gather = [&](const double* src, double* dst) {
        std::vector<int64_t> idx(r, 0);
        int64_t total = shape_numel(out_shape);
        int64_t src_off = 0;
        for (int64_t o = 0; o < total; ++o) {
            dst[o] = src[src_off];
            for (int d = r - 1; d >= 0; --d) {
                idx[d]++;
                src_off += walk[d];
                if (idx[d] < out_shape[d]) break;
                src_off -= walk[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    };

    std::vector<double> v(a.numel());
    gather(a.data(), v.data());
    auto na = a.node();
    return make_node(out_shape, std::move(v), {na}, [na, out_shape, walk, r](Node& n) {
        na->ensure_grad();
        std::vector<int64_t> idx(r, 0);
        int64_t src_off = 0;
        int64_t total = n.numel();
        for (int64_t o = 0; o < total; ++o) {
            na->g[src_off] += n.g[o];
            for (int d = r - 1; d >= 0; --d) {
                idx[d]++;
                src_off += walk[d];
                if (idx[d] < out_shape[d]) break;
                src_off -= walk[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    });
}

Tensor transpose2d(const Tensor& a) {
    check(a.rank() == 2, "transpose2d: rank-2 required");
    return permute(a, {1, 0});
}

Tensor concat(const std::vector<Tensor>& ts, int axis) {
    check(!ts.empty(), "concat: empty input");
    const int r = ts[0].rank();
    check(axis >= 0 && axis < r, "concat: bad axis");
    int64_t cat = 0;
    for (const auto& t : ts) {
        check(t.rank() == r, "concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis)
                check(t.dim(d) == ts[0].dim(d), "concat: shape mismatch off-axis");
        cat += t.dim(axis);
    }
    Shape out_shape = ts[0].shape();
    out_shape[axis] = cat;

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    for (int d = axis + 1; d < r; ++d) inner *= out_shape[d];

    std::vector<double> v(shape_numel(out_shape));
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<int64_t> sizes;
    int64_t off = 0;
    for (const auto& t : ts) {
        int64_t block = t.dim(axis) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(v.data() + o * cat * inner + off, t.data() + o * block,
                        block * sizeof(double));
        off += block;
        parents.push_back(t.node());
        sizes.push_back(block);
    }
    auto ps = parents;
    return make_node(out_shape, std::move(v), std::move(parents),
                     [ps, sizes, outer, cat, inner](Node& n) {
                         int64_t off = 0;
                         for (size_t k = 0; k < ps.size(); ++k) {
                             if (ps[k]->requires_grad) {
                                 ps[k]->ensure_grad();
                                 for (int64_t o = 0; o < outer; ++o) {
                                     const double* src = n.g.data() + o * cat * inner + off;
                                     double* dst = ps[k]->g.data() + o * sizes[k];
                                     for (int64_t i = 0; i < sizes[k]; ++i) dst[i] += src[i];
                                 }
                             }
                             off += sizes[k];
                         }
                     });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    const int r = a.rank();
    check(axis >= 0 && axis < r, "slice: bad axis");
    check(start >= 0 && len >= 0 && start + len <= a.dim(axis), "slice: bad range");
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < r; ++d) inner *= a.dim(d);
    int64_t in_block = a.dim(axis) * inner;
    int64_t out_block = len * inner;

    std::vector<double> v(shape_numel(out_shape));
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(v.data() + o * out_block, a.data() + o * in_block + start * inner,
                    out_block * sizeof(double));
    auto na = a.node();
    return make_node(out_shape, std::move(v), {na},
                     [na, outer, in_block, out_block, start, inner](Node& n) {
                         na->ensure_grad();
                         for (int64_t o = 0; o < outer; ++o) {
                             const double* src = n.g.data() + o * out_block;
                             double* dst = na->g.data() + o * in_block + start * inner;
                             for (int64_t i = 0; i < out_block; ++i) dst[i] += src[i];
                         }
                     });
}

Tensor stack0(const std::vector<Tensor>& ts) {
    check(!ts.empty(), "stack0: empty input");
    std::vector<Tensor> rows;
    rows.reserve(ts.size());
    for (const auto& t : ts) {
        Shape s = t.shape();
        s.insert(s.begin(), 1);
        rows.push_back(reshape(t, s));
    }
    return concat(rows, 0);
}

Tensor repeat_interleave0(const Tensor& a, int64_t times) {
    check(times >= 1, "repeat_interleave0: times must be >= 1");
    int64_t m = a.dim(0);
    int64_t block = a.numel() / m;
    Shape out_shape = a.shape();
    out_shape[0] = m * times;
    std::vector<double> v(a.numel() * times);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t t = 0; t < times; ++t)
            std::memcpy(v.data() + (i * times + t) * block, a.data() + i * block,
                        block * sizeof(double));
    auto na = a.node();
    return make_node(out_shape, std::move(v), {na}, [na, m, times, block](Node& n) {
        na->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t t = 0; t < times; ++t) {
                const double* src = n.g.data() + (i * times + t) * block;
                double* dst = na->g.data() + i * block;
                for (int64_t j = 0; j < block; ++j) dst[j] += src[j];
            }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 required");
    check(a.dim(1) == b.dim(0), "matmul: inner dim mismatch " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    int64_t m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    std::vector<double> v(static_cast<size_t>(m * n2), 0.0);
    gemm_nn(a.data(), b.data(), v.data(), m, k, n2);
    auto na = a.node(), nb = b.node();
    return make_node({m, n2}, std::move(v), {na, nb}, [na, nb, m, k, n2](Node& n) {
        if (na->requires_grad) {
            na->ensure_grad();
            gemm_nt(n.g.data(), nb->v.data(), na->g.data(), m, n2, k);
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            gemm_tn(na->v.data(), n.g.data(), nb->g.data(), m, k, n2);
        }
    });
}

// rows of x (leading dims flattened) against w:[in,out], optional bias
static Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
    check(w.rank() == 2, "linear: weight must be rank-2");
    int64_t in = w.dim(0), out = w.dim(1);
    check(x.dim(x.rank() - 1) == in, "linear: input width " +
                                         std::to_string(x.dim(x.rank() - 1)) +
                                         " != weight in " + std::to_string(in));
    int64_t rows = x.numel() / in;
    if (b) check(b->rank() == 1 && b->dim(0) == out, "linear: bad bias shape");

    std::vector<double> v(static_cast<size_t>(rows * out), 0.0);
    if (b) {
        const double* pb = b->data();
        for (int64_t i = 0; i < rows; ++i)
            std::memcpy(v.data() + i * out, pb, out * sizeof(double));
    }
    gemm_nn(x.data(), w.data(), v.data(), rows, in, out);

    Shape out_shape = x.shape();
    out_shape.back() = out;
    auto nx = x.node(), nw = w.node();
    std::shared_ptr<Node> nb = b ? b->node() : nullptr;
    std::vector<std::shared_ptr<Node>> parents{nx, nw};
    if (nb) parents.push_back(nb);
    return make_node(out_shape, std::move(v), std::move(parents),
                     [nx, nw, nb, rows, in, out](Node& n) {
                         if (nx->requires_grad) {
                             nx->ensure_grad();
                             gemm_nt(n.g.data(), nw->v.data(), nx->g.data(), rows, out, in);
                         }
                         if (nw->requires_grad) {
                             nw->ensure_grad();
                             gemm_tn(nx->v.data(), n.g.data(), nw->g.data(), rows, in, out);
                         }
                         if (nb && nb->requires_grad) {
                             nb->ensure_grad();
                             for (int64_t i = 0; i < rows; ++i) {
                                 const double* src = n.g.data() + i * out;
                                 for (int64_t j = 0; j < out; ++j) nb->g[j] += src[j];
                             }
                         }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return linear_impl(x, w, &b);
}

Tensor matmul_nobias(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    check(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention: rank-3 required");
    int64_t B = q.dim(0), Nq = q.dim(1), D = q.dim(2);
    int64_t Nk = k.dim(1);
    check(k.dim(0) == B && v.dim(0) == B, "attention: batch mismatch");
    check(k.dim(2) == D && v.dim(2) == D, "attention: width mismatch");
    check(v.dim(1) == Nk, "attention: key/value count mismatch");
    check(heads >= 1 && D % heads == 0, "attention: heads must divide width");
    int64_t dh = D / heads;
    double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

    // split to contiguous [B,h,N,dh]
    auto split = [&](const double* src, int64_t N) {
        std::vector<double> dst(static_cast<size_t>(B * heads * N * dh));
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < N; ++i)
                for (int64_t h = 0; h < heads; ++h)
                    std::memcpy(dst.data() + (((b * heads + h) * N) + i) * dh,
                                src + (b * N + i) * D + h * dh, dh * sizeof(double));
        return dst;
    };
    auto qh = std::make_shared<std::vector<double>>(split(q.data(), Nq));
    auto kh = std::make_shared<std::vector<double>>(split(k.data(), Nk));
    auto vh = std::make_shared<std::vector<double>>(split(v.data(), Nk));
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<size_t>(B * heads * Nq * Nk), 0.0);

    std::vector<double> oh(static_cast<size_t>(B * heads * Nq * dh), 0.0);
    for (int64_t bh = 0; bh < B * heads; ++bh) {
        const double* qb = qh->data() + bh * Nq * dh;
        const double* kb = kh->data() + bh * Nk * dh;
        const double* vb = vh->data() + bh * Nk * dh;
        double* pb = probs->data() + bh * Nq * Nk;
        double* ob = oh.data() + bh * Nq * dh;
        gemm_nt(qb, kb, pb, Nq, dh, Nk);
        for (int64_t i = 0; i < Nq; ++i) {
            double* row = pb + i * Nk;
            double mx = row[0] * alpha;
            for (int64_t j = 0; j < Nk; ++j) mx = std::max(mx, row[j] * alpha);
            double sumexp = 0.0;
            for (int64_t j = 0; j < Nk; ++j) {
                row[j] = std::exp(row[j] * alpha - mx);
                sumexp += row[j];
            }
            double inv = 1.0 / sumexp;
            for (int64_t j = 0; j < Nk; ++j) row[j] *= inv;
        }
        gemm_nn(pb, vb, ob, Nq, Nk, dh);
    }

    // merge heads back to [B,Nq,D]
    std::vector<double> out(static_cast<size_t>(B * Nq * D));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < Nq; ++i)
            for (int64_t h = 0; h < heads; ++h)
                std::memcpy(out.data() + (b * Nq + i) * D + h * dh,
                            oh.data() + (((b * heads + h) * Nq) + i) * dh,
                            dh * sizeof(double));

    auto nq = q.node(), nk = k.node(), nv = v.node();
    int64_t H = heads;
    return make_node(
        {B, Nq, D}, std::move(out), {nq, nk, nv},
        [nq, nk, nv, qh, kh, vh, probs, B, Nq, Nk, D, H, dh, alpha](Node& n) {
            // split upstream grad per head
            std::vector<double> doh(static_cast<size_t>(B * H * Nq * dh));
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < Nq; ++i)
                    for (int64_t h = 0; h < H; ++h)
                        std::memcpy(doh.data() + (((b * H + h) * Nq) + i) * dh,
                                    n.g.data() + (b * Nq + i) * D + h * dh,
                                    dh * sizeof(double));
            std::vector<double> dqh(static_cast<size_t>(B * H * Nq * dh), 0.0);
            std::vector<double> dkh(static_cast<size_t>(B * H * Nk * dh), 0.0);
            std::vector<double> dvh(static_cast<size_t>(B * H * Nk * dh), 0.0);
            std::vector<double> dP(static_cast<size_t>(Nq * Nk));
            for (int64_t bh = 0; bh < B * H; ++bh) {
                const double* qb = qh->data() + bh * Nq * dh;
                const double* kb = kh->data() + bh * Nk * dh;
                const double* vb = vh->data() + bh * Nk * dh;
                const double* pb = probs->data() + bh * Nq * Nk;
                const double* dob = doh.data() + bh * Nq * dh;
                std::fill(dP.begin(), dP.end(), 0.0);
                gemm_nt(dob, vb, dP.data(), Nq, dh, Nk);       // dP = dO V^T
                gemm_tn(pb, dob, dvh.data() + bh * Nk * dh, Nq, Nk, dh);  // dV = P^T dO
                // softmax backward in place: dS = P o (dP - rowdot(dP,P)), then *alpha
                for (int64_t i = 0; i < Nq; ++i) {
                    const double* prow = pb + i * Nk;
                    double* drow = dP.data() + i * Nk;
                    double dot = 0.0;
                    for (int64_t j = 0; j < Nk; ++j) dot += drow[j] * prow[j];
                    for (int64_t j = 0; j < Nk; ++j)
                        drow[j] = prow[j] * (drow[j] - dot) * alpha;
                }
                gemm_nn(dP.data(), kb, dqh.data() + bh * Nq * dh, Nq, Nk, dh);  // dQ = dS K
                gemm_tn(dP.data(), qb, dkh.data() + bh * Nk * dh, Nq, Nk, dh);  // dK = dS^T Q
            }
            auto merge_acc = [&](const std::vector<double>& src, Node* dst, int64_t N) {
                dst->ensure_grad();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < N; ++i)
                        for (int64_t h = 0; h < H; ++h) {
                            const double* s = src.data() + (((b * H + h) * N) + i) * dh;
                            double* d = dst->g.data() + (b * N + i) * D + h * dh;
                            for (int64_t j = 0; j < dh; ++j) d[j] += s[j];
                        }
            };
            if (nq->requires_grad) merge_acc(dqh, nq.get(), Nq);
            if (nk->requires_grad) merge_acc(dkh, nk.get(), Nk);
            if (nv->requires_grad) merge_acc(dvh, nv.get(), Nk);
        });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    check(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention: rank-2 required");
    check(q.dim(1) == k.dim(1), "attention: Q/K width mismatch");
    check(k.dim(0) == v.dim(0), "attention: K/V row mismatch");
    check(v.dim(1) == q.dim(1), "attention: V width mismatch");
    Tensor q3 = reshape(q, {1, q.dim(0), q.dim(1)});
    Tensor k3 = reshape(k, {1, k.dim(0), k.dim(1)});
    Tensor v3 = reshape(v, {1, v.dim(0), v.dim(1)});
    Tensor o = multihead_attention(q3, k3, v3, 1);
    return reshape(o, {q.dim(0), q.dim(1)});
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check(x.rank() == 4, "conv2d: input must be [N,C,H,W]");
    check(w.rank() == 4, "conv2d: weight must be [OC,IC,kh,kw]");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    check(w.dim(1) == C, "conv2d: channel mismatch");
    check(b.rank() == 1 && b.dim(0) == OC, "conv2d: bad bias");
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    int64_t OH = (H + 2 * pad - KH) / stride + 1;
    int64_t OW = (W + 2 * pad - KW) / stride + 1;
    check(OH >= 1 && OW >= 1, "conv2d: output collapses to zero");

    std::vector<double> v(static_cast<size_t>(N * OC * OH * OW));
    {
        const double* pb = b.data();
        for (int64_t n0 = 0; n0 < N; ++n0)
            for (int64_t oc = 0; oc < OC; ++oc)
                std::fill(v.begin() + (n0 * OC + oc) * OH * OW,
                          v.begin() + (n0 * OC + oc + 1) * OH * OW, pb[oc]);
    }
    // valid output ranges per kernel offset, so inner loops run branch-free
    auto lo_of = [&](int64_t k) {
        int64_t lo = 0;
        while (lo * stride + k - pad < 0) ++lo;
        return lo;
    };
    auto hi_of = [&](int64_t k, int64_t limit, int64_t in_limit) {
        int64_t hi = limit;
        while (hi > 0 && (hi - 1) * stride + k - pad >= in_limit) --hi;
        return hi;
    };
    std::vector<int64_t> oy_lo(KH), oy_hi(KH), ox_lo(KW), ox_hi(KW);
    for (int64_t ky = 0; ky < KH; ++ky) {
        oy_lo[ky] = lo_of(ky);
        oy_hi[ky] = hi_of(ky, OH, H);
    }
    for (int64_t kx = 0; kx < KW; ++kx) {
        ox_lo[kx] = lo_of(kx);
        ox_hi[kx] = hi_of(kx, OW, W);
    }

    const double* px = x.data();
    const double* pw = w.data();
    for (int64_t n0 = 0; n0 < N; ++n0)
        for (int64_t oc = 0; oc < OC; ++oc) {
            double* out_plane = v.data() + (n0 * OC + oc) * OH * OW;
            for (int64_t ic = 0; ic < C; ++ic) {
                const double* in_plane = px + (n0 * C + ic) * H * W;
                for (int64_t ky = 0; ky < KH; ++ky)
                    for (int64_t kx = 0; kx < KW; ++kx) {
                        double wv = pw[((oc * C + ic) * KH + ky) * KW + kx];
                        for (int64_t oy = oy_lo[ky]; oy < oy_hi[ky]; ++oy) {
                            const double* in_row =
                                in_plane + (oy * stride + ky - pad) * W + kx - pad;
                            double* out_row = out_plane + oy * OW;
                            if (stride == 1) {
                                for (int64_t ox = ox_lo[kx]; ox < ox_hi[kx]; ++ox)
                                    out_row[ox] += wv * in_row[ox];
                            } else {
                                for (int64_t ox = ox_lo[kx]; ox < ox_hi[kx]; ++ox)
                                    out_row[ox] += wv * in_row[ox * stride];
                            }
                        }
                    }
            }
        }

    auto nx = x.node(), nw = w.node(), nb = b.node();
    return make_node(
        {N, OC, OH, OW}, std::move(v), {nx, nw, nb},
        [nx, nw, nb, N, C, H, W, OC, KH, KW, OH, OW, stride, pad, oy_lo, oy_hi, ox_lo,
         ox_hi](Node& n) {
            const double* pg = n.g.data();
            if (nb->requires_grad) {
                nb->ensure_grad();
                for (int64_t n0 = 0; n0 < N; ++n0)
                    for (int64_t oc = 0; oc < OC; ++oc) {
                        const double* gp = pg + (n0 * OC + oc) * OH * OW;
                        double acc = 0.0;
                        for (int64_t i = 0; i < OH * OW; ++i) acc += gp[i];
                        nb->g[oc] += acc;
                    }
            }
            if (nx->requires_grad) {
                nx->ensure_grad();
                const double* pw = nw->v.data();
                for (int64_t n0 = 0; n0 < N; ++n0)
                    for (int64_t oc = 0; oc < OC; ++oc) {
                        const double* gp = pg + (n0 * OC + oc) * OH * OW;
                        for (int64_t ic = 0; ic < C; ++ic) {
                            double* dx_plane = nx->g.data() + (n0 * C + ic) * H * W;
                            for (int64_t ky = 0; ky < KH; ++ky)
                                for (int64_t kx = 0; kx < KW; ++kx) {
                                    double wv = pw[((oc * C + ic) * KH + ky) * KW + kx];
                                    for (int64_t oy = oy_lo[ky]; oy < oy_hi[ky]; ++oy) {
                                        double* dx_row = dx_plane +
                                                         (oy * stride + ky - pad) * W +
                                                         kx - pad;
                                        const double* g_row = gp + oy * OW;
                                        for (int64_t ox = ox_lo[kx]; ox < ox_hi[kx]; ++ox)
                                            dx_row[ox * stride] += wv * g_row[ox];
                                    }
                                }
                        }
                    }
            }
            if (nw->requires_grad) {
                nw->ensure_grad();
                const double* px = nx->v.data();
                for (int64_t n0 = 0; n0 < N; ++n0)
                    for (int64_t oc = 0; oc < OC; ++oc) {
                        const double* gp = pg + (n0 * OC + oc) * OH * OW;
                        for (int64_t ic = 0; ic < C; ++ic) {
                            const double* in_plane = px + (n0 * C + ic) * H * W;
                            for (int64_t ky = 0; ky < KH; ++ky)
                                for (int64_t kx = 0; kx < KW; ++kx) {
                                    double acc = 0.0;
                                    for (int64_t oy = oy_lo[ky]; oy < oy_hi[ky]; ++oy) {
                                        const double* in_row =
                                            in_plane + (oy * stride + ky - pad) * W + kx -
                                            pad;
                                        const double* g_row = gp + oy * OW;
                                        for (int64_t ox = ox_lo[kx]; ox < ox_hi[kx]; ++ox)
                                            acc += in_row[ox * stride] * g_row[ox];
                                    }
                                    nw->g[((oc * C + ic) * KH + ky) * KW + kx] += acc;
                                }
                        }
                    }
            }
        });
}

Tensor upsample_nearest2x(const Tensor& x) {
    check(x.rank() == 4, "upsample: input must be [N,C,H,W]");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<double> v(static_cast<size_t>(N * C * 4 * H * W));
    const double* px = x.data();
    for (int64_t p = 0; p < N * C; ++p) {
        const double* in_plane = px + p * H * W;
        double* out_plane = v.data() + p * 4 * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x0 = 0; x0 < W; ++x0) {
                double val = in_plane[y * W + x0];
                double* o = out_plane + (2 * y) * (2 * W) + 2 * x0;
                o[0] = val;
                o[1] = val;
                o[2 * W] = val;
                o[2 * W + 1] = val;
            }
    }
    auto nx = x.node();
    return make_node({N, C, 2 * H, 2 * W}, std::move(v), {nx}, [nx, N, C, H, W](Node& n) {
        nx->ensure_grad();
        for (int64_t p = 0; p < N * C; ++p) {
            double* dx_plane = nx->g.data() + p * H * W;
            const double* g_plane = n.g.data() + p * 4 * H * W;
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x0 = 0; x0 < W; ++x0) {
                    const double* g = g_plane + (2 * y) * (2 * W) + 2 * x0;
                    dx_plane[y * W + x0] += g[0] + g[1] + g[2 * W] + g[2 * W + 1];
                }
        }
    });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps) {
    check(x.rank() == 4, "group_norm: input must be [N,C,H,W]");
    int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    check(groups >= 1 && C % groups == 0, "group_norm: groups must divide channels");
    check(gamma.rank() == 1 && gamma.dim(0) == C, "group_norm: bad gamma");
    check(beta.rank() == 1 && beta.dim(0) == C, "group_norm: bad beta");
    int64_t cpg = C / groups;
    int64_t m = cpg * HW;

    auto xhat = std::make_shared<std::vector<double>>(x.vec().size());
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(N * groups));
    std::vector<double> v(x.vec().size());
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int64_t n0 = 0; n0 < N; ++n0)
        for (int64_t g = 0; g < groups; ++g) {
            const double* base = px + (n0 * C + g * cpg) * HW;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += base[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = base[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            double inv = 1.0 / std::sqrt(var + eps);
            (*invstd)[n0 * groups + g] = inv;
            double* xh = xhat->data() + (n0 * C + g * cpg) * HW;
            double* out = v.data() + (n0 * C + g * cpg) * HW;
            for (int64_t c = 0; c < cpg; ++c) {
                double ga = pg[g * cpg + c], be = pb[g * cpg + c];
                for (int64_t i = 0; i < HW; ++i) {
                    double h = (base[c * HW + i] - mean) * inv;
                    xh[c * HW + i] = h;
                    out[c * HW + i] = ga * h + be;
                }
            }
        }

    auto nx = x.node(), ng = gamma.node(), nb = beta.node();
    int64_t G = groups;
    return make_node(
        x.shape(), std::move(v), {nx, ng, nb},
        [nx, ng, nb, xhat, invstd, N, C, HW, G, cpg, m](Node& n) {
            const double* gout = n.g.data();
            if (ng->requires_grad) {
                ng->ensure_grad();
                for (int64_t n0 = 0; n0 < N; ++n0)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* go = gout + (n0 * C + c) * HW;
                        const double* xh = xhat->data() + (n0 * C + c) * HW;
                        double acc = 0.0;
                        for (int64_t i = 0; i < HW; ++i) acc += go[i] * xh[i];
                        ng->g[c] += acc;
                    }
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                for (int64_t n0 = 0; n0 < N; ++n0)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* go = gout + (n0 * C + c) * HW;
                        double acc = 0.0;
                        for (int64_t i = 0; i < HW; ++i) acc += go[i];
                        nb->g[c] += acc;
                    }
            }
            if (nx->requires_grad) {
                nx->ensure_grad();
                const double* pgm = ng->v.data();
                for (int64_t n0 = 0; n0 < N; ++n0)
                    for (int64_t g = 0; g < G; ++g) {
                        const double* go = gout + (n0 * C + g * cpg) * HW;
                        const double* xh = xhat->data() + (n0 * C + g * cpg) * HW;
                        double inv = (*invstd)[n0 * G + g];
                        double s1 = 0.0, s2 = 0.0;
                        for (int64_t c = 0; c < cpg; ++c) {
                            double ga = pgm[g * cpg + c];
                            for (int64_t i = 0; i < HW; ++i) {
                                double dxh = go[c * HW + i] * ga;
                                s1 += dxh;
                                s2 += dxh * xh[c * HW + i];
                            }
                        }
                        double invm = 1.0 / static_cast<double>(m);
                        double* dx = nx->g.data() + (n0 * C + g * cpg) * HW;
                        for (int64_t c = 0; c < cpg; ++c) {
                            double ga = pgm[g * cpg + c];
                            for (int64_t i = 0; i < HW; ++i) {
                                double dxh = go[c * HW + i] * ga;
                                dx[c * HW + i] +=
                                    inv * (dxh - invm * (s1 + xh[c * HW + i] * s2));
                            }
                        }
                    }
            }
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    int64_t D = x.dim(x.rank() - 1);
    check(gamma.rank() == 1 && gamma.dim(0) == D, "layer_norm: bad gamma");
    check(beta.rank() == 1 && beta.dim(0) == D, "layer_norm: bad beta");
    int64_t rows = x.numel() / D;

    auto xhat = std::make_shared<std::vector<double>>(x.vec().size());
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    std::vector<double> v(x.vec().size());
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* base = px + r * D;
        double mean = 0.0;
        for (int64_t i = 0; i < D; ++i) mean += base[i];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t i = 0; i < D; ++i) {
            double d = base[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(D);
        double inv = 1.0 / std::sqrt(var + eps);
        (*invstd)[r] = inv;
        double* xh = xhat->data() + r * D;
        double* out = v.data() + r * D;
        for (int64_t i = 0; i < D; ++i) {
            double h = (base[i] - mean) * inv;
            xh[i] = h;
            out[i] = pg[i] * h + pb[i];
        }
    }

    auto nx = x.node(), ng = gamma.node(), nb = beta.node();
    return make_node(x.shape(), std::move(v), {nx, ng, nb},
                     [nx, ng, nb, xhat, invstd, rows, D](Node& n) {
                         const double* gout = n.g.data();
                         if (ng->requires_grad) {
                             ng->ensure_grad();
                             for (int64_t r = 0; r < rows; ++r) {
                                 const double* go = gout + r * D;
                                 const double* xh = xhat->data() + r * D;
                                 for (int64_t i = 0; i < D; ++i) ng->g[i] += go[i] * xh[i];
                             }
                         }
                         if (nb->requires_grad) {
                             nb->ensure_grad();
                             for (int64_t r = 0; r < rows; ++r) {
                                 const double* go = gout + r * D;
                                 for (int64_t i = 0; i < D; ++i) nb->g[i] += go[i];
                             }
                         }
                         if (nx->requires_grad) {
                             nx->ensure_grad();
                             const double* pgm = ng->v.data();
                             for (int64_t r = 0; r < rows; ++r) {
                                 const double* go = gout + r * D;
                                 const double* xh = xhat->data() + r * D;
                                 double inv = (*invstd)[r];
                                 double s1 = 0.0, s2 = 0.0;
                                 for (int64_t i = 0; i < D; ++i) {
                                     double dxh = go[i] * pgm[i];
                                     s1 += dxh;
                                     s2 += dxh * xh[i];
                                 }
                                 double invd = 1.0 / static_cast<double>(D);
                                 double* dx = nx->g.data() + r * D;
                                 for (int64_t i = 0; i < D; ++i) {
                                     double dxh = go[i] * pgm[i];
                                     dx[i] += inv * (dxh - invd * (s1 + xh[i] * s2));
                                 }
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// broadcast helpers
// ---------------------------------------------------------------------------

Tensor add_channel_vec(const Tensor& x, const Tensor& v) {
    check(x.rank() == 4, "add_channel_vec: x must be [N,C,H,W]");
    check(v.rank() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1),
          "add_channel_vec: v must be [N,C]");
    int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(x.vec());
    const double* pv = v.data();
    for (int64_t n0 = 0; n0 < N; ++n0)
        for (int64_t c = 0; c < C; ++c) {
            double add = pv[n0 * C + c];
            double* o = out.data() + (n0 * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) o[i] += add;
        }
    auto nx = x.node(), nv = v.node();
    return make_node(x.shape(), std::move(out), {nx, nv}, [nx, nv, N, C, HW](Node& n) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) nx->g[i] += n.g[i];
        }
        if (nv->requires_grad) {
            nv->ensure_grad();
            for (int64_t n0 = 0; n0 < N; ++n0)
                for (int64_t c = 0; c < C; ++c) {
                    const double* go = n.g.data() + (n0 * C + c) * HW;
                    double acc = 0.0;
                    for (int64_t i = 0; i < HW; ++i) acc += go[i];
                    nv->g[n0 * C + c] += acc;
                }
        }
    });
}

Tensor add_bias_rows(const Tensor& x, const Tensor& b) {
    int64_t D = x.dim(x.rank() - 1);
    check(b.rank() == 1 && b.dim(0) == D, "add_bias_rows: bad bias");
    int64_t rows = x.numel() / D;
    std::vector<double> out(x.vec());
    const double* pb = b.data();
    for (int64_t r = 0; r < rows; ++r) {
        double* o = out.data() + r * D;
        for (int64_t i = 0; i < D; ++i) o[i] += pb[i];
    }
    auto nx = x.node(), nb = b.node();
    return make_node(x.shape(), std::move(out), {nx, nb}, [nx, nb, rows, D](Node& n) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) nx->g[i] += n.g[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double* go = n.g.data() + r * D;
                for (int64_t i = 0; i < D; ++i) nb->g[i] += go[i];
            }
        }
    });
}

Tensor add_rows_cycled(const Tensor& x, const Tensor& rows) {
    int64_t D = x.dim(x.rank() - 1);
    check(rows.rank() == 2 && rows.dim(1) == D, "add_rows_cycled: width mismatch");
    int64_t R = x.numel() / D;
    int64_t P = rows.dim(0);
    check(R % P == 0, "add_rows_cycled: cycle does not divide row count");
    std::vector<double> out(x.vec());
    const double* pr = rows.data();
    for (int64_t r = 0; r < R; ++r) {
        const double* src = pr + (r % P) * D;
        double* o = out.data() + r * D;
        for (int64_t i = 0; i < D; ++i) o[i] += src[i];
    }
    auto nx = x.node(), nr = rows.node();
    return make_node(x.shape(), std::move(out), {nx, nr}, [nx, nr, R, P, D](Node& n) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (size_t i = 0; i < n.g.size(); ++i) nx->g[i] += n.g[i];
        }
        if (nr->requires_grad) {
            nr->ensure_grad();
            for (int64_t r = 0; r < R; ++r) {
                const double* go = n.g.data() + r * D;
                double* dst = nr->g.data() + (r % P) * D;
                for (int64_t i = 0; i < D; ++i) dst[i] += go[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// lookup
// ---------------------------------------------------------------------------

Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
    check(table.rank() == 2, "embedding: table must be [V,D]");
    int64_t V = table.dim(0), D = table.dim(1);
    for (int64_t id : ids)
        check(id >= 0 && id < V, "embedding: id out of range");
    int64_t n0 = static_cast<int64_t>(ids.size());
    std::vector<double> v(static_cast<size_t>(n0 * D));
    for (int64_t i = 0; i < n0; ++i)
        std::memcpy(v.data() + i * D, table.data() + ids[i] * D, D * sizeof(double));
    auto nt = table.node();
    auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
    return make_node({n0, D}, std::move(v), {nt}, [nt, ids_copy, D](Node& n) {
        nt->ensure_grad();
        for (size_t i = 0; i < ids_copy->size(); ++i) {
            const double* go = n.g.data() + i * D;
            double* dst = nt->g.data() + (*ids_copy)[i] * D;
            for (int64_t j = 0; j < D; ++j) dst[j] += go[j];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.vec()) acc += x;
    auto na = a.node();
    return make_node({1}, {acc}, {na}, [na](Node& n) {
        na->ensure_grad();
        double g = n.g[0];
        for (auto& x : na->g) x += g;
    });
}

Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.vec()) acc += x;
    double inv = 1.0 / static_cast<double>(a.numel());
    auto na = a.node();
    return make_node({1}, {acc * inv}, {na}, [na, inv](Node& n) {
        na->ensure_grad();
        double g = n.g[0] * inv;
        for (auto& x : na->g) x += g;
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    double acc = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    int64_t n0 = a.numel();
    for (int64_t i = 0; i < n0; ++i) {
        double d = pa[i] - pb[i];
        acc += d * d;
    }
    double inv = 1.0 / static_cast<double>(n0);
    auto na = a.node(), nb = b.node();
    return make_node({1}, {acc * inv}, {na, nb}, [na, nb, inv](Node& n) {
        double g = n.g[0] * 2.0 * inv;
        if (na->requires_grad) {
            na->ensure_grad();
            for (size_t i = 0; i < na->v.size(); ++i)
                na->g[i] += g * (na->v[i] - nb->v[i]);
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (size_t i = 0; i < nb->v.size(); ++i)
                nb->g[i] -= g * (na->v[i] - nb->v[i]);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
    check(logits.rank() == 2, "cross_entropy: logits must be [N,C]");
    int64_t N = logits.dim(0), C = logits.dim(1);
    check(static_cast<int64_t>(labels.size()) == N, "cross_entropy: label count mismatch");
    auto probs = std::make_shared<std::vector<double>>(logits.vec().size());
    const double* pl = logits.data();
    double loss = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        check(labels[i] >= 0 && labels[i] < C, "cross_entropy: label out of range");
        const double* row = pl + i * C;
        double mx = row[0];
        for (int64_t j = 0; j < C; ++j) mx = std::max(mx, row[j]);
        double sumexp = 0.0;
        double* pr = probs->data() + i * C;
        for (int64_t j = 0; j < C; ++j) {
            pr[j] = std::exp(row[j] - mx);
            sumexp += pr[j];
        }
        double inv = 1.0 / sumexp;
        for (int64_t j = 0; j < C; ++j) pr[j] *= inv;
        loss -= std::log(pr[labels[i]]);
    }
    loss /= static_cast<double>(N);
    auto nl = logits.node();
    auto lab = std::make_shared<std::vector<int64_t>>(labels);
    return make_node({1}, {loss}, {nl}, [nl, probs, lab, N, C](Node& n) {
        nl->ensure_grad();
        double g = n.g[0] / static_cast<double>(N);
        for (int64_t i = 0; i < N; ++i) {
            const double* pr = probs->data() + i * C;
            double* dst = nl->g.data() + i * C;
            for (int64_t j = 0; j < C; ++j) dst[j] += g * pr[j];
            dst[(*lab)[i]] -= g;
        }
    });
}

// ---------------------------------------------------------------------------
// video layout
// ---------------------------------------------------------------------------

Tensor video_to_frames(const Tensor& v) {
    check(v.rank() == 5, "video_to_frames: rank-5 required");
    int64_t B = v.dim(0), C = v.dim(1), F = v.dim(2), H = v.dim(3), W = v.dim(4);
    Tensor p = permute(v, {0, 2, 1, 3, 4});
    return reshape(p, {B * F, C, H, W});
}

Tensor frames_to_video(const Tensor& x, int64_t batch, int64_t frames) {
    check(x.rank() == 4, "frames_to_video: rank-4 required");
    check(x.dim(0) == batch * frames, "frames_to_video: leading dim mismatch");
    Tensor p = reshape(x, {batch, frames, x.dim(1), x.dim(2), x.dim(3)});
    return permute(p, {0, 2, 1, 3, 4});
}

bool all_finite(const Tensor& a) {
    for (double x : a.vec())
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace lvd
