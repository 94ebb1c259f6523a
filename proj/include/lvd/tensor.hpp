#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lvd/rng.hpp"

namespace lvd {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    std::vector<double> v;
    std::vector<double> g;  // allocated on demand during backward
    Shape shape;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0);
    }
};

}  // namespace detail

// Reverse-mode autodiff tensor. Values are always double; the graph is dynamic
// and freed when the result tensors go out of scope. Leaf tensors with
// requires_grad=true accumulate gradients across backward() calls until
// zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, double value);
    static Tensor from_data(const Shape& s, std::vector<double> data);
    static Tensor scalar(double value) { return from_data({1}, {value}); }
    // leaf parameter: participates in autodiff
    static Tensor param(const Shape& s, std::vector<double> data);
    static Tensor randn(const Shape& s, RngStream& rng, double stddev = 1.0);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return n_->numel(); }

    double* data() { return n_->v.data(); }
    const double* data() const { return n_->v.data(); }
    std::vector<double>& vec() { return n_->v; }
    const std::vector<double>& vec() const { return n_->v; }
    double item() const;

    bool requires_grad() const { return n_ && n_->requires_grad; }
    double* grad();
    const std::vector<double>& grad_vec() const { return n_->g; }
    void zero_grad();

    // Runs reverse-mode accumulation from this scalar.
    void backward();

    // Copy of the values, detached from the graph.
    Tensor detach() const;
    Tensor clone_graphless() const { return detach(); }

    std::shared_ptr<detail::Node> node() const { return n_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> n_;
};

// Global autodiff switch. Guards around sampling/eval keep graphs from building.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, const Shape& s);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor transpose2d(const Tensor& a);
Tensor concat(const std::vector<Tensor>& ts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor stack0(const std::vector<Tensor>& ts);
// rows of x repeated `times` consecutively along axis 0
Tensor repeat_interleave0(const Tensor& a, int64_t times);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);             // [m,k]x[k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // rows of x, w:[in,out]
Tensor matmul_nobias(const Tensor& x, const Tensor& w);      // rows of x, w:[in,out]

// single-head scaled dot-product attention, Q:[N,d] K:[M,d] V:[M,d]
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);
// batched multi-head: q:[B,Nq,D] k,v:[B,Nk,D], D = heads*head_dim
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// ---- convolutional ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor upsample_nearest2x(const Tensor& x);

// ---- normalization ----
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- broadcasting helpers ----
// x:[N,C,H,W] + v:[N,C], v broadcast over spatial dims
Tensor add_channel_vec(const Tensor& x, const Tensor& v);
// x:[N,D] + b:[D]
Tensor add_bias_rows(const Tensor& x, const Tensor& b);
// x:[R,D] + rows:[P,D] with P dividing R; row r gets rows[r % P]
Tensor add_rows_cycled(const Tensor& x, const Tensor& rows);

// ---- lookup ----
Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids);

// ---- reductions / losses ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

// ---- video layout helpers ([B,C,F,H,W] <-> [B*F,C,H,W]) ----
Tensor video_to_frames(const Tensor& v);
Tensor frames_to_video(const Tensor& x, int64_t batch, int64_t frames);

bool all_finite(const Tensor& a);

}  // namespace lvd
