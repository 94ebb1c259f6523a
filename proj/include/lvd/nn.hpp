#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lvd/tensor.hpp"

namespace lvd {

// Ordered registry of named leaf parameters. Construction order is the
// serialization order, so a config rebuilt from a checkpoint recreates the
// exact same index.
class ParamStore {
public:
    Tensor add(const std::string& name, const Shape& shape, std::vector<double> init);
    Tensor add_randn(const std::string& name, const Shape& shape, RngStream& rng,
                     double stddev);
    Tensor add_zeros(const std::string& name, const Shape& shape);
    Tensor add_full(const std::string& name, const Shape& shape, double value);

    size_t size() const { return items_.size(); }
    const std::string& name(size_t i) const { return items_[i].first; }
    Tensor& tensor(size_t i) { return items_[i].second; }
    const Tensor& tensor(size_t i) const { return items_[i].second; }
    Tensor* find(const std::string& name);
    int64_t total_params() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
           RngStream& rng, bool zero_init = false);
    Tensor forward(const Tensor& x) const { return linear(x, w, b); }
};

struct LinearNoBias {
    Tensor w;  // [in, out]
    LinearNoBias() = default;
    LinearNoBias(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                 RngStream& rng);
    Tensor forward(const Tensor& x) const { return matmul_nobias(x, w); }
};

struct Conv2dLayer {
    Tensor w;  // [oc, ic, k, k]
    Tensor b;  // [oc]
    int stride = 1;
    int pad = 0;
    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                int kernel, int stride, int pad, RngStream& rng, bool zero_init = false);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct GroupNormLayer {
    Tensor gamma, beta;
    int groups = 8;
    GroupNormLayer() = default;
    GroupNormLayer(ParamStore& ps, const std::string& prefix, int64_t channels, int groups);
    Tensor forward(const Tensor& x) const { return group_norm(x, gamma, beta, groups); }
};

struct LayerNormLayer {
    Tensor gamma, beta;
    LayerNormLayer() = default;
    LayerNormLayer(ParamStore& ps, const std::string& prefix, int64_t dim);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// two linear maps with a nonlinearity between
struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& prefix, int64_t dim, int64_t hidden,
        RngStream& rng);
    Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }
};

// self-attention over tokens [B,N,D]; QKV maps only, heads concatenated
struct SelfAttention {
    LinearNoBias wq, wk, wv;
    int heads = 1;
    SelfAttention() = default;
    SelfAttention(ParamStore& ps, const std::string& prefix, int64_t dim, int heads,
                  RngStream& rng);
    Tensor forward(const Tensor& tokens) const {
        return multihead_attention(wq.forward(tokens), wk.forward(tokens),
                                   wv.forward(tokens), heads);
    }
};

// Adam with bias correction. Moment buffers are addressed by parameter index,
// so the store must not grow once the optimizer has been initialized. Frozen
// parameters (trainable[i] == 0) are skipped entirely: no moment update, no
// weight change.
struct AdamOptimizer {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<std::vector<double>> m, v;

    void init(const ParamStore& ps);
    bool initialized() const { return !m.empty(); }
    void step(ParamStore& ps, const std::vector<uint8_t>& trainable = {});
};

}  // namespace lvd
