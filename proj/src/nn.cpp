#include "lvd/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace lvd {

Tensor ParamStore::add(const std::string& name, const Shape& shape,
                       std::vector<double> init) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor t = Tensor::param(shape, std::move(init));
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamStore::add_randn(const std::string& name, const Shape& shape, RngStream& rng,
                             double stddev) {
    return add(name, shape, Tensor::randn(shape, rng, stddev).vec());
}

Tensor ParamStore::add_zeros(const std::string& name, const Shape& shape) {
    return add(name, shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), 0.0));
}

Tensor ParamStore::add_full(const std::string& name, const Shape& shape, double value) {
    return add(name, shape,
               std::vector<double>(static_cast<size_t>(shape_numel(shape)), value));
}

Tensor* ParamStore::find(const std::string& name) {
    for (auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

int64_t ParamStore::total_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
               RngStream& rng, bool zero_init) {
    if (zero_init) {
        w = ps.add_zeros(prefix + ".w", {in, out});
    } else {
        double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
        w = ps.add_randn(prefix + ".w", {in, out}, rng, stddev);
    }
    b = ps.add_zeros(prefix + ".b", {out});
}

LinearNoBias::LinearNoBias(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                           RngStream& rng) {
    double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
    w = ps.add_randn(name, {in, out}, rng, stddev);
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                         int kernel, int stride_, int pad_, RngStream& rng, bool zero_init)
    : stride(stride_), pad(pad_) {
    Shape ws{out, in, kernel, kernel};
    if (zero_init) {
        w = ps.add_zeros(prefix + ".w", ws);
    } else {
        double fan_in = static_cast<double>(in * kernel * kernel);
        w = ps.add_randn(prefix + ".w", ws, rng, std::sqrt(2.0 / fan_in));
    }
    b = ps.add_zeros(prefix + ".b", {out});
}

GroupNormLayer::GroupNormLayer(ParamStore& ps, const std::string& prefix, int64_t channels,
                               int groups_)
    : groups(groups_) {
    gamma = ps.add_full(prefix + ".g", {channels}, 1.0);
    beta = ps.add_zeros(prefix + ".b", {channels});
}

LayerNormLayer::LayerNormLayer(ParamStore& ps, const std::string& prefix, int64_t dim) {
    gamma = ps.add_full(prefix + ".g", {dim}, 1.0);
    beta = ps.add_zeros(prefix + ".b", {dim});
}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, int64_t dim, int64_t hidden,
         RngStream& rng)
    : fc1(ps, prefix + ".fc1", dim, hidden, rng), fc2(ps, prefix + ".fc2", hidden, dim, rng) {}

SelfAttention::SelfAttention(ParamStore& ps, const std::string& prefix, int64_t dim,
                             int heads_, RngStream& rng)
    : wq(ps, prefix + ".wq", dim, dim, rng),
      wk(ps, prefix + ".wk", dim, dim, rng),
      wv(ps, prefix + ".wv", dim, dim, rng),
      heads(heads_) {}

void AdamOptimizer::init(const ParamStore& ps) {
    m.resize(ps.size());
    v.resize(ps.size());
    for (size_t i = 0; i < ps.size(); ++i) {
        m[i].assign(static_cast<size_t>(ps.tensor(i).numel()), 0.0);
        v[i].assign(static_cast<size_t>(ps.tensor(i).numel()), 0.0);
    }
    step_count = 0;
}

void AdamOptimizer::step(ParamStore& ps, const std::vector<uint8_t>& trainable) {
    if (!initialized()) init(ps);
    if (m.size() != ps.size())
        throw std::invalid_argument("adam: parameter store changed size");
    if (!trainable.empty() && trainable.size() != ps.size())
        throw std::invalid_argument("adam: trainable mask size mismatch");
    ++step_count;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t i = 0; i < ps.size(); ++i) {
        if (!trainable.empty() && !trainable[i]) continue;
        Tensor& t = ps.tensor(i);
        double* w = t.data();
        const double* g = t.grad();
        double* mi = m[i].data();
        double* vi = v[i].data();
        int64_t n = t.numel();
        for (int64_t j = 0; j < n; ++j) {
            mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
            vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
            double mhat = mi[j] / bc1;
            double vhat = vi[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace lvd
