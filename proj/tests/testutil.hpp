#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lvd/tensor.hpp"

namespace lvdtest {

// Central-difference gradient check against reverse-mode autodiff.
// f must rebuild the graph from the leaf on every call and return a scalar.
// Returns the worst relative error over the checked entries.
inline double fd_check(lvd::Tensor& leaf, const std::function<lvd::Tensor()>& f,
                       double h = 1e-6, int max_entries = -1) {
    leaf.zero_grad();
    lvd::Tensor loss = f();
    loss.backward();
    std::vector<double> ad(leaf.grad(), leaf.grad() + leaf.numel());
    leaf.zero_grad();

    double worst = 0.0;
    int64_t n = leaf.numel();
    int64_t step = 1;
    if (max_entries > 0 && n > max_entries) step = n / max_entries;
    for (int64_t i = 0; i < n; i += step) {
        double orig = leaf.data()[i];
        leaf.data()[i] = orig + h;
        double lp = f().item();
        leaf.data()[i] = orig - h;
        double lm = f().item();
        leaf.data()[i] = orig;
        double fd = (lp - lm) / (2.0 * h);
        double denom = std::max({std::abs(fd), std::abs(ad[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - ad[i]) / denom);
    }
    return worst;
}

inline double max_abs_diff(const lvd::Tensor& a, const lvd::Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline bool bitwise_equal(const lvd::Tensor& a, const lvd::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

}  // namespace lvdtest
