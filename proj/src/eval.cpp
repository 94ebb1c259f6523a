#include "lvd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lvd {

double frame_psnr(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("frame_psnr: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

double temporal_consistency(const Tensor& video) {
    if (video.rank() != 5 || video.dim(0) != 1)
        throw std::invalid_argument("temporal_consistency: expected [1,C,F,H,W]");
    int64_t f = video.dim(2);
    if (f < 2)
        throw std::invalid_argument("temporal_consistency: need at least two frames");
    int64_t c = video.dim(1), hw = video.dim(3) * video.dim(4);
    const double* p = video.data();
    double acc = 0.0;
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t fr = 0; fr + 1 < f; ++fr) {
            const double* a = p + (ch * f + fr) * hw;
            const double* b = a + hw;
            for (int64_t i = 0; i < hw; ++i) acc += std::abs(b[i] - a[i]);
        }
    return acc / static_cast<double>(c * (f - 1) * hw);
}

namespace {

double wrap_delta(double d, double s) {
    d = std::fmod(d, s);
    if (d < -s / 2) d += s;
    if (d >= s / 2) d -= s;
    return d;
}

// circular mean of positions weighted by w, mapped back to [0, s)
double circular_mean(const std::vector<double>& pos, const std::vector<double>& w, double s) {
    double sc = 0.0, ss = 0.0;
    for (size_t i = 0; i < pos.size(); ++i) {
        double a = 2.0 * M_PI * pos[i] / s;
        sc += w[i] * std::cos(a);
        ss += w[i] * std::sin(a);
    }
    double ang = std::atan2(ss, sc);
    double m = ang * s / (2.0 * M_PI);
    if (m < 0) m += s;
    return m;
}

}  // namespace

CentroidTrack track_centroids(const Tensor& video, double threshold) {
    if (video.rank() != 5 || video.dim(0) != 1)
        throw std::invalid_argument("track_centroids: expected [1,C,F,H,W]");
    int64_t c = video.dim(1), f = video.dim(2), h = video.dim(3), w = video.dim(4);
    const double* p = video.data();
    CentroidTrack track;
    for (int64_t fr = 0; fr < f; ++fr) {
        std::vector<double> xs, ys, ws;
        double mass = 0.0;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double lum = 0.0;
                for (int64_t ch = 0; ch < c; ++ch)
                    lum += p[((ch * f + fr) * h + y) * w + x];
                lum /= static_cast<double>(c);
                if (lum > threshold) {
                    xs.push_back(x + 0.5);
                    ys.push_back(y + 0.5);
                    ws.push_back(lum);
                    mass += lum;
                }
            }
        if (mass <= 0.0) {
            track.x.push_back(-1.0);
            track.y.push_back(-1.0);
            track.mass.push_back(0.0);
        } else {
            track.x.push_back(circular_mean(xs, ws, static_cast<double>(w)));
            track.y.push_back(circular_mean(ys, ws, static_cast<double>(h)));
            track.mass.push_back(mass);
        }
    }
    return track;
}

double mean_centroid_displacement(const Tensor& video, double threshold) {
    CentroidTrack t = track_centroids(video, threshold);
    double w = static_cast<double>(video.dim(4));
    double h = static_cast<double>(video.dim(3));
    double acc = 0.0;
    int count = 0;
    for (size_t i = 0; i + 1 < t.x.size(); ++i) {
        if (t.mass[i] <= 0.0 || t.mass[i + 1] <= 0.0) continue;
        double dx = wrap_delta(t.x[i + 1] - t.x[i], w);
        double dy = wrap_delta(t.y[i + 1] - t.y[i], h);
        acc += std::sqrt(dx * dx + dy * dy);
        ++count;
    }
    return count == 0 ? 0.0 : acc / count;
}

double trajectory_linearity_error(const Tensor& video, double threshold) {
    CentroidTrack t = track_centroids(video, threshold);
    double w = static_cast<double>(video.dim(4));
    double h = static_cast<double>(video.dim(3));
    // unwrap into cumulative coordinates over valid frames
    std::vector<double> xs, ys;
    double cx = 0.0, cy = 0.0;
    int last = -1;
    for (size_t i = 0; i < t.x.size(); ++i) {
        if (t.mass[i] <= 0.0) continue;
        if (last >= 0) {
            cx += wrap_delta(t.x[i] - t.x[static_cast<size_t>(last)], w);
            cy += wrap_delta(t.y[i] - t.y[static_cast<size_t>(last)], h);
        }
        xs.push_back(cx);
        ys.push_back(cy);
        last = static_cast<int>(i);
    }
    size_t n = xs.size();
    if (n < 3) return 0.0;
    // least-squares line per axis over frame index
    auto rms_residual = [n](const std::vector<double>& v) {
        double st = 0, sv = 0, stt = 0, stv = 0;
        for (size_t i = 0; i < n; ++i) {
            double ti = static_cast<double>(i);
            st += ti;
            sv += v[i];
            stt += ti * ti;
            stv += ti * v[i];
        }
        double denom = n * stt - st * st;
        double slope = denom == 0 ? 0 : (n * stv - st * sv) / denom;
        double inter = (sv - slope * st) / n;
        double acc = 0;
        for (size_t i = 0; i < n; ++i) {
            double r = v[i] - (slope * static_cast<double>(i) + inter);
            acc += r * r;
        }
        return acc / n;
    };
    return std::sqrt(rms_residual(xs) + rms_residual(ys));
}

// ---------------------------------------------------------------------------
// probe features
// ---------------------------------------------------------------------------

ProbeFeatures probe_features(const Tensor& video) {
    if (video.rank() != 5 || video.dim(0) != 1)
        throw std::invalid_argument("probe_features: expected [1,C,F,H,W]");
    int64_t c = video.dim(1), f = video.dim(2), h = video.dim(3), w = video.dim(4);
    if (c != 3) throw std::invalid_argument("probe_features: expected 3 channels");
    const double* p = video.data();
    const double thr = 0.1;

    double sum_rgb[3] = {0, 0, 0};
    double ratio_acc = 0, kurt_acc = 0, skew_acc = 0, anis_acc = 0, corr_acc = 0;
    double mass_frac_acc = 0;
    int valid_frames = 0;

    std::vector<double> cxs(f, -1), cys(f, -1), masses(f, 0);
    for (int64_t fr = 0; fr < f; ++fr) {
        std::vector<double> xs, ys, ws;
        double mass = 0.0;
        double rgb[3] = {0, 0, 0};
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double ch[3];
                double lum = 0.0;
                for (int64_t k = 0; k < 3; ++k) {
                    ch[k] = p[((k * f + fr) * h + y) * w + x];
                    lum += ch[k];
                }
                lum /= 3.0;
                if (lum > thr) {
                    xs.push_back(x + 0.5);
                    ys.push_back(y + 0.5);
                    ws.push_back(lum);
                    mass += lum;
                    for (int64_t k = 0; k < 3; ++k) rgb[k] += ch[k];
                }
            }
        masses[fr] = mass;
        if (mass <= 1e-9) continue;
        ++valid_frames;

        double cx = circular_mean(xs, ws, static_cast<double>(w));
        double cy = circular_mean(ys, ws, static_cast<double>(h));
        cxs[fr] = cx;
        cys[fr] = cy;

        double rgb_total = rgb[0] + rgb[1] + rgb[2];
        for (int k = 0; k < 3; ++k) sum_rgb[k] += rgb[k] / (rgb_total + 1e-12);

        double sxx = 0, syy = 0, sxy = 0, s4 = 0, sy3 = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            double dx = wrap_delta(xs[i] - cx, static_cast<double>(w));
            double dy = wrap_delta(ys[i] - cy, static_cast<double>(h));
            double wt = ws[i] / mass;
            sxx += wt * dx * dx;
            syy += wt * dy * dy;
            sxy += wt * dx * dy;
            double d2 = dx * dx + dy * dy;
            s4 += wt * d2 * d2;
            sy3 += wt * dy * dy * dy;
        }
        double var = sxx + syy + 1e-12;
        ratio_acc += mass / var;
        kurt_acc += s4 / (var * var);
        skew_acc += sy3 / std::pow(syy + 1e-12, 1.5);
        anis_acc += (sxx - syy) / var;
        corr_acc += sxy / std::sqrt((sxx + 1e-12) * (syy + 1e-12));
        mass_frac_acc += mass / static_cast<double>(h * w);
    }

    ProbeFeatures out;
    if (valid_frames == 0) {
        out.blank = true;
        return out;
    }
    double inv = 1.0 / valid_frames;

    // mean wrapped displacement direction across consecutive valid frames
    double ux = 0, uy = 0;
    int moves = 0;
    for (int64_t fr = 0; fr + 1 < f; ++fr) {
        if (masses[fr] <= 1e-9 || masses[fr + 1] <= 1e-9) continue;
        ux += wrap_delta(cxs[fr + 1] - cxs[fr], static_cast<double>(w));
        uy += wrap_delta(cys[fr + 1] - cys[fr], static_cast<double>(h));
        ++moves;
    }
    double mag = std::sqrt(ux * ux + uy * uy);
    if (moves > 0 && mag > 1e-9) {
        ux /= mag;
        uy /= mag;
    } else {
        ux = 0;
        uy = 0;
    }

    out.v = {sum_rgb[0] * inv, sum_rgb[1] * inv, sum_rgb[2] * inv,
             mass_frac_acc * inv, ratio_acc * inv * 0.05,  // keep magnitudes O(1)
             kurt_acc * inv, skew_acc * inv, anis_acc * inv, corr_acc * inv, ux, uy};
    return out;
}

// ---------------------------------------------------------------------------
// attribute probe
// ---------------------------------------------------------------------------

AttributeProbe::AttributeProbe(uint64_t init_seed) {
    RngStream rng(derive_seed(init_seed, "probe_init"));
    trunk_ = Linear(params_, "trunk", ProbeFeatures::dim, 32, rng);
    shape_head_ = Linear(params_, "shape", 32, 3, rng);
    color_head_ = Linear(params_, "color", 32, 4, rng);
    dir_head_ = Linear(params_, "dir", 32, 4, rng);
}

Tensor AttributeProbe::logits_of(const Tensor& feats) const {
    Tensor h = gelu(trunk_.forward(feats));
    return concat({shape_head_.forward(h), color_head_.forward(h), dir_head_.forward(h)}, 1);
}

ProbePrediction AttributeProbe::predict(const Tensor& video) const {
    ProbeFeatures feats = probe_features(video);
    NoGradGuard guard;
    Tensor x = Tensor::from_data({1, ProbeFeatures::dim},
                                 std::vector<double>(feats.v.begin(), feats.v.end()));
    Tensor logits = logits_of(x);
    auto argmax = [&](int64_t off, int64_t n) {
        int64_t best = 0;
        for (int64_t i = 1; i < n; ++i)
            if (logits.data()[off + i] > logits.data()[off + best]) best = i;
        return best;
    };
    ProbePrediction pred;
    pred.shape = static_cast<ShapeKind>(argmax(0, 3));
    pred.color = static_cast<ColorName>(argmax(3, 4));
    pred.direction = static_cast<MoveDir>(argmax(7, 4));
    pred.low_confidence = feats.blank;
    return pred;
}

void AttributeProbe::train(const std::vector<Example>& examples, int steps, double lr) {
    if (examples.empty()) throw std::invalid_argument("probe train: no examples");
    int64_t n = static_cast<int64_t>(examples.size());
    std::vector<double> xdata;
    std::vector<int64_t> shape_lab, color_lab, dir_lab;
    for (const auto& e : examples) {
        xdata.insert(xdata.end(), e.features.v.begin(), e.features.v.end());
        shape_lab.push_back(static_cast<int64_t>(e.spec.shape));
        color_lab.push_back(static_cast<int64_t>(e.spec.color));
        dir_lab.push_back(static_cast<int64_t>(e.spec.direction));
    }
    Tensor x = Tensor::from_data({n, ProbeFeatures::dim}, std::move(xdata));

    AdamOptimizer opt;
    opt.lr = lr;
    for (int step = 0; step < steps; ++step) {
        params_.zero_grad();
        Tensor logits = logits_of(x);
        Tensor loss = add(add(cross_entropy(slice(logits, 1, 0, 3), shape_lab),
                              cross_entropy(slice(logits, 1, 3, 4), color_lab)),
                          cross_entropy(slice(logits, 1, 7, 4), dir_lab));
        loss.backward();
        opt.step(params_);
    }
}

double AttributeProbe::accuracy(const std::vector<Example>& examples) const {
    if (examples.empty()) return 0.0;
    NoGradGuard guard;
    int correct = 0;
    for (const auto& e : examples) {
        Tensor x = Tensor::from_data({1, ProbeFeatures::dim},
                                     std::vector<double>(e.features.v.begin(),
                                                         e.features.v.end()));
        Tensor logits = logits_of(x);
        auto argmax = [&](int64_t off, int64_t n) {
            int64_t best = 0;
            for (int64_t i = 1; i < n; ++i)
                if (logits.data()[off + i] > logits.data()[off + best]) best = i;
            return best;
        };
        bool ok = argmax(0, 3) == static_cast<int64_t>(e.spec.shape) &&
                  argmax(3, 4) == static_cast<int64_t>(e.spec.color) &&
                  argmax(7, 4) == static_cast<int64_t>(e.spec.direction);
        correct += ok ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

AttributeProbe train_attribute_probe(const std::vector<ClipSpec>& specs, uint64_t seed,
                                     int steps, double lr, double min_accuracy) {
    std::vector<AttributeProbe::Example> all;
    all.reserve(specs.size());
    for (const auto& s : specs) {
        RenderedClip clip = generate_clip(s);
        all.push_back({probe_features(clip.video), s});
    }
    // deterministic shuffle, then an 80/20 split
    RngStream rng(derive_seed(seed, "probe_split"));
    for (size_t i = all.size(); i > 1; --i)
        std::swap(all[i - 1], all[static_cast<size_t>(rng.randint(static_cast<int64_t>(i)))]);
    size_t held = std::max<size_t>(1, all.size() / 5);
    std::vector<AttributeProbe::Example> train_set(all.begin(), all.end() - held);
    std::vector<AttributeProbe::Example> held_set(all.end() - held, all.end());

    AttributeProbe probe(seed);
    probe.train(train_set, steps, lr);
    double acc = probe.accuracy(held_set);
    if (acc < min_accuracy)
        throw std::runtime_error("attribute probe held-out accuracy " + std::to_string(acc) +
                                 " below required " + std::to_string(min_accuracy));
    return probe;
}

AttributeFlags attribute_probe(const Tensor& video, const std::string& caption,
                               const AttributeProbe& probe) {
    CaptionAttributes want = parse_caption(caption);
    ProbePrediction pred = probe.predict(video);
    AttributeFlags flags;
    flags.shape_ok = pred.shape == want.shape;
    flags.color_ok = pred.color == want.color;
    flags.direction_ok = pred.direction == want.direction;
    flags.low_confidence = pred.low_confidence;
    return flags;
}

}  // namespace lvd
