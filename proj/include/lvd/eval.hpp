#pragma once

#include <array>
#include <string>
#include <vector>

#include "lvd/data.hpp"
#include "lvd/nn.hpp"

namespace lvd {

// 10 log10(1 / MSE); equal frames return the documented cap
inline constexpr double kPsnrCapDb = 99.0;
double frame_psnr(const Tensor& a, const Tensor& b);

// mean absolute difference between consecutive frames of a [1,C,F,H,W] clip
double temporal_consistency(const Tensor& video);

// intensity-weighted centroid per frame, computed with circular statistics so
// border wrap-around does not produce jumps
struct CentroidTrack {
    std::vector<double> x, y;
    std::vector<double> mass;
};
CentroidTrack track_centroids(const Tensor& video, double threshold = 0.12);

// mean per-frame centroid displacement magnitude (wrapped), in pixels
double mean_centroid_displacement(const Tensor& video, double threshold = 0.12);

// RMS deviation of the unwrapped centroid trajectory from its least-squares
// line; 0 for perfectly linear motion
double trajectory_linearity_error(const Tensor& video, double threshold = 0.12);

// scale/position-invariant clip descriptors consumed by the attribute probe
struct ProbeFeatures {
    static constexpr int dim = 11;
    std::array<double, dim> v{};
    bool blank = false;
};
ProbeFeatures probe_features(const Tensor& video);

struct ProbePrediction {
    ShapeKind shape;
    ColorName color;
    MoveDir direction;
    bool low_confidence = false;
};

struct AttributeFlags {
    bool shape_ok = false;
    bool color_ok = false;
    bool direction_ok = false;
    bool low_confidence = false;
};

// Small classifier with one shared trunk and a softmax head per attribute.
// Trained on ground-truth synthetic clips only, then frozen as a judge.
class AttributeProbe {
public:
    AttributeProbe() = default;
    explicit AttributeProbe(uint64_t init_seed);

    ProbePrediction predict(const Tensor& video) const;

    struct Example {
        ProbeFeatures features;
        ClipSpec spec;
    };
    // full-batch Adam on cross-entropy over the three heads
    void train(const std::vector<Example>& examples, int steps, double lr);
    double accuracy(const std::vector<Example>& examples) const;  // all-attributes-correct rate

private:
    ParamStore params_;
    Linear trunk_;
    Linear shape_head_, color_head_, dir_head_;
    Tensor logits_of(const Tensor& feats) const;  // [N, 3+4+4]
};

// trains on generated clips and validates on a held-out split; throws if the
// held-out all-attribute accuracy is below min_accuracy
AttributeProbe train_attribute_probe(const std::vector<ClipSpec>& specs, uint64_t seed,
                                     int steps = 600, double lr = 0.02,
                                     double min_accuracy = 0.95);

AttributeFlags attribute_probe(const Tensor& video, const std::string& caption,
                               const AttributeProbe& probe);

}  // namespace lvd
