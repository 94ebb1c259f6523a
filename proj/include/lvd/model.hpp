#pragma once

#include <memory>
#include <optional>
#include <string>

#include "lvd/autoencoder.hpp"
#include "lvd/backbone.hpp"
#include "lvd/conditioning.hpp"
#include "lvd/schedule.hpp"

namespace lvd {

struct ScheduleParams {
    BetaKind kind = BetaKind::linear;
    int num_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    NoiseSchedule build() const {
        return make_beta_schedule(kind, num_steps, beta_start, beta_end);
    }
};

struct ModelConfig {
    DenoiserConfig denoiser;
    TextEncoderConfig text;    // vocab_size filled from the vocabulary at build time
    ImageEncoderConfig image;
    int64_t proj_hidden = 64;
    AutoencoderConfig vae;
    ScheduleParams schedule;

    void validate() const;
};

// The full trainable model: denoising U-Net, conditioning encoders, projection
// network, null embeddings and the framewise autoencoder, all registered in
// one parameter store.
struct GenerativeModel {
    ModelConfig cfg;
    Vocabulary vocab;
    ParamStore params;
    UNet unet;
    TextEncoder text_enc;
    std::optional<ImageEncoder> img_enc;
    std::optional<ProjectionNetwork> proj;
    Tensor null_text;   // [1, ctx]
    Tensor null_image;  // [1, ctx], only when the image branch exists
    Autoencoder vae;
    NoiseSchedule schedule;

    static GenerativeModel build(const ModelConfig& cfg, const Vocabulary& vocab,
                                 uint64_t init_seed);

    bool has_image_branch() const { return cfg.denoiser.use_image_branch; }
    TokenMode token_mode() const {
        return cfg.denoiser.use_rich_tokens ? TokenMode::rich : TokenMode::global;
    }
    ConditioningStack conditioning() const;

    // predicted noise for a batch; thin wrapper over UNet::forward
    Tensor predict_noise(const Tensor& z, const std::vector<int>& t,
                         const std::vector<double>& fps, const BatchedCond& cond) const {
        return unet.forward(z, t, fps, cond);
    }
};

// spec-shaped single-sample entry point
Tensor denoiser_forward(const Tensor& z_t, int t, double fps, const ConditioningBundle& cond,
                        const GenerativeModel& model);

}  // namespace lvd
