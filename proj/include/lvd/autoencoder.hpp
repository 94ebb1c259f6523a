#pragma once

#include <string>
#include <vector>

#include "lvd/nn.hpp"

namespace lvd {

enum class AutoencoderMode { identity, conv };
AutoencoderMode autoencoder_mode_from_string(const std::string& s);
std::string to_string(AutoencoderMode m);

struct AutoencoderConfig {
    AutoencoderMode mode = AutoencoderMode::conv;
    int64_t down_factor = 2;     // power of two; 1 only in identity mode
    int64_t latent_channels = 4;
    int64_t image_channels = 3;
    int64_t base_width = 16;
    int norm_groups = 4;
    double latent_scale = 1.0;   // calibrated after reconstruction training
    void validate() const;
};

// Framewise pixel<->latent mapping. Every frame is encoded independently, so
// stacking per-frame encodings is bitwise identical to encoding the clip.
// latent_scale is applied on encode and removed on decode; it is calibrated
// after reconstruction training so latents are roughly unit variance.
class Autoencoder {
public:
    Autoencoder() = default;
    Autoencoder(ParamStore& ps, const std::string& prefix, const AutoencoderConfig& cfg,
                RngStream& rng);

    Tensor encode_video(const Tensor& video) const;   // [B,C,F,H,W] -> [B,c,F,H/f,W/f]
    Tensor decode_video(const Tensor& latent) const;  // inverse spatial shape map

    Tensor encode_frames(const Tensor& frames) const;  // [N,C,H,W] -> [N,c,h,w]
    Tensor decode_frames(const Tensor& latents) const;

    const AutoencoderConfig& config() const { return cfg_; }
    double latent_scale() const { return latent_scale_; }
    void set_latent_scale(double s);

private:
    AutoencoderConfig cfg_;
    double latent_scale_ = 1.0;
    // encoder: stem conv, one strided conv per halving, tail convs
    std::vector<Conv2dLayer> enc_convs_;
    std::vector<GroupNormLayer> enc_norms_;
    Conv2dLayer enc_out_;
    // decoder mirror
    Conv2dLayer dec_in_;
    std::vector<Conv2dLayer> dec_convs_;
    std::vector<GroupNormLayer> dec_norms_;
    Conv2dLayer dec_out_;
};

}  // namespace lvd
