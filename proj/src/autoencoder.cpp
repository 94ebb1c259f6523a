#include "lvd/autoencoder.hpp"

#include <stdexcept>

namespace lvd {

AutoencoderMode autoencoder_mode_from_string(const std::string& s) {
    if (s == "identity") return AutoencoderMode::identity;
    if (s == "conv") return AutoencoderMode::conv;
    throw std::invalid_argument("unknown autoencoder mode: " + s);
}

std::string to_string(AutoencoderMode m) {
    return m == AutoencoderMode::identity ? "identity" : "conv";
}

void AutoencoderConfig::validate() const {
    if (image_channels < 1 || latent_channels < 1 || base_width < 1)
        throw std::invalid_argument("autoencoder config: non-positive channel field");
    if (down_factor < 1 || (down_factor & (down_factor - 1)) != 0)
        throw std::invalid_argument("autoencoder config: down_factor must be a power of two");
    if (mode == AutoencoderMode::identity && down_factor != 1)
        throw std::invalid_argument("autoencoder config: identity mode requires down_factor 1");
    if (mode == AutoencoderMode::identity && latent_channels != image_channels)
        throw std::invalid_argument(
            "autoencoder config: identity mode requires latent_channels == image_channels");
    if (mode == AutoencoderMode::conv && down_factor < 2)
        throw std::invalid_argument("autoencoder config: conv mode requires down_factor >= 2");
    if (!(latent_scale > 0.0))
        throw std::invalid_argument("autoencoder config: latent_scale must be positive");
}

Autoencoder::Autoencoder(ParamStore& ps, const std::string& prefix,
                         const AutoencoderConfig& cfg, RngStream& rng)
    : cfg_(cfg), latent_scale_(cfg.latent_scale) {
    cfg.validate();
    if (cfg.mode == AutoencoderMode::identity) return;

    int halvings = 0;
    for (int64_t f = cfg.down_factor; f > 1; f /= 2) ++halvings;
    int64_t w = cfg.base_width;

    enc_convs_.emplace_back(ps, prefix + ".e0", cfg.image_channels, w, 3, 1, 1, rng);
    enc_norms_.emplace_back(ps, prefix + ".en0", w, cfg.norm_groups);
    for (int i = 0; i < halvings; ++i) {
        enc_convs_.emplace_back(ps, prefix + ".e" + std::to_string(i + 1), w, 2 * w, 3, 2, 1,
                                rng);
        enc_norms_.emplace_back(ps, prefix + ".en" + std::to_string(i + 1), 2 * w,
                                cfg.norm_groups);
        w *= 2;
    }
    enc_convs_.emplace_back(ps, prefix + ".etail", w, w, 3, 1, 1, rng);
    enc_norms_.emplace_back(ps, prefix + ".entail", w, cfg.norm_groups);
    enc_out_ = Conv2dLayer(ps, prefix + ".eout", w, cfg.latent_channels, 1, 1, 0, rng);

    dec_in_ = Conv2dLayer(ps, prefix + ".din", cfg.latent_channels, w, 1, 1, 0, rng);
    for (int i = 0; i < halvings; ++i) {
        dec_norms_.emplace_back(ps, prefix + ".dn" + std::to_string(i), w, cfg.norm_groups);
        dec_convs_.emplace_back(ps, prefix + ".d" + std::to_string(i), w, w / 2, 3, 1, 1,
                                rng);
        w /= 2;
    }
    dec_norms_.emplace_back(ps, prefix + ".dntail", w, cfg.norm_groups);
    dec_convs_.emplace_back(ps, prefix + ".dtail", w, w, 3, 1, 1, rng);
    dec_out_ = Conv2dLayer(ps, prefix + ".dout", w, cfg.image_channels, 3, 1, 1, rng);
}

void Autoencoder::set_latent_scale(double s) {
    if (!(s > 0.0)) throw std::invalid_argument("latent scale must be positive");
    latent_scale_ = s;
}

Tensor Autoencoder::encode_frames(const Tensor& frames) const {
    if (frames.rank() != 4)
        throw std::invalid_argument("encode: frames must be [N,C,H,W]");
    if (frames.dim(1) != cfg_.image_channels)
        throw std::invalid_argument("encode: channel mismatch");
    if (frames.dim(2) % cfg_.down_factor != 0 || frames.dim(3) % cfg_.down_factor != 0)
        throw std::invalid_argument("encode: spatial dims not divisible by down factor");
    if (cfg_.mode == AutoencoderMode::identity) return frames.detach();

    Tensor h = frames;
    for (size_t i = 0; i < enc_convs_.size(); ++i)
        h = silu(enc_norms_[i].forward(enc_convs_[i].forward(h)));
    h = enc_out_.forward(h);
    return latent_scale_ == 1.0 ? h : scale(h, latent_scale_);
}

Tensor Autoencoder::decode_frames(const Tensor& latents) const {
    if (latents.rank() != 4)
        throw std::invalid_argument("decode: latents must be [N,c,h,w]");
    if (latents.dim(1) != cfg_.latent_channels &&
        !(cfg_.mode == AutoencoderMode::identity && latents.dim(1) == cfg_.image_channels))
        throw std::invalid_argument("decode: latent channel mismatch");
    if (cfg_.mode == AutoencoderMode::identity) return latents.detach();

    Tensor h = latent_scale_ == 1.0 ? latents : scale(latents, 1.0 / latent_scale_);
    h = dec_in_.forward(h);
    size_t up_stages = dec_convs_.size() - 1;
    for (size_t i = 0; i < up_stages; ++i)
        h = dec_convs_[i].forward(upsample_nearest2x(silu(dec_norms_[i].forward(h))));
    h = dec_convs_.back().forward(silu(dec_norms_.back().forward(h)));
    return dec_out_.forward(h);
}

Tensor Autoencoder::encode_video(const Tensor& video) const {
    if (video.rank() != 5)
        throw std::invalid_argument("encode_video: input must be [B,C,F,H,W]");
    int64_t b = video.dim(0), f = video.dim(2);
    Tensor lat = encode_frames(video_to_frames(video));
    return frames_to_video(lat, b, f);
}

Tensor Autoencoder::decode_video(const Tensor& latent) const {
    if (latent.rank() != 5)
        throw std::invalid_argument("decode_video: input must be [B,c,F,h,w]");
    int64_t b = latent.dim(0), f = latent.dim(2);
    Tensor px = decode_frames(video_to_frames(latent));
    return frames_to_video(px, b, f);
}

}  // namespace lvd
