#include "lvd/model.hpp"

#include <stdexcept>

namespace lvd {

void ModelConfig::validate() const {
    denoiser.validate();
    vae.validate();
    if (text.context_dim != denoiser.context_dim)
        throw std::invalid_argument("model config: text context_dim mismatch");
    if (denoiser.in_channels != vae.latent_channels)
        throw std::invalid_argument(
            "model config: denoiser in_channels must equal autoencoder latent_channels");
    if (schedule.num_steps < 1)
        throw std::invalid_argument("model config: schedule must have at least one step");
    if (denoiser.use_image_branch) {
        if (image.image_size % image.patch_size != 0)
            throw std::invalid_argument("model config: patch size must divide image size");
    }
}

GenerativeModel GenerativeModel::build(const ModelConfig& cfg_in, const Vocabulary& vocab,
                                       uint64_t init_seed) {
    ModelConfig cfg = cfg_in;
    cfg.text.vocab_size = vocab.size();
    cfg.validate();

    GenerativeModel m;
    m.cfg = cfg;
    m.vocab = vocab;
    RngStream rng(derive_seed(init_seed, "init"));

    // construction order defines the checkpoint parameter order
    m.unet = UNet(m.params, "unet", cfg.denoiser, rng);
    m.text_enc = TextEncoder(m.params, "text_enc", cfg.text, rng);
    m.null_text = m.params.add_randn("cond.null_text", {1, cfg.text.context_dim}, rng, 0.02);
    if (cfg.denoiser.use_image_branch) {
        m.img_enc.emplace(m.params, "img_enc", cfg.image, rng);
        m.proj.emplace(m.params, "proj", cfg.image.vis_dim, cfg.proj_hidden,
                       cfg.denoiser.context_dim, rng);
        m.null_image =
            m.params.add_randn("cond.null_image", {1, cfg.denoiser.context_dim}, rng, 0.02);
    }
    m.vae = Autoencoder(m.params, "vae", cfg.vae, rng);
    m.schedule = cfg.schedule.build();
    return m;
}

ConditioningStack GenerativeModel::conditioning() const {
    ConditioningStack s;
    s.vocab = &vocab;
    s.text = &text_enc;
    s.image = img_enc ? &*img_enc : nullptr;
    s.proj = proj ? &*proj : nullptr;
    s.null_text = null_text;
    s.null_image = null_image;
    s.mode = token_mode();
    return s;
}

Tensor denoiser_forward(const Tensor& z_t, int t, double fps, const ConditioningBundle& cond,
                        const GenerativeModel& model) {
    BatchedCond batched = stack_bundles({cond});
    return model.predict_noise(z_t, {t}, {fps}, batched);
}

}  // namespace lvd
