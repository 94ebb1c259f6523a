#include "lvd/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace lvd {

void DenoiserConfig::validate() const {
    if (in_channels < 1 || base_width < 1 || blocks_per_level < 1)
        throw std::invalid_argument("denoiser config: non-positive structural field");
    if (channel_multipliers.empty())
        throw std::invalid_argument("denoiser config: channel_multipliers empty");
    if (attention_heads < 1 || head_dim < 1)
        throw std::invalid_argument("denoiser config: bad attention dims");
    if (time_embed_dim < 1 || context_dim < 1 || max_frames < 1)
        throw std::invalid_argument("denoiser config: bad embedding dims");
    if (sinusoidal_dim < 2 || sinusoidal_dim % 2 != 0)
        throw std::invalid_argument("denoiser config: sinusoidal_dim must be even, >= 2");
    if (norm_groups < 1)
        throw std::invalid_argument("denoiser config: bad norm_groups");
    for (int64_t m : channel_multipliers) {
        if (m < 1) throw std::invalid_argument("denoiser config: bad channel multiplier");
        if ((base_width * m) % norm_groups != 0)
            throw std::invalid_argument(
                "denoiser config: norm_groups must divide every level width");
    }
}

Tensor sinusoidal_embedding(double value, int64_t dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embedding: dim must be even and >= 2");
    if (value < 0.0)
        throw std::invalid_argument("sinusoidal_embedding: value must be non-negative");
    int64_t half = dim / 2;
    Tensor out = Tensor::zeros({dim});
    for (int64_t k = 0; k < half; ++k) {
        double omega =
            half == 1 ? 1.0
                      : std::pow(1e4, static_cast<double>(k) / static_cast<double>(half - 1));
        out.data()[k] = std::sin(value / omega);
        out.data()[half + k] = std::cos(value / omega);
    }
    return out;
}

FusedEmbedder::FusedEmbedder(ParamStore& ps, const std::string& prefix, int64_t sin_dim_,
                             int64_t time_embed_dim, RngStream& rng)
    : sin_dim(sin_dim_),
      t1(ps, prefix + ".t1", sin_dim_, time_embed_dim, rng),
      t2(ps, prefix + ".t2", time_embed_dim, time_embed_dim, rng),
      f1(ps, prefix + ".f1", sin_dim_, time_embed_dim, rng),
      f2(ps, prefix + ".f2", time_embed_dim, time_embed_dim, rng) {}

Tensor FusedEmbedder::forward(double t, double fps) const {
    if (fps <= 0.0) throw std::invalid_argument("fuse_time_fps: fps must be positive");
    Tensor st = reshape(sinusoidal_embedding(t, sin_dim), {1, sin_dim});
    Tensor sf = reshape(sinusoidal_embedding(fps, sin_dim), {1, sin_dim});
    Tensor et = t2.forward(silu(t1.forward(st)));
    Tensor ef = f2.forward(silu(f1.forward(sf)));
    return reshape(add(et, ef), {t1.w.dim(1)});
}

Tensor FusedEmbedder::forward_batch(const std::vector<int>& t,
                                    const std::vector<double>& fps) const {
    if (t.size() != fps.size())
        throw std::invalid_argument("fused embedder: t/fps length mismatch");
    int64_t b = static_cast<int64_t>(t.size());
    std::vector<double> st(static_cast<size_t>(b * sin_dim));
    std::vector<double> sf(static_cast<size_t>(b * sin_dim));
    for (int64_t i = 0; i < b; ++i) {
        if (fps[i] <= 0.0) throw std::invalid_argument("fused embedder: fps must be positive");
        Tensor rt = sinusoidal_embedding(static_cast<double>(t[i]), sin_dim);
        Tensor rf = sinusoidal_embedding(fps[i], sin_dim);
        std::copy(rt.data(), rt.data() + sin_dim, st.data() + i * sin_dim);
        std::copy(rf.data(), rf.data() + sin_dim, sf.data() + i * sin_dim);
    }
    Tensor ts = Tensor::from_data({b, sin_dim}, std::move(st));
    Tensor fs = Tensor::from_data({b, sin_dim}, std::move(sf));
    Tensor et = t2.forward(silu(t1.forward(ts)));
    Tensor ef = f2.forward(silu(f1.forward(fs)));
    return add(et, ef);
}

Tensor fuse_time_fps(double t, double fps, const FusedEmbedder& embedder) {
    return embedder.forward(t, fps);
}

// ---------------------------------------------------------------------------
// spatial transformer
// ---------------------------------------------------------------------------

SpatialTransformer::SpatialTransformer(ParamStore& ps, const std::string& prefix,
                                       int64_t channels_, const DenoiserConfig& cfg,
                                       RngStream& rng)
    : norm(ps, prefix + ".norm", channels_, cfg.norm_groups),
      proj_in(ps, prefix + ".proj_in", channels_, cfg.embed_dim(), rng),
      ln1(ps, prefix + ".ln1", cfg.embed_dim()),
      ln2(ps, prefix + ".ln2", cfg.embed_dim()),
      ln3(ps, prefix + ".ln3", cfg.embed_dim()),
      self_attn(ps, prefix + ".self", cfg.embed_dim(), cfg.attention_heads, rng),
      cross(ps, prefix + ".cross", cfg.embed_dim(), cfg.context_dim, cfg.attention_heads,
            cfg.use_image_branch, rng),
      mlp(ps, prefix + ".mlp", cfg.embed_dim(), cfg.embed_dim() * 4, rng),
      proj_out(ps, prefix + ".proj_out", cfg.embed_dim(), channels_, rng, /*zero_init=*/true),
      channels(channels_) {}

Tensor SpatialTransformer::forward(const Tensor& x, int64_t batch, int64_t frames,
                                   const BatchedCond& cond) const {
    if (cross.has_image_branch() && !cond.f_img.has_value())
        throw std::invalid_argument(
            "spatial transformer: image branch enabled but conditioning has no F_img");
    int64_t bf = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t n = h * w;

    Tensor tokens = permute(reshape(norm.forward(x), {bf, c, n}), {0, 2, 1});
    Tensor t = proj_in.forward(tokens);
    t = add(t, self_attn.forward(ln1.forward(t)));

    Tensor f_text = repeat_interleave0(cond.f_text, frames);
    Tensor f_img;
    const Tensor* imgp = nullptr;
    if (cond.f_img.has_value() && cross.has_image_branch()) {
        f_img = repeat_interleave0(*cond.f_img, frames);
        imgp = &f_img;
    }
    t = add(t, cross.forward(ln2.forward(t), f_text, imgp));
    t = add(t, mlp.forward(ln3.forward(t)));

    Tensor back = reshape(permute(proj_out.forward(t), {0, 2, 1}), {bf, c, h, w});
    return add(x, back);
}

// ---------------------------------------------------------------------------
// temporal transformer
// ---------------------------------------------------------------------------

TemporalTransformer::TemporalTransformer(ParamStore& ps, const std::string& prefix,
                                         int64_t channels_, const DenoiserConfig& cfg,
                                         RngStream& rng)
    : norm(ps, prefix + ".norm", channels_, cfg.norm_groups),
      proj_in(ps, prefix + ".proj_in", channels_, cfg.embed_dim(), rng),
      ln1(ps, prefix + ".ln1", cfg.embed_dim()),
      ln2(ps, prefix + ".ln2", cfg.embed_dim()),
      ln3(ps, prefix + ".ln3", cfg.embed_dim()),
      attn1(ps, prefix + ".attn1", cfg.embed_dim(), cfg.attention_heads, rng),
      attn2(ps, prefix + ".attn2", cfg.embed_dim(), cfg.attention_heads, rng),
      mlp(ps, prefix + ".mlp", cfg.embed_dim(), cfg.embed_dim() * 4, rng),
      proj_out(ps, prefix + ".proj_out", cfg.embed_dim(), channels_, rng, /*zero_init=*/true),
      channels(channels_) {
    pos_embed = ps.add_randn(prefix + ".pos", {cfg.max_frames, cfg.embed_dim()}, rng, 0.02);
}

Tensor TemporalTransformer::forward(const Tensor& x, int64_t batch, int64_t frames) const {
    int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (frames > pos_embed.dim(0))
        throw std::invalid_argument("temporal transformer: frame count exceeds max_frames");

    Tensor normed = norm.forward(x);
    Tensor h5 = reshape(normed, {batch, frames, c, h, w});
    Tensor tokens = reshape(permute(h5, {0, 3, 4, 1, 2}), {batch * h * w, frames, c});

    Tensor t = proj_in.forward(tokens);
    t = add_rows_cycled(t, slice(pos_embed, 0, 0, frames));
    t = add(t, attn1.forward(ln1.forward(t)));
    t = add(t, attn2.forward(ln2.forward(t)));
    t = add(t, mlp.forward(ln3.forward(t)));
    Tensor out = proj_out.forward(t);  // [B*H*W, F, C]

    Tensor back5 = permute(reshape(out, {batch, h, w, frames, c}), {0, 3, 4, 1, 2});
    Tensor back = reshape(back5, {batch * frames, c, h, w});
    return add(x, back);
}

// ---------------------------------------------------------------------------
// conv blocks
// ---------------------------------------------------------------------------

ResBlock::ResBlock(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                   int64_t time_embed_dim, int groups, RngStream& rng)
    : n1(ps, prefix + ".n1", in, groups),
      n2(ps, prefix + ".n2", out, groups),
      c1(ps, prefix + ".c1", in, out, 3, 1, 1, rng),
      c2(ps, prefix + ".c2", out, out, 3, 1, 1, rng),
      temb_proj(ps, prefix + ".temb", time_embed_dim, out, rng) {
    if (in != out) skip = Conv2dLayer(ps, prefix + ".skip", in, out, 1, 1, 0, rng);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& temb) const {
    Tensor h = c1.forward(silu(n1.forward(x)));
    h = add_channel_vec(h, temb_proj.forward(silu(temb)));
    h = c2.forward(silu(n2.forward(h)));
    return add(h, skip ? skip->forward(x) : x);
}

STBlock::STBlock(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                 const DenoiserConfig& cfg, RngStream& rng)
    : res(ps, prefix + ".res", in, out, cfg.time_embed_dim, cfg.norm_groups, rng),
      spatial(ps, prefix + ".st", out, cfg, rng),
      temporal(ps, prefix + ".tt", out, cfg, rng) {}

Tensor STBlock::forward(const Tensor& x, const Tensor& temb, int64_t batch, int64_t frames,
                        const BatchedCond& cond) const {
    Tensor h = res.forward(x, temb);
    h = spatial.forward(h, batch, frames, cond);
    h = temporal.forward(h, batch, frames);
    return h;
}

// ---------------------------------------------------------------------------
// U-Net
// ---------------------------------------------------------------------------

UNet::UNet(ParamStore& ps, const std::string& prefix, const DenoiserConfig& cfg,
           RngStream& rng)
    : cfg_(cfg) {
    cfg.validate();
    const int levels = static_cast<int>(cfg.channel_multipliers.size());
    std::vector<int64_t> widths;
    for (int64_t m : cfg.channel_multipliers) widths.push_back(cfg.base_width * m);

    embed_ = FusedEmbedder(ps, prefix + ".embed", cfg.sinusoidal_dim, cfg.time_embed_dim, rng);
    conv_in_ = Conv2dLayer(ps, prefix + ".conv_in", cfg.in_channels, cfg.base_width, 3, 1, 1,
                           rng);

    std::vector<int64_t> skips{cfg.base_width};
    int64_t ch = cfg.base_width;
    for (int i = 0; i < levels; ++i) {
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            std::string bp = prefix + ".down" + std::to_string(i) + "." + std::to_string(b);
            down_blocks_.emplace_back(ps, bp, ch, widths[i], cfg, rng);
            down_block_level_.push_back(i);
            ch = widths[i];
            skips.push_back(ch);
        }
        if (i + 1 < levels) {
            downsamples_.emplace_back(ps, prefix + ".ds" + std::to_string(i), ch, ch, 3, 2, 1,
                                      rng);
            skips.push_back(ch);
        }
    }

    mid_block_ = STBlock(ps, prefix + ".mid", ch, ch, cfg, rng);
    mid_res_ = ResBlock(ps, prefix + ".mid_res", ch, ch, cfg.time_embed_dim, cfg.norm_groups,
                        rng);

    for (int i = levels - 1; i >= 0; --i) {
        for (int b = 0; b <= cfg.blocks_per_level; ++b) {
            int64_t skip_ch = skips.back();
            skips.pop_back();
            std::string bp = prefix + ".up" + std::to_string(i) + "." + std::to_string(b);
            up_blocks_.emplace_back(ps, bp, ch + skip_ch, widths[i], cfg, rng);
            up_block_level_.push_back(i);
            ch = widths[i];
        }
        if (i > 0)
            upsample_convs_.emplace_back(ps, prefix + ".us" + std::to_string(i), ch, ch, 3, 1,
                                         1, rng);
    }

    out_norm_ = GroupNormLayer(ps, prefix + ".out_norm", ch, cfg.norm_groups);
    conv_out_ = Conv2dLayer(ps, prefix + ".conv_out", ch, cfg.in_channels, 3, 1, 1, rng,
                            /*zero_init=*/true);
}

Tensor UNet::forward(const Tensor& z, const std::vector<int>& t,
                     const std::vector<double>& fps, const BatchedCond& cond) const {
    if (z.rank() != 5) throw std::invalid_argument("denoiser_forward: input must be rank-5");
    int64_t batch = z.dim(0), frames = z.dim(2);
    if (z.dim(1) != cfg_.in_channels)
        throw std::invalid_argument("denoiser_forward: channel count mismatch");
    if (static_cast<int64_t>(t.size()) != batch ||
        static_cast<int64_t>(fps.size()) != batch)
        throw std::invalid_argument("denoiser_forward: t/fps must have one entry per sample");
    const int levels = static_cast<int>(cfg_.channel_multipliers.size());
    int64_t down_factor = int64_t{1} << (levels - 1);
    if (z.dim(3) % down_factor != 0 || z.dim(4) % down_factor != 0)
        throw std::invalid_argument(
            "denoiser_forward: spatial dims must be divisible by 2^(levels-1)");

    Tensor temb = embed_.forward_batch(t, fps);
    Tensor temb_rows = repeat_interleave0(temb, frames);

    Tensor h = conv_in_.forward(video_to_frames(z));
    std::vector<Tensor> hs{h};
    size_t ds = 0;
    for (size_t bi = 0; bi < down_blocks_.size(); ++bi) {
        h = down_blocks_[bi].forward(h, temb_rows, batch, frames, cond);
        hs.push_back(h);
        bool level_done = bi + 1 == down_blocks_.size() ||
                          down_block_level_[bi + 1] != down_block_level_[bi];
        if (level_done && down_block_level_[bi] + 1 < levels) {
            h = downsamples_[ds++].forward(h);
            hs.push_back(h);
        }
    }

    h = mid_block_.forward(h, temb_rows, batch, frames, cond);
    h = mid_res_.forward(h, temb_rows);

    size_t us = 0;
    for (size_t bi = 0; bi < up_blocks_.size(); ++bi) {
        Tensor skip = hs.back();
        hs.pop_back();
        h = up_blocks_[bi].forward(concat({h, skip}, 1), temb_rows, batch, frames, cond);
        bool level_done =
            bi + 1 == up_blocks_.size() || up_block_level_[bi + 1] != up_block_level_[bi];
        if (level_done && up_block_level_[bi] > 0)
            h = upsample_convs_[us++].forward(upsample_nearest2x(h));
    }

    h = conv_out_.forward(silu(out_norm_.forward(h)));
    return frames_to_video(h, batch, frames);
}

}  // namespace lvd
