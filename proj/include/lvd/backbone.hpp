#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lvd/conditioning.hpp"
#include "lvd/nn.hpp"

namespace lvd {

struct DenoiserConfig {
    int64_t in_channels = 4;
    int64_t base_width = 32;
    std::vector<int64_t> channel_multipliers = {1, 2, 4};
    int blocks_per_level = 1;
    int attention_heads = 4;
    int64_t head_dim = 8;
    int64_t time_embed_dim = 64;
    int64_t sinusoidal_dim = 32;
    int64_t context_dim = 32;
    int64_t max_frames = 16;
    int norm_groups = 8;
    bool use_image_branch = false;
    bool use_rich_tokens = true;

    int64_t embed_dim() const { return attention_heads * head_dim; }
    void validate() const;  // throws std::invalid_argument on bad fields
};

// sin/cos halves with geometric frequencies from 1 to 1e4
Tensor sinusoidal_embedding(double value, int64_t dim);

// timestep and fps sinusoids, each through its own two-layer MLP, summed
struct FusedEmbedder {
    int64_t sin_dim = 32;
    Linear t1, t2;
    Linear f1, f2;

    FusedEmbedder() = default;
    FusedEmbedder(ParamStore& ps, const std::string& prefix, int64_t sin_dim,
                  int64_t time_embed_dim, RngStream& rng);

    Tensor forward(double t, double fps) const;  // [time_embed_dim]
    // one row per sample: [B, time_embed_dim]
    Tensor forward_batch(const std::vector<int>& t, const std::vector<double>& fps) const;
};

Tensor fuse_time_fps(double t, double fps, const FusedEmbedder& embedder);

// per-frame transformer: self-attention over spatial tokens, dual cross-attention
// against the conditioning, MLP; proj_out is zero-initialized
struct SpatialTransformer {
    GroupNormLayer norm;
    LinearNoBias proj_in;   // C -> d
    LayerNormLayer ln1, ln2, ln3;
    SelfAttention self_attn;
    DualCrossAttention cross;
    Mlp mlp;
    Linear proj_out;        // d -> C, zero-init
    int64_t channels = 0;

    SpatialTransformer() = default;
    SpatialTransformer(ParamStore& ps, const std::string& prefix, int64_t channels,
                       const DenoiserConfig& cfg, RngStream& rng);

    // x: [B*F, C, H, W]; cond text/img get repeated across the F frames
    Tensor forward(const Tensor& x, int64_t batch, int64_t frames,
                   const BatchedCond& cond) const;
};

// per-location transformer: two self-attentions along the frame axis plus MLP
struct TemporalTransformer {
    GroupNormLayer norm;
    LinearNoBias proj_in;   // C -> d
    Tensor pos_embed;       // [max_frames, d]
    LayerNormLayer ln1, ln2, ln3;
    SelfAttention attn1, attn2;
    Mlp mlp;
    Linear proj_out;        // d -> C, zero-init
    int64_t channels = 0;

    TemporalTransformer() = default;
    TemporalTransformer(ParamStore& ps, const std::string& prefix, int64_t channels,
                        const DenoiserConfig& cfg, RngStream& rng);

    Tensor forward(const Tensor& x, int64_t batch, int64_t frames) const;
};

struct ResBlock {
    GroupNormLayer n1, n2;
    Conv2dLayer c1, c2;
    Linear temb_proj;
    std::optional<Conv2dLayer> skip;  // 1x1 when channel count changes

    ResBlock() = default;
    ResBlock(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
             int64_t time_embed_dim, int groups, RngStream& rng);

    // x: [N, C, H, W]; temb: [N, time_embed_dim] (one row per frame)
    Tensor forward(const Tensor& x, const Tensor& temb) const;
};

// one basic spatial-temporal block: convolutional ResBlock + ST + TT
struct STBlock {
    ResBlock res;
    SpatialTransformer spatial;
    TemporalTransformer temporal;

    STBlock() = default;
    STBlock(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
            const DenoiserConfig& cfg, RngStream& rng);

    Tensor forward(const Tensor& x, const Tensor& temb, int64_t batch, int64_t frames,
                   const BatchedCond& cond) const;
};

// The denoising 3D U-Net. Downsampling acts on spatial dims only; skip
// connections concatenate channels between matching down/up levels.
class UNet {
public:
    UNet() = default;
    UNet(ParamStore& ps, const std::string& prefix, const DenoiserConfig& cfg,
         RngStream& rng);

    // z: [B,C,F,H,W]; t/fps one entry per sample; returns predicted noise
    Tensor forward(const Tensor& z, const std::vector<int>& t,
                   const std::vector<double>& fps, const BatchedCond& cond) const;

    const DenoiserConfig& config() const { return cfg_; }
    const FusedEmbedder& embedder() const { return embed_; }

private:
    DenoiserConfig cfg_;
    FusedEmbedder embed_;
    Conv2dLayer conv_in_;
    std::vector<STBlock> down_blocks_;
    std::vector<int> down_block_level_;
    std::vector<Conv2dLayer> downsamples_;
    STBlock mid_block_;
    ResBlock mid_res_;
    std::vector<STBlock> up_blocks_;
    std::vector<int> up_block_level_;
    std::vector<Conv2dLayer> upsample_convs_;
    GroupNormLayer out_norm_;
    Conv2dLayer conv_out_;
};

}  // namespace lvd
