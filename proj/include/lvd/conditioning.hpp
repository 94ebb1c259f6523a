#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lvd/nn.hpp"

namespace lvd {

enum class TokenMode { rich, global };
TokenMode token_mode_from_string(const std::string& s);
std::string to_string(TokenMode m);

// Closed caption vocabulary. Id 0 is <pad>, id 1 is <unk>; everything else
// comes from the wordlist in file order.
class Vocabulary {
public:
    static Vocabulary from_words(const std::vector<std::string>& words);
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

    int64_t size() const { return static_cast<int64_t>(words_.size()); }
    const std::string& word(int64_t id) const { return words_[static_cast<size_t>(id)]; }
    std::vector<int64_t> tokenize(const std::string& prompt, int64_t pad_len) const;

    static constexpr int64_t pad_id = 0;
    static constexpr int64_t unk_id = 1;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int64_t> index_;
};

// Per-sample conditioning state consumed by the denoiser.
struct ConditioningBundle {
    Tensor f_text;                 // [L, context_dim]
    std::optional<Tensor> f_img;   // [M, context_dim]; absent => no image branch input
    double fps = 8.0;
    bool text_null = false;
    bool image_null = false;
};

// Batch of stacked bundles; all samples must agree on L and M.
struct BatchedCond {
    Tensor f_text;                 // [B, L, ctx]
    std::optional<Tensor> f_img;   // [B, M, ctx]
    std::vector<double> fps;
};
BatchedCond stack_bundles(const std::vector<ConditioningBundle>& bundles);

struct TextEncoderConfig {
    int64_t vocab_size = 0;
    int64_t context_dim = 32;
    int64_t pad_len = 8;
    int layers = 1;
    int heads = 2;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(ParamStore& ps, const std::string& prefix, const TextEncoderConfig& cfg,
                RngStream& rng);

    // [L, context_dim], deterministic given weights
    Tensor encode(const Vocabulary& vocab, const std::string& prompt) const;
    const TextEncoderConfig& config() const { return cfg_; }

private:
    struct Layer {
        LayerNormLayer ln1;
        SelfAttention attn;
        LayerNormLayer ln2;
        Mlp mlp;
    };
    TextEncoderConfig cfg_;
    Tensor tok_embed_;  // [V, ctx]
    Tensor pos_embed_;  // [L, ctx]
    std::vector<Layer> layers_;
    LayerNormLayer ln_final_;
};

// cls token plus K patch tokens from the image encoder's last layer
struct ImageTokens {
    Tensor f_vis;  // [(K+1), vis_dim], row 0 is the cls token
    Tensor f_cls() const { return slice(f_vis, 0, 0, 1); }
    int64_t patch_tokens() const { return f_vis.dim(0) - 1; }
};

struct ImageEncoderConfig {
    int64_t image_size = 16;
    int64_t patch_size = 4;
    int64_t channels = 3;
    int64_t vis_dim = 32;
    int layers = 1;
    int heads = 2;
    int64_t num_patches() const {
        return (image_size / patch_size) * (image_size / patch_size);
    }
};

class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(ParamStore& ps, const std::string& prefix, const ImageEncoderConfig& cfg,
                 RngStream& rng);

    ImageTokens encode(const Tensor& image) const;  // image: [C,H,W]
    const ImageEncoderConfig& config() const { return cfg_; }

private:
    struct Layer {
        LayerNormLayer ln1;
        SelfAttention attn;
        LayerNormLayer ln2;
        Mlp mlp;
    };
    ImageEncoderConfig cfg_;
    Conv2dLayer patch_embed_;
    Tensor cls_token_;  // [1, vis_dim]
    Tensor pos_embed_;  // [K+1, vis_dim]
    std::vector<Layer> layers_;
    LayerNormLayer ln_final_;
};

// token-wise two-layer MLP mapping visual tokens into the text-aligned space
struct ProjectionNetwork {
    Linear fc1, fc2;
    ProjectionNetwork() = default;
    ProjectionNetwork(ParamStore& ps, const std::string& prefix, int64_t vis_dim,
                      int64_t hidden, int64_t context_dim, RngStream& rng);
    Tensor apply(const Tensor& tokens) const { return fc2.forward(gelu(fc1.forward(tokens))); }
};

// rich: all K+1 tokens projected; global: the cls token only
Tensor project_tokens(const ImageTokens& tokens, const ProjectionNetwork& net, TokenMode mode);

// shared query; text K/V plus the two newly added image maps
struct DualCrossAttention {
    Tensor wq;                // [d, d]
    Tensor wk_txt, wv_txt;    // [ctx, d]
    Tensor wk_img, wv_img;    // [ctx, d]; undefined when the image branch is off
    int heads = 1;

    DualCrossAttention() = default;
    DualCrossAttention(ParamStore& ps, const std::string& prefix, int64_t dim,
                       int64_t context_dim, int heads, bool image_branch, RngStream& rng);
    bool has_image_branch() const { return wk_img.defined(); }

    // tokens: [B,N,d]; f_text: [B,L,ctx]; f_img: [B,M,ctx] or null
    Tensor forward(const Tensor& tokens, const Tensor& f_text, const Tensor* f_img) const;
};

// single-sample form: F_in [N,d] against one bundle
Tensor dual_cross_attention(const Tensor& f_in, const ConditioningBundle& bundle,
                            const DualCrossAttention& weights);

// Everything assemble_conditioning needs, bundled so callers can hand the
// conditioning half of a model around as one unit.
struct ConditioningStack {
    const Vocabulary* vocab = nullptr;
    const TextEncoder* text = nullptr;
    const ImageEncoder* image = nullptr;       // null when no image branch
    const ProjectionNetwork* proj = nullptr;   // null when no image branch
    Tensor null_text;                          // [1, ctx]
    Tensor null_image;                         // [1, ctx]
    TokenMode mode = TokenMode::rich;
};

// Classifier-free-guidance dropout happens here; rng is explicit so results
// are a pure function of its state.
ConditioningBundle assemble_conditioning(const ConditioningStack& stack,
                                         const std::string& prompt, const Tensor* image,
                                         double fps, double drop_text, double drop_image,
                                         RngStream& rng);

// null-everything bundle used as the guidance baseline
ConditioningBundle null_bundle(const ConditioningStack& stack, double fps,
                               bool with_image_rows);

// deterministic assembly without dropout; null embeddings stand in for any
// missing modality (sampling-time use)
ConditioningBundle make_bundle(const ConditioningStack& stack, const std::string* prompt,
                               const Tensor* image, double fps);

}  // namespace lvd
