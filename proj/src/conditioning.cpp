#include "lvd/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lvd {

TokenMode token_mode_from_string(const std::string& s) {
    if (s == "rich") return TokenMode::rich;
    if (s == "global") return TokenMode::global;
    throw std::invalid_argument("unknown token mode: " + s);
}

std::string to_string(TokenMode m) { return m == TokenMode::rich ? "rich" : "global"; }

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    v.words_ = {"<pad>", "<unk>"};
    for (const auto& w : words) {
        if (w.empty() || w == "<pad>" || w == "<unk>") continue;
        if (std::find(v.words_.begin(), v.words_.end(), w) == v.words_.end())
            v.words_.push_back(w);
    }
    for (size_t i = 0; i < v.words_.size(); ++i)
        v.index_[v.words_[i]] = static_cast<int64_t>(i);
    return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open vocabulary file: " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) words.push_back(line);
    }
    return from_words(words);
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write vocabulary file: " + path);
    // special tokens are implicit; the wordlist holds real words only
    for (size_t i = 2; i < words_.size(); ++i) f << words_[i] << "\n";
}

std::vector<int64_t> Vocabulary::tokenize(const std::string& prompt, int64_t pad_len) const {
    std::vector<int64_t> ids;
    std::istringstream is(prompt);
    std::string word;
    while (is >> word && static_cast<int64_t>(ids.size()) < pad_len) {
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        auto it = index_.find(word);
        ids.push_back(it == index_.end() ? unk_id : it->second);
    }
    while (static_cast<int64_t>(ids.size()) < pad_len) ids.push_back(pad_id);
    return ids;
}

BatchedCond stack_bundles(const std::vector<ConditioningBundle>& bundles) {
    if (bundles.empty()) throw std::invalid_argument("stack_bundles: empty batch");
    BatchedCond out;
    std::vector<Tensor> texts;
    std::vector<Tensor> imgs;
    bool has_img = bundles[0].f_img.has_value();
    for (const auto& b : bundles) {
        if (b.f_img.has_value() != has_img)
            throw std::invalid_argument("stack_bundles: inconsistent image presence");
        texts.push_back(b.f_text);
        if (has_img) imgs.push_back(*b.f_img);
        out.fps.push_back(b.fps);
    }
    out.f_text = stack0(texts);
    if (has_img) out.f_img = stack0(imgs);
    return out;
}

// ---------------------------------------------------------------------------
// text encoder
// ---------------------------------------------------------------------------

TextEncoder::TextEncoder(ParamStore& ps, const std::string& prefix,
                         const TextEncoderConfig& cfg, RngStream& rng)
    : cfg_(cfg) {
    tok_embed_ = ps.add_randn(prefix + ".tok", {cfg.vocab_size, cfg.context_dim}, rng, 0.02);
    pos_embed_ = ps.add_randn(prefix + ".pos", {cfg.pad_len, cfg.context_dim}, rng, 0.02);
    for (int i = 0; i < cfg.layers; ++i) {
        std::string lp = prefix + ".l" + std::to_string(i);
        layers_.push_back(Layer{
            LayerNormLayer(ps, lp + ".ln1", cfg.context_dim),
            SelfAttention(ps, lp + ".attn", cfg.context_dim, cfg.heads, rng),
            LayerNormLayer(ps, lp + ".ln2", cfg.context_dim),
            Mlp(ps, lp + ".mlp", cfg.context_dim, cfg.context_dim * 4, rng),
        });
    }
    ln_final_ = LayerNormLayer(ps, prefix + ".lnf", cfg.context_dim);
}

Tensor TextEncoder::encode(const Vocabulary& vocab, const std::string& prompt) const {
    std::vector<int64_t> ids = vocab.tokenize(prompt, cfg_.pad_len);
    Tensor x = embedding(tok_embed_, ids);        // [L, ctx]
    x = add_rows_cycled(x, pos_embed_);
    Tensor t = reshape(x, {1, cfg_.pad_len, cfg_.context_dim});
    for (const auto& l : layers_) {
        t = add(t, l.attn.forward(l.ln1.forward(t)));
        t = add(t, l.mlp.forward(l.ln2.forward(t)));
    }
    t = ln_final_.forward(t);
    return reshape(t, {cfg_.pad_len, cfg_.context_dim});
}

// ---------------------------------------------------------------------------
// image encoder
// ---------------------------------------------------------------------------

ImageEncoder::ImageEncoder(ParamStore& ps, const std::string& prefix,
                           const ImageEncoderConfig& cfg, RngStream& rng)
    : cfg_(cfg) {
    if (cfg.image_size % cfg.patch_size != 0)
        throw std::invalid_argument("image encoder: image size not divisible by patch size");
    patch_embed_ = Conv2dLayer(ps, prefix + ".patch", cfg.channels, cfg.vis_dim,
                               static_cast<int>(cfg.patch_size),
                               static_cast<int>(cfg.patch_size), 0, rng);
    cls_token_ = ps.add_randn(prefix + ".cls", {1, cfg.vis_dim}, rng, 0.02);
    pos_embed_ =
        ps.add_randn(prefix + ".pos", {cfg.num_patches() + 1, cfg.vis_dim}, rng, 0.02);
    for (int i = 0; i < cfg.layers; ++i) {
        std::string lp = prefix + ".l" + std::to_string(i);
        layers_.push_back(Layer{
            LayerNormLayer(ps, lp + ".ln1", cfg.vis_dim),
            SelfAttention(ps, lp + ".attn", cfg.vis_dim, cfg.heads, rng),
            LayerNormLayer(ps, lp + ".ln2", cfg.vis_dim),
            Mlp(ps, lp + ".mlp", cfg.vis_dim, cfg.vis_dim * 4, rng),
        });
    }
    ln_final_ = LayerNormLayer(ps, prefix + ".lnf", cfg.vis_dim);
}

ImageTokens ImageEncoder::encode(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != cfg_.channels)
        throw std::invalid_argument("encode_image: expected [C,H,W] with C=" +
                                    std::to_string(cfg_.channels));
    if (image.dim(1) % cfg_.patch_size != 0 || image.dim(2) % cfg_.patch_size != 0)
        throw std::invalid_argument("encode_image: spatial dims not divisible by patch size");
    Tensor x = reshape(image, {1, cfg_.channels, image.dim(1), image.dim(2)});
    Tensor patches = patch_embed_.forward(x);  // [1, vis, gh, gw]
    int64_t k = patches.dim(2) * patches.dim(3);
    Tensor tokens = permute(reshape(patches, {cfg_.vis_dim, k}), {1, 0});  // [K, vis]
    Tensor all = concat({cls_token_, tokens}, 0);                          // [K+1, vis]
    all = add_rows_cycled(all, pos_embed_);
    Tensor t = reshape(all, {1, k + 1, cfg_.vis_dim});
    for (const auto& l : layers_) {
        t = add(t, l.attn.forward(l.ln1.forward(t)));
        t = add(t, l.mlp.forward(l.ln2.forward(t)));
    }
    t = ln_final_.forward(t);
    return ImageTokens{reshape(t, {k + 1, cfg_.vis_dim})};
}

ProjectionNetwork::ProjectionNetwork(ParamStore& ps, const std::string& prefix,
                                     int64_t vis_dim, int64_t hidden, int64_t context_dim,
                                     RngStream& rng)
    : fc1(ps, prefix + ".fc1", vis_dim, hidden, rng),
      fc2(ps, prefix + ".fc2", hidden, context_dim, rng) {}

Tensor project_tokens(const ImageTokens& tokens, const ProjectionNetwork& net,
                      TokenMode mode) {
    if (mode == TokenMode::global) return net.apply(tokens.f_cls());
    return net.apply(tokens.f_vis);
}

// ---------------------------------------------------------------------------
// dual cross-attention
// ---------------------------------------------------------------------------

DualCrossAttention::DualCrossAttention(ParamStore& ps, const std::string& prefix,
                                       int64_t dim, int64_t context_dim, int heads_,
                                       bool image_branch, RngStream& rng)
    : heads(heads_) {
    auto init = [&](const std::string& name, int64_t in, int64_t out) {
        double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
        return ps.add_randn(prefix + name, {in, out}, rng, stddev);
    };
    wq = init(".wq", dim, dim);
    wk_txt = init(".wk_txt", context_dim, dim);
    wv_txt = init(".wv_txt", context_dim, dim);
    if (image_branch) {
        wk_img = init(".wk_img", context_dim, dim);
        wv_img = init(".wv_img", context_dim, dim);
    }
}

Tensor DualCrossAttention::forward(const Tensor& tokens, const Tensor& f_text,
                                   const Tensor* f_img) const {
    Tensor q = matmul_nobias(tokens, wq);
    Tensor out = multihead_attention(q, matmul_nobias(f_text, wk_txt),
                                     matmul_nobias(f_text, wv_txt), heads);
    if (f_img) {
        if (!has_image_branch())
            throw std::invalid_argument("dual_cross_attention: image input without W'_k/W'_v");
        Tensor img_out = multihead_attention(q, matmul_nobias(*f_img, wk_img),
                                             matmul_nobias(*f_img, wv_img), heads);
        out = add(out, img_out);
    }
    return out;
}

Tensor dual_cross_attention(const Tensor& f_in, const ConditioningBundle& bundle,
                            const DualCrossAttention& weights) {
    if (f_in.rank() != 2)
        throw std::invalid_argument("dual_cross_attention: F_in must be [N,width]");
    Tensor t = reshape(f_in, {1, f_in.dim(0), f_in.dim(1)});
    Tensor text = reshape(bundle.f_text, {1, bundle.f_text.dim(0), bundle.f_text.dim(1)});
    Tensor out;
    if (bundle.f_img.has_value()) {
        Tensor img = reshape(*bundle.f_img, {1, bundle.f_img->dim(0), bundle.f_img->dim(1)});
        out = weights.forward(t, text, &img);
    } else {
        out = weights.forward(t, text, nullptr);
    }
    return reshape(out, f_in.shape());
}

// ---------------------------------------------------------------------------
// assembly
// ---------------------------------------------------------------------------

ConditioningBundle assemble_conditioning(const ConditioningStack& stack,
                                         const std::string& prompt, const Tensor* image,
                                         double fps, double drop_text, double drop_image,
                                         RngStream& rng) {
    if (drop_text < 0.0 || drop_text > 1.0 || drop_image < 0.0 || drop_image > 1.0)
        throw std::invalid_argument("assemble_conditioning: probabilities must be in [0,1]");
    ConditioningBundle b;
    b.fps = fps;

    int64_t pad_len = stack.text->config().pad_len;
    // draw both coins unconditionally so the stream advances identically
    // whether or not an image is attached
    bool drop_t = rng.uniform() < drop_text;
    bool drop_i = rng.uniform() < drop_image;

    if (drop_t) {
        b.f_text = repeat_interleave0(stack.null_text, pad_len);
        b.text_null = true;
    } else {
        b.f_text = stack.text->encode(*stack.vocab, prompt);
    }

    if (stack.image != nullptr) {
        int64_t m = stack.mode == TokenMode::rich
                        ? stack.image->config().num_patches() + 1
                        : 1;
        if (image == nullptr || drop_i) {
            b.f_img = repeat_interleave0(stack.null_image, m);
            b.image_null = true;
        } else {
            ImageTokens tokens = stack.image->encode(*image);
            b.f_img = project_tokens(tokens, *stack.proj, stack.mode);
        }
    }
    return b;
}

ConditioningBundle null_bundle(const ConditioningStack& stack, double fps,
                               bool with_image_rows) {
    ConditioningBundle b;
    b.fps = fps;
    b.text_null = true;
    b.f_text = repeat_interleave0(stack.null_text, stack.text->config().pad_len);
    if (stack.image != nullptr && with_image_rows) {
        int64_t m =
            stack.mode == TokenMode::rich ? stack.image->config().num_patches() + 1 : 1;
        b.f_img = repeat_interleave0(stack.null_image, m);
        b.image_null = true;
    }
    return b;
}

ConditioningBundle make_bundle(const ConditioningStack& stack, const std::string* prompt,
                               const Tensor* image, double fps) {
    ConditioningBundle b;
    b.fps = fps;
    if (prompt != nullptr) {
        b.f_text = stack.text->encode(*stack.vocab, *prompt);
    } else {
        b.f_text = repeat_interleave0(stack.null_text, stack.text->config().pad_len);
        b.text_null = true;
    }
    if (stack.image != nullptr) {
        if (image != nullptr) {
            ImageTokens tokens = stack.image->encode(*image);
            b.f_img = project_tokens(tokens, *stack.proj, stack.mode);
        } else {
            int64_t m =
                stack.mode == TokenMode::rich ? stack.image->config().num_patches() + 1 : 1;
            b.f_img = repeat_interleave0(stack.null_image, m);
            b.image_null = true;
        }
    }
    return b;
}

}  // namespace lvd
