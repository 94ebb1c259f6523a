#include "lvd/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace lvd {

std::map<std::string, std::map<std::string, std::string>> parse_ini(const std::string& text) {
    std::map<std::string, std::map<std::string, std::string>> out;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        out[section][key] = value;
    }
    return out;
}

namespace {

class Fields {
public:
    Fields(const std::map<std::string, std::map<std::string, std::string>>& kv) : kv_(kv) {}

    bool has(const std::string& sec, const std::string& key) const {
        auto s = kv_.find(sec);
        return s != kv_.end() && s->second.count(key) > 0;
    }
    std::string str(const std::string& sec, const std::string& key, std::string def) {
        mark(sec, key);
        if (!has(sec, key)) return def;
        return kv_.at(sec).at(key);
    }
    int64_t integer(const std::string& sec, const std::string& key, int64_t def) {
        mark(sec, key);
        if (!has(sec, key)) return def;
        const std::string& v = kv_.at(sec).at(key);
        try {
            size_t pos = 0;
            int64_t r = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (...) {
            throw ConfigError("config [" + sec + "] " + key + ": bad integer '" + v + "'");
        }
    }
    double real(const std::string& sec, const std::string& key, double def) {
        mark(sec, key);
        if (!has(sec, key)) return def;
        const std::string& v = kv_.at(sec).at(key);
        try {
            size_t pos = 0;
            double r = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (...) {
            throw ConfigError("config [" + sec + "] " + key + ": bad number '" + v + "'");
        }
    }
    bool boolean(const std::string& sec, const std::string& key, bool def) {
        mark(sec, key);
        if (!has(sec, key)) return def;
        const std::string& v = kv_.at(sec).at(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config [" + sec + "] " + key + ": bad boolean '" + v + "'");
    }

    // every provided key must have been consumed
    void check_unknown() const {
        for (const auto& [sec, keys] : kv_)
            for (const auto& [key, value] : keys)
                if (!seen_.count(sec + "\n" + key))
                    throw ConfigError("config: unknown key '" + key + "' in section [" + sec +
                                      "]");
    }

private:
    void mark(const std::string& sec, const std::string& key) {
        seen_.insert(sec + "\n" + key);
    }
    std::map<std::string, std::map<std::string, std::string>> kv_;
    std::set<std::string> seen_;
};

std::vector<int64_t> parse_multipliers(const std::string& v) {
    std::vector<int64_t> out;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        try {
            out.push_back(std::stoll(tok));
        } catch (...) {
            throw ConfigError("config: bad channel_multipliers entry '" + tok + "'");
        }
    }
    if (out.empty()) throw ConfigError("config: empty channel_multipliers");
    return out;
}

std::vector<StageSpec> parse_schedule(const std::string& v) {
    std::vector<StageSpec> out;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        StageSpec st;
        if (std::sscanf(tok.c_str(), "%dx%dx%dx%d", &st.size, &st.frames, &st.steps,
                        &st.batch_size) != 4)
            throw ConfigError("config: bad resolution_schedule entry '" + tok +
                              "' (want SIZExFRAMESxSTEPSxBATCH)");
        out.push_back(st);
    }
    if (out.empty()) throw ConfigError("config: empty resolution_schedule");
    return out;
}

std::string schedule_to_string(const std::vector<StageSpec>& sched) {
    std::ostringstream os;
    for (size_t i = 0; i < sched.size(); ++i) {
        if (i) os << ",";
        os << sched[i].size << "x" << sched[i].frames << "x" << sched[i].steps << "x"
           << sched[i].batch_size;
    }
    return os.str();
}

std::string multipliers_to_string(const std::vector<int64_t>& m) {
    std::ostringstream os;
    for (size_t i = 0; i < m.size(); ++i) {
        if (i) os << ",";
        os << m[i];
    }
    return os.str();
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    Fields f(parse_ini(text));
    RunConfig c;

    DenoiserConfig& d = c.model.denoiser;
    d.in_channels = f.integer("model", "in_channels", d.in_channels);
    d.base_width = f.integer("model", "base_width", d.base_width);
    if (f.has("model", "channel_multipliers"))
        d.channel_multipliers =
            parse_multipliers(f.str("model", "channel_multipliers", ""));
    else
        f.str("model", "channel_multipliers", "");
    d.blocks_per_level =
        static_cast<int>(f.integer("model", "blocks_per_level", d.blocks_per_level));
    d.attention_heads =
        static_cast<int>(f.integer("model", "attention_heads", d.attention_heads));
    d.head_dim = f.integer("model", "head_dim", d.head_dim);
    d.time_embed_dim = f.integer("model", "time_embed_dim", d.time_embed_dim);
    d.sinusoidal_dim = f.integer("model", "sinusoidal_dim", d.sinusoidal_dim);
    d.context_dim = f.integer("model", "context_dim", d.context_dim);
    d.max_frames = f.integer("model", "max_frames", d.max_frames);
    d.norm_groups = static_cast<int>(f.integer("model", "norm_groups", d.norm_groups));
    d.use_image_branch = f.boolean("model", "use_image_branch", d.use_image_branch);
    d.use_rich_tokens =
        token_mode_from_string(f.str("model", "token_mode", "rich")) == TokenMode::rich;

    TextEncoderConfig& t = c.model.text;
    t.context_dim = d.context_dim;
    t.pad_len = f.integer("model", "text_pad_len", t.pad_len);
    t.layers = static_cast<int>(f.integer("model", "text_layers", t.layers));
    t.heads = static_cast<int>(f.integer("model", "text_heads", t.heads));

    ImageEncoderConfig& i = c.model.image;
    i.image_size = f.integer("model", "image_size", i.image_size);
    i.patch_size = f.integer("model", "patch_size", i.patch_size);
    i.vis_dim = f.integer("model", "vis_dim", i.vis_dim);
    i.layers = static_cast<int>(f.integer("model", "image_layers", i.layers));
    i.heads = static_cast<int>(f.integer("model", "image_heads", i.heads));
    c.model.proj_hidden = f.integer("model", "proj_hidden", c.model.proj_hidden);

    ScheduleParams& s = c.model.schedule;
    s.kind = beta_kind_from_string(f.str("schedule", "kind", to_string(s.kind)));
    s.num_steps = static_cast<int>(f.integer("schedule", "num_steps", s.num_steps));
    s.beta_start = f.real("schedule", "beta_start", s.beta_start);
    s.beta_end = f.real("schedule", "beta_end", s.beta_end);

    AutoencoderConfig& v = c.model.vae;
    v.mode = autoencoder_mode_from_string(f.str("autoencoder", "mode", to_string(v.mode)));
    v.down_factor = f.integer("autoencoder", "down_factor", v.down_factor);
    v.latent_channels = f.integer("autoencoder", "latent_channels", v.latent_channels);
    v.image_channels = f.integer("autoencoder", "image_channels", v.image_channels);
    v.base_width = f.integer("autoencoder", "base_width", v.base_width);
    v.norm_groups = static_cast<int>(f.integer("autoencoder", "norm_groups", v.norm_groups));
    v.latent_scale = f.real("autoencoder", "latent_scale", v.latent_scale);
    if (v.mode == AutoencoderMode::identity) {
        v.down_factor = 1;
        v.latent_channels = v.image_channels;
    }
    i.channels = v.image_channels;

    TrainConfig& tr = c.train;
    tr.stage = train_stage_from_string(f.str("train", "stage", to_string(tr.stage)));
    if (f.has("train", "resolution_schedule"))
        tr.schedule = parse_schedule(f.str("train", "resolution_schedule", ""));
    else
        f.str("train", "resolution_schedule", "");
    tr.image_batch_ratio = f.real("train", "image_batch_ratio", tr.image_batch_ratio);
    tr.learning_rate = f.real("train", "learning_rate", tr.learning_rate);
    tr.drop_text = f.real("train", "drop_text", tr.drop_text);
    tr.drop_image = f.real("train", "drop_image", tr.drop_image);
    tr.vae_steps = static_cast<int>(f.integer("train", "vae_steps", tr.vae_steps));
    tr.vae_batch = static_cast<int>(f.integer("train", "vae_batch", tr.vae_batch));
    tr.vae_lr = f.real("train", "vae_lr", tr.vae_lr);
    tr.checkpoint_every =
        static_cast<int>(f.integer("train", "checkpoint_every", tr.checkpoint_every));

    c.manifest_path = f.str("data", "manifest", c.manifest_path);
    c.vocab_path = f.str("data", "vocab", c.vocab_path);

    c.sample.sampler = f.str("sample", "sampler", c.sample.sampler);
    c.sample.steps = static_cast<int>(f.integer("sample", "steps", c.sample.steps));
    c.sample.guidance = f.real("sample", "guidance", c.sample.guidance);
    c.sample.fps = f.real("sample", "fps", c.sample.fps);
    c.sample.frames = static_cast<int>(f.integer("sample", "frames", c.sample.frames));

    c.out_dir = f.str("run", "out_dir", c.out_dir);
    c.seed = static_cast<uint64_t>(f.integer("run", "seed", static_cast<int64_t>(c.seed)));

    f.check_unknown();
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RunConfig::validate() const {
    try {
        model.validate();
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (sample.sampler != "ddim" && sample.sampler != "ddpm")
        throw ConfigError("config: sampler must be ddim or ddpm");
    if (sample.steps < 1 || sample.frames < 1 || sample.fps <= 0.0)
        throw ConfigError("config: bad sample defaults");
    if (sample.guidance < 0.0) throw ConfigError("config: guidance must be >= 0");
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    os.precision(17);
    const DenoiserConfig& d = model.denoiser;
    os << "[model]\n";
    os << "in_channels = " << d.in_channels << "\n";
    os << "base_width = " << d.base_width << "\n";
    os << "channel_multipliers = " << multipliers_to_string(d.channel_multipliers) << "\n";
    os << "blocks_per_level = " << d.blocks_per_level << "\n";
    os << "attention_heads = " << d.attention_heads << "\n";
    os << "head_dim = " << d.head_dim << "\n";
    os << "time_embed_dim = " << d.time_embed_dim << "\n";
    os << "sinusoidal_dim = " << d.sinusoidal_dim << "\n";
    os << "context_dim = " << d.context_dim << "\n";
    os << "max_frames = " << d.max_frames << "\n";
    os << "norm_groups = " << d.norm_groups << "\n";
    os << "use_image_branch = " << (d.use_image_branch ? "true" : "false") << "\n";
    os << "token_mode = " << (d.use_rich_tokens ? "rich" : "global") << "\n";
    os << "text_pad_len = " << model.text.pad_len << "\n";
    os << "text_layers = " << model.text.layers << "\n";
    os << "text_heads = " << model.text.heads << "\n";
    os << "image_size = " << model.image.image_size << "\n";
    os << "patch_size = " << model.image.patch_size << "\n";
    os << "vis_dim = " << model.image.vis_dim << "\n";
    os << "image_layers = " << model.image.layers << "\n";
    os << "image_heads = " << model.image.heads << "\n";
    os << "proj_hidden = " << model.proj_hidden << "\n";
    os << "\n[schedule]\n";
    os << "kind = " << to_string(model.schedule.kind) << "\n";
    os << "num_steps = " << model.schedule.num_steps << "\n";
    os << "beta_start = " << model.schedule.beta_start << "\n";
    os << "beta_end = " << model.schedule.beta_end << "\n";
    os << "\n[autoencoder]\n";
    os << "mode = " << to_string(model.vae.mode) << "\n";
    os << "down_factor = " << model.vae.down_factor << "\n";
    os << "latent_channels = " << model.vae.latent_channels << "\n";
    os << "image_channels = " << model.vae.image_channels << "\n";
    os << "base_width = " << model.vae.base_width << "\n";
    os << "norm_groups = " << model.vae.norm_groups << "\n";
    os << "latent_scale = " << model.vae.latent_scale << "\n";
    os << "\n[train]\n";
    os << "stage = " << to_string(train.stage) << "\n";
    os << "resolution_schedule = " << schedule_to_string(train.schedule) << "\n";
    os << "image_batch_ratio = " << train.image_batch_ratio << "\n";
    os << "learning_rate = " << train.learning_rate << "\n";
    os << "drop_text = " << train.drop_text << "\n";
    os << "drop_image = " << train.drop_image << "\n";
    os << "vae_steps = " << train.vae_steps << "\n";
    os << "vae_batch = " << train.vae_batch << "\n";
    os << "vae_lr = " << train.vae_lr << "\n";
    os << "checkpoint_every = " << train.checkpoint_every << "\n";
    os << "\n[data]\n";
    os << "manifest = " << manifest_path << "\n";
    os << "vocab = " << vocab_path << "\n";
    os << "\n[sample]\n";
    os << "sampler = " << sample.sampler << "\n";
    os << "steps = " << sample.steps << "\n";
    os << "guidance = " << sample.guidance << "\n";
    os << "fps = " << sample.fps << "\n";
    os << "frames = " << sample.frames << "\n";
    os << "\n[run]\n";
    os << "out_dir = " << out_dir << "\n";
    os << "seed = " << seed << "\n";
    return os.str();
}

}  // namespace lvd
