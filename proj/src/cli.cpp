#include "lvd/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "lvd/checkpoint.hpp"
#include "lvd/eval.hpp"
#include "lvd/image_io.hpp"
#include "lvd/sampler.hpp"

namespace lvd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitRuntime = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

Tensor clamp01(const Tensor& t) {
    Tensor out = t.detach();
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data()[i] = std::clamp(out.data()[i], 0.0, 1.0);
    return out;
}

std::string loss_record_json(const LossRecord& rec) {
    json j;
    j["step"] = rec.step;
    j["stage"] = rec.stage;
    j["loss"] = rec.loss;
    j["lr"] = rec.lr;
    return j.dump();
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out_dir;
    int clips = 24;
    int size = 16;
    int frames = 8;
    double speed = 8.0;
    uint64_t seed = 0;
    bool render = false;
};

int run_gen_data(const GenDataArgs& a) {
    fs::create_directories(a.out_dir);
    RngStream rng(derive_seed(a.seed, "gen-data"));

    const ShapeKind shapes[] = {ShapeKind::square, ShapeKind::circle, ShapeKind::triangle};
    const ColorName colors[] = {ColorName::red, ColorName::green, ColorName::blue,
                                ColorName::yellow};
    const MoveDir dirs[] = {MoveDir::left, MoveDir::right, MoveDir::up, MoveDir::down};
    const double fps_set[] = {2.0, 4.0, 8.0};

    // all attribute combos in a deterministic shuffled order, cycled as needed
    std::vector<ClipSpec> combos;
    for (auto sh : shapes)
        for (auto co : colors)
            for (auto di : dirs) {
                ClipSpec c;
                c.shape = sh;
                c.color = co;
                c.direction = di;
                combos.push_back(c);
            }
    for (size_t i = combos.size(); i > 1; --i)
        std::swap(combos[i - 1], combos[static_cast<size_t>(rng.randint(
                                     static_cast<int64_t>(i)))]);

    std::vector<ClipSpec> specs;
    for (int i = 0; i < a.clips; ++i) {
        ClipSpec c = combos[static_cast<size_t>(i) % combos.size()];
        c.fps = fps_set[static_cast<size_t>(rng.randint(3))];
        c.speed = a.speed;
        c.frames = a.frames;
        c.size = a.size;
        c.seed = rng.bits();
        specs.push_back(c);
    }

    std::string manifest = a.out_dir + "/manifest.txt";
    write_manifest(specs, manifest);
    Vocabulary vocab = Vocabulary::from_words(caption_vocabulary());
    vocab.save(a.out_dir + "/vocab.txt");

    if (a.render) {
        for (size_t i = 0; i < specs.size(); ++i) {
            RenderedClip clip = generate_clip(specs[i]);
            std::string dir = a.out_dir + "/clip_" + std::to_string(i);
            fs::create_directories(dir);
            for (int64_t f = 0; f < clip.video.dim(2); ++f) {
                char name[32];
                std::snprintf(name, sizeof(name), "/frame_%03d.ppm", static_cast<int>(f));
                write_ppm(dir + name, video_frame(clip.video, f));
            }
        }
    }
    std::cout << "wrote " << specs.size() << " clip specs to " << manifest << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string checkpoint;
    std::optional<uint64_t> seed;
    std::string out_dir;
};

int run_train(const TrainArgs& a) {
    RunConfig cfg = RunConfig::load(a.config_path);
    if (a.seed) cfg.seed = *a.seed;
    if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
    require_file(cfg.manifest_path, "manifest");
    std::vector<ClipSpec> specs = read_manifest(cfg.manifest_path);

    GenerativeModel model;
    TrainState state;
    RngSuite rng(cfg.seed);
    if (!a.checkpoint.empty()) {
        require_file(a.checkpoint, "checkpoint");
        LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
        model = std::move(loaded.model);
        state = std::move(loaded.state);
        rng = std::move(loaded.rng);
        // training hyperparameters come from the new config; the architecture
        // stays as stored in the checkpoint
        RunConfig stored = loaded.config;
        stored.train = cfg.train;
        stored.out_dir = cfg.out_dir;
        stored.manifest_path = cfg.manifest_path;
        stored.vocab_path = cfg.vocab_path;
        stored.sample = cfg.sample;
        cfg = stored;
    } else {
        require_file(cfg.vocab_path, "vocabulary");
        Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
        model = GenerativeModel::build(cfg.model, vocab, cfg.seed);
    }

    fs::create_directories(cfg.out_dir);
    std::ofstream history_file(cfg.out_dir + "/loss_history.jsonl", std::ios::app);
    if (!history_file) throw std::runtime_error("cannot open loss history for writing");

    TrainHooks hooks;
    hooks.on_record = [&](const LossRecord& rec) {
        history_file << loss_record_json(rec) << "\n";
        history_file.flush();
        if (rec.step % 50 == 0)
            std::cout << "step " << rec.step << " [" << rec.stage << "] loss " << rec.loss
                      << "\n";
    };
    hooks.save_checkpoint = [&](const std::string& tag) {
        cfg.model = model.cfg;  // pick up calibrated latent scale
        CheckpointMeta meta{state.global_step, tag};
        save_checkpoint(cfg.out_dir + "/" + tag + ".ckpt", model, cfg, state, rng, meta);
    };

    try {
        run_training(model, cfg.train, specs, rng, state, hooks);
    } catch (const TrainingDivergence& e) {
        std::cerr << "training diverged: " << e.what()
                  << " (last saved checkpoint retained)\n";
        return kExitRuntime;
    }
    cfg.model = model.cfg;
    CheckpointMeta meta{state.global_step, "final"};
    save_checkpoint(cfg.out_dir + "/final.ckpt", model, cfg, state, rng, meta);
    std::cout << "training done, checkpoint at " << cfg.out_dir << "/final.ckpt\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string checkpoint;
    std::optional<std::string> prompt;
    std::string image_path;
    std::optional<double> fps;
    std::optional<int> frames;
    std::optional<double> guidance;
    std::optional<int> steps;
    std::optional<int> size;
    uint64_t seed = 0;
    std::string out_dir = "samples";
    std::string mode;  // "", "rich", "global"
    bool gif = false;
    bool i2v = false;
};

int run_sample(const SampleArgs& a) {
    require_file(a.checkpoint, "checkpoint");
    LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
    GenerativeModel& model = loaded.model;
    const RunConfig& cfg = loaded.config;

    if (a.i2v && !model.has_image_branch())
        throw ConfigError("sample-i2v needs a checkpoint trained with an image branch");
    if (!a.mode.empty())
        model.cfg.denoiser.use_rich_tokens =
            token_mode_from_string(a.mode) == TokenMode::rich;

    double fps = a.fps.value_or(cfg.sample.fps);
    int frames = a.frames.value_or(cfg.sample.frames);
    int steps = a.steps.value_or(cfg.sample.steps);
    double guidance = a.guidance.value_or(cfg.sample.guidance);
    int size = a.size.value_or(model.cfg.image.image_size);

    std::optional<Tensor> image;
    if (!a.image_path.empty()) {
        require_file(a.image_path, "conditioning image");
        image = read_ppm(a.image_path);
    }

    ConditioningStack stack = model.conditioning();
    ConditioningBundle bundle =
        make_bundle(stack, a.prompt ? &*a.prompt : nullptr, image ? &*image : nullptr, fps);

    int64_t f = model.cfg.vae.down_factor;
    if (size % f != 0) throw ConfigError("sample size must be divisible by the VAE factor");
    Shape latent_shape{1, model.cfg.denoiser.in_channels, frames, size / f, size / f};

    Tensor latent;
    if (cfg.sample.sampler == "ddpm")
        latent = ddpm_sample(model, bundle, latent_shape, model.schedule, guidance, a.seed);
    else
        latent = ddim_sample(model, bundle, latent_shape, model.schedule, steps, guidance,
                             a.seed);

    Tensor pixels;
    {
        NoGradGuard guard;
        pixels = clamp01(model.vae.decode_video(latent));
    }

    fs::create_directories(a.out_dir);
    std::vector<Tensor> frame_list;
    for (int64_t fr = 0; fr < pixels.dim(2); ++fr) {
        Tensor frame = video_frame(pixels, fr);
        frame_list.push_back(frame);
        char name[32];
        std::snprintf(name, sizeof(name), "/frame_%03d.ppm", static_cast<int>(fr));
        write_ppm(a.out_dir + name, frame);
    }
    write_ppm(a.out_dir + "/grid.ppm", frames_grid(frame_list));
    if (a.gif) write_gif(a.out_dir + "/sample.gif", frame_list, fps);
    std::cout << "wrote " << frame_list.size() << " frames to " << a.out_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string out_dir = "eval_out";
    uint64_t seed = 0;
    std::optional<int> steps;
    std::optional<double> guidance;
    int max_clips = 16;
    std::string mode;
};

int run_eval(const EvalArgs& a) {
    require_file(a.checkpoint, "checkpoint");
    LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
    GenerativeModel& model = loaded.model;
    if (!a.mode.empty())
        model.cfg.denoiser.use_rich_tokens =
            token_mode_from_string(a.mode) == TokenMode::rich;
    std::string manifest = a.manifest.empty() ? loaded.config.manifest_path : a.manifest;
    require_file(manifest, "manifest");
    std::vector<ClipSpec> specs = read_manifest(manifest);
    if (specs.empty()) throw std::runtime_error("eval: manifest has no clips");
    if (static_cast<int>(specs.size()) > a.max_clips) specs.resize(a.max_clips);

    int steps = a.steps.value_or(loaded.config.sample.steps);
    double guidance = a.guidance.value_or(loaded.config.sample.guidance);

    // judge trained on ground-truth renders over the full attribute grid
    std::vector<ClipSpec> probe_specs;
    {
        RngStream rng(derive_seed(a.seed, "eval_probe_data"));
        for (int shape = 0; shape < 3; ++shape)
            for (int color = 0; color < 4; ++color)
                for (int dir = 0; dir < 4; ++dir)
                    for (int rep = 0; rep < 3; ++rep) {
                        ClipSpec c;
                        c.shape = static_cast<ShapeKind>(shape);
                        c.color = static_cast<ColorName>(color);
                        c.direction = static_cast<MoveDir>(dir);
                        c.fps = rep == 0 ? 2.0 : (rep == 1 ? 4.0 : 8.0);
                        c.speed = specs[0].speed;
                        c.frames = specs[0].frames;
                        c.size = specs[0].size;
                        c.seed = rng.bits();
                        probe_specs.push_back(c);
                    }
    }
    AttributeProbe probe = train_attribute_probe(probe_specs, a.seed);

    fs::create_directories(a.out_dir);
    std::ofstream report(a.out_dir + "/report.txt");
    std::ofstream records(a.out_dir + "/report.jsonl");

    ConditioningStack stack = model.conditioning();
    double sum_recon = 0, sum_tc = 0, sum_motion = 0, sum_linerr = 0;
    int attr_correct = 0, attr_total = 0;

    for (size_t i = 0; i < specs.size(); ++i) {
        const ClipSpec& spec = specs[i];
        RenderedClip truth = generate_clip(spec);

        // autoencoder reconstruction on the ground-truth clip
        double recon_psnr;
        {
            NoGradGuard guard;
            Tensor rec = clamp01(model.vae.decode_video(model.vae.encode_video(truth.video)));
            recon_psnr = frame_psnr(video_frame(rec, 0), video_frame(truth.video, 0));
        }

        std::optional<Tensor> cond_image;
        if (model.has_image_branch()) cond_image = video_frame(truth.video, 0);
        ConditioningBundle bundle = make_bundle(stack, &truth.caption,
                                                cond_image ? &*cond_image : nullptr, spec.fps);
        int64_t f = model.cfg.vae.down_factor;
        Shape latent_shape{1, model.cfg.denoiser.in_channels, spec.frames, spec.size / f,
                           spec.size / f};
        Tensor latent = ddim_sample(model, bundle, latent_shape, model.schedule, steps,
                                    guidance, derive_seed(a.seed, "eval" + std::to_string(i)));
        Tensor sample;
        {
            NoGradGuard guard;
            sample = clamp01(model.vae.decode_video(latent));
        }

        double tc = temporal_consistency(sample);
        double motion = mean_centroid_displacement(sample);
        double linerr = trajectory_linearity_error(sample);
        AttributeFlags flags = attribute_probe(sample, truth.caption, probe);
        int ok = (flags.shape_ok ? 1 : 0) + (flags.color_ok ? 1 : 0) +
                 (flags.direction_ok ? 1 : 0);
        attr_correct += ok;
        attr_total += 3;
        sum_recon += recon_psnr;
        sum_tc += tc;
        sum_motion += motion;
        sum_linerr += linerr;

        json rec;
        rec["caption"] = truth.caption;
        rec["fps"] = spec.fps;
        rec["recon_psnr_db"] = recon_psnr;
        rec["temporal_consistency"] = tc;
        rec["motion_magnitude_px"] = motion;
        rec["trajectory_linearity_error"] = linerr;
        rec["shape_ok"] = flags.shape_ok;
        rec["color_ok"] = flags.color_ok;
        rec["direction_ok"] = flags.direction_ok;
        rec["low_confidence"] = flags.low_confidence;
        records << rec.dump() << "\n";
    }

    double n = static_cast<double>(specs.size());
    char line[256];
    report << "metric                         value\n";
    report << "-----------------------------  --------\n";
    std::snprintf(line, sizeof(line), "%-30s  %.2f dB\n", "recon_psnr (visual quality)",
                  sum_recon / n);
    report << line;
    std::snprintf(line, sizeof(line), "%-30s  %.3f\n", "attribute_accuracy (alignment)",
                  attr_total ? static_cast<double>(attr_correct) / attr_total : 0.0);
    report << line;
    std::snprintf(line, sizeof(line), "%-30s  %.3f px\n", "trajectory_error (motion)",
                  sum_linerr / n);
    report << line;
    std::snprintf(line, sizeof(line), "%-30s  %.4f\n", "temporal_consistency",
                  sum_tc / n);
    report << line;
    std::snprintf(line, sizeof(line), "%-30s  %.3f px/frame\n", "motion_magnitude",
                  sum_motion / n);
    report << line;

    json summary;
    summary["summary"] = true;
    summary["clips"] = specs.size();
    summary["recon_psnr_db"] = sum_recon / n;
    summary["attribute_accuracy"] = attr_total ? static_cast<double>(attr_correct) / attr_total
                                               : 0.0;
    summary["temporal_consistency"] = sum_tc / n;
    summary["motion_magnitude_px"] = sum_motion / n;
    summary["trajectory_linearity_error"] = sum_linerr / n;
    records << summary.dump() << "\n";

    std::cout << "eval report written to " << a.out_dir << "/report.txt\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// export-gif
// ---------------------------------------------------------------------------

struct ExportGifArgs {
    std::string frames_dir;
    std::string out_path = "out.gif";
    double fps = 8.0;
};

int run_export_gif(const ExportGifArgs& a) {
    if (!fs::is_directory(a.frames_dir))
        throw std::runtime_error("frames directory not found: " + a.frames_dir);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a.frames_dir))
        if (e.path().extension() == ".ppm") names.push_back(e.path().string());
    if (names.empty()) throw std::runtime_error("no .ppm frames in " + a.frames_dir);
    std::sort(names.begin(), names.end());
    std::vector<Tensor> frames;
    for (const auto& p : names) frames.push_back(read_ppm(p));
    write_gif(a.out_path, frames, a.fps);
    std::cout << "wrote " << frames.size() << " frames to " << a.out_path << "\n";
    return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"desk-scale latent video diffusion"};
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic clip manifest");
    cmd_gen->add_option("--out", gen.out_dir, "output directory")->required();
    cmd_gen->add_option("--clips", gen.clips, "number of clips");
    cmd_gen->add_option("--size", gen.size, "frame size in pixels");
    cmd_gen->add_option("--frames", gen.frames, "frames per clip");
    cmd_gen->add_option("--speed", gen.speed, "shape speed in px/s");
    cmd_gen->add_option("--seed", gen.seed, "random seed");
    cmd_gen->add_flag("--render", gen.render, "also write PPM frames");

    TrainArgs train;
    CLI::App* cmd_train = app.add_subcommand("train", "run a training stage");
    cmd_train->add_option("--config", train.config_path, "run config file")->required();
    cmd_train->add_option("--checkpoint", train.checkpoint, "resume checkpoint");
    uint64_t train_seed = 0;
    CLI::Option* train_seed_opt = cmd_train->add_option("--seed", train_seed, "seed override");
    cmd_train->add_option("--out", train.out_dir, "output directory override");

    auto add_sample_flags = [](CLI::App* cmd, SampleArgs& s) {
        cmd->add_option("--checkpoint", s.checkpoint, "model checkpoint")->required();
        cmd->add_option("--fps", s.fps, "frames per second conditioning");
        cmd->add_option("--frames", s.frames, "frame count");
        cmd->add_option("--guidance", s.guidance, "guidance scale");
        cmd->add_option("--steps", s.steps, "sampler steps");
        cmd->add_option("--size", s.size, "pixel size");
        cmd->add_option("--seed", s.seed, "random seed");
        cmd->add_option("--out", s.out_dir, "output directory");
        cmd->add_option("--mode", s.mode, "token mode: rich|global")
            ->check(CLI::IsMember({"rich", "global"}));
        cmd->add_flag("--gif", s.gif, "also write an animated gif");
    };

    SampleArgs t2v;
    std::string t2v_prompt;
    CLI::App* cmd_t2v = app.add_subcommand("sample-t2v", "text-to-video sampling");
    CLI::Option* t2v_prompt_opt = cmd_t2v->add_option("--prompt", t2v_prompt, "text prompt");
    add_sample_flags(cmd_t2v, t2v);

    SampleArgs i2v;
    i2v.i2v = true;
    std::string i2v_prompt;
    CLI::App* cmd_i2v = app.add_subcommand("sample-i2v", "image-to-video sampling");
    CLI::Option* i2v_prompt_opt = cmd_i2v->add_option("--prompt", i2v_prompt, "text prompt");
    cmd_i2v->add_option("--image", i2v.image_path, "conditioning image (PPM)");
    add_sample_flags(cmd_i2v, i2v);

    EvalArgs ev;
    CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    cmd_eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
    cmd_eval->add_option("--manifest", ev.manifest, "held-out manifest");
    cmd_eval->add_option("--out", ev.out_dir, "output directory");
    cmd_eval->add_option("--seed", ev.seed, "random seed");
    cmd_eval->add_option("--steps", ev.steps, "sampler steps");
    cmd_eval->add_option("--guidance", ev.guidance, "guidance scale");
    cmd_eval->add_option("--max-clips", ev.max_clips, "evaluate at most this many clips");
    cmd_eval->add_option("--mode", ev.mode, "token mode: rich|global")
        ->check(CLI::IsMember({"rich", "global"}));

    ExportGifArgs gif;
    CLI::App* cmd_gif = app.add_subcommand("export-gif", "bundle PPM frames into a gif");
    cmd_gif->add_option("--frames-dir", gif.frames_dir, "directory of .ppm frames")
        ->required();
    cmd_gif->add_option("--out", gif.out_path, "output gif path");
    cmd_gif->add_option("--fps", gif.fps, "playback rate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*cmd_gen) return run_gen_data(gen);
        if (*cmd_train) {
            if (*train_seed_opt) train.seed = train_seed;
            return run_train(train);
        }
        if (*cmd_t2v) {
            if (*t2v_prompt_opt) t2v.prompt = t2v_prompt;
            return run_sample(t2v);
        }
        if (*cmd_i2v) {
            if (*i2v_prompt_opt) i2v.prompt = i2v_prompt;
            if (!i2v.prompt && i2v.image_path.empty()) {
                std::cerr << "sample-i2v needs an image, a prompt, or both\n";
                return kExitUsage;
            }
            return run_sample(i2v);
        }
        if (*cmd_eval) return run_eval(ev);
        if (*cmd_gif) return run_export_gif(gif);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace lvd
