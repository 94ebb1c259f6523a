#include "lvd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lvd {

TrainStage train_stage_from_string(const std::string& s) {
    if (s == "t2v") return TrainStage::t2v;
    if (s == "i2v_projection") return TrainStage::i2v_projection;
    if (s == "i2v_finetune") return TrainStage::i2v_finetune;
    throw std::invalid_argument("unknown training stage: " + s);
}

std::string to_string(TrainStage s) {
    switch (s) {
        case TrainStage::t2v: return "t2v";
        case TrainStage::i2v_projection: return "i2v_projection";
        case TrainStage::i2v_finetune: return "i2v_finetune";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (schedule.empty()) throw std::invalid_argument("train config: empty schedule");
    for (const auto& st : schedule) {
        if (st.steps < 0 || st.batch_size < 1 || st.size < 8 || st.frames < 1)
            throw std::invalid_argument("train config: bad stage spec");
    }
    if (image_batch_ratio < 0.0 || image_batch_ratio > 1.0)
        throw std::invalid_argument("train config: image_batch_ratio must be in [0,1]");
    if (drop_text < 0.0 || drop_text > 1.0 || drop_image < 0.0 || drop_image > 1.0)
        throw std::invalid_argument("train config: dropout probabilities must be in [0,1]");
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: bad learning rate");
}

FreezeMask set_training_stage(TrainStage stage, const GenerativeModel& model) {
    if (stage != TrainStage::t2v && !model.has_image_branch())
        throw std::invalid_argument(
            "set_training_stage: i2v stage requested on a model without an image branch");

    auto is_image_adapter = [](const std::string& name) {
        // the two newly added cross-attention maps
        return name.ends_with(".wk_img") || name.ends_with(".wv_img");
    };
    auto has_prefix = [](const std::string& name, const char* p) {
        return name.rfind(p, 0) == 0;
    };

    FreezeMask mask;
    const ParamStore& ps = model.params;
    mask.trainable.resize(ps.size(), 0);
    for (size_t i = 0; i < ps.size(); ++i) {
        const std::string& name = const_cast<ParamStore&>(ps).name(i);
        bool t = false;
        switch (stage) {
            case TrainStage::t2v:
                // everything except the (frozen-by-convention) autoencoder
                t = !has_prefix(name, "vae.");
                break;
            case TrainStage::i2v_projection:
                t = has_prefix(name, "proj.") || is_image_adapter(name);
                break;
            case TrainStage::i2v_finetune:
                // text/image embedding mappings stay fixed; backbone trains
                t = !has_prefix(name, "vae.") && !has_prefix(name, "text_enc.") &&
                    !has_prefix(name, "img_enc.") && !has_prefix(name, "proj.") &&
                    !has_prefix(name, "cond.");
                break;
        }
        mask.trainable[i] = t ? 1 : 0;
    }
    return mask;
}

std::vector<TrainSample> make_joint_batch(const VideoSource& videos,
                                          const ImageSource& images, double ratio,
                                          int batch_size, RngStream& rng,
                                          bool attach_condition_image) {
    if (ratio < 0.0 || ratio > 1.0)
        throw std::invalid_argument("make_joint_batch: ratio must be in [0,1]");
    bool image_batch = rng.uniform() < ratio;
    std::vector<TrainSample> batch;
    batch.reserve(static_cast<size_t>(batch_size));
    if (image_batch) {
        if (images.items.empty())
            throw std::invalid_argument("make_joint_batch: image source is empty");
        for (int i = 0; i < batch_size; ++i) {
            const auto& item =
                images.items[static_cast<size_t>(rng.randint(
                    static_cast<int64_t>(images.items.size())))];
            TrainSample s;
            s.video = reshape(item.image, {1, item.image.dim(0), 1, item.image.dim(1),
                                           item.image.dim(2)});
            s.prompt = item.caption;
            if (attach_condition_image) s.image = item.image;
            s.fps = item.fps;
            batch.push_back(std::move(s));
        }
    } else {
        if (videos.clips.empty())
            throw std::invalid_argument("make_joint_batch: video source is empty");
        for (int i = 0; i < batch_size; ++i) {
            const auto& clip =
                videos.clips[static_cast<size_t>(rng.randint(
                    static_cast<int64_t>(videos.clips.size())))];
            TrainSample s;
            s.video = clip.video;
            s.prompt = clip.caption;
            if (attach_condition_image) s.image = video_frame(clip.video, 0);
            s.fps = clip.fps;
            batch.push_back(std::move(s));
        }
    }
    return batch;
}

Tensor diffusion_loss_core(const NoisePredictor& predict, const Tensor& z0,
                           const std::vector<ConditioningBundle>& bundles,
                           const NoiseSchedule& schedule, RngStream& rng_timestep,
                           RngStream& rng_noise) {
    if (z0.rank() != 5) throw std::invalid_argument("diffusion_loss: z0 must be rank-5");
    int64_t b = z0.dim(0);
    if (static_cast<int64_t>(bundles.size()) != b)
        throw std::invalid_argument("diffusion_loss: bundle count mismatch");
    if (!all_finite(z0))
        throw TrainingDivergence("diffusion_loss: non-finite latents in batch");

    int64_t per = z0.numel() / b;
    std::vector<int> ts(static_cast<size_t>(b));
    std::vector<double> fps(static_cast<size_t>(b));
    Tensor noise = Tensor::zeros(z0.shape());
    Tensor z_t = Tensor::zeros(z0.shape());
    for (int64_t i = 0; i < b; ++i) {
        ts[i] = static_cast<int>(rng_timestep.randint(schedule.num_steps)) + 1;
        fps[i] = bundles[static_cast<size_t>(i)].fps;
        double a = std::sqrt(schedule.alpha_bar(ts[i]));
        double s = std::sqrt(1.0 - schedule.alpha_bar(ts[i]));
        double* pn = noise.data() + i * per;
        double* pz = z_t.data() + i * per;
        const double* p0 = z0.data() + i * per;
        for (int64_t j = 0; j < per; ++j) {
            pn[j] = rng_noise.gaussian();
            pz[j] = a * p0[j] + s * pn[j];
        }
    }

    Tensor eps_hat = predict(z_t, ts, fps, stack_bundles(bundles));
    Tensor loss = mse(eps_hat, noise);
    if (!std::isfinite(loss.item()))
        throw TrainingDivergence("diffusion_loss: non-finite loss");
    return loss;
}

Tensor diffusion_loss(const std::vector<TrainSample>& batch, const GenerativeModel& model,
                      const NoiseSchedule& schedule, RngSuite& rng, double drop_text,
                      double drop_image) {
    if (batch.empty()) throw std::invalid_argument("diffusion_loss: empty batch");
    std::vector<Tensor> vids;
    for (const auto& s : batch) vids.push_back(s.video);
    Tensor pixels = concat(vids, 0);
    Tensor z0;
    {
        NoGradGuard guard;
        z0 = model.vae.encode_video(pixels);
    }
    ConditioningStack stack = model.conditioning();
    std::vector<ConditioningBundle> bundles;
    RngStream& drop_rng = rng.stream("dropout");
    for (const auto& s : batch)
        bundles.push_back(assemble_conditioning(stack, s.prompt,
                                                s.image ? &*s.image : nullptr, s.fps,
                                                drop_text, drop_image, drop_rng));
    NoisePredictor predict = [&model](const Tensor& z_t, const std::vector<int>& t,
                                      const std::vector<double>& fps,
                                      const BatchedCond& cond) {
        return model.predict_noise(z_t, t, fps, cond);
    };
    return diffusion_loss_core(predict, z0, bundles, schedule, rng.stream("timestep"),
                               rng.stream("noise"));
}

double train_autoencoder(GenerativeModel& model, const std::vector<ClipSpec>& specs,
                         int steps, int batch_size, double lr, RngSuite& rng,
                         TrainState& state) {
    if (model.cfg.vae.mode != AutoencoderMode::conv)
        throw std::invalid_argument("train_autoencoder: autoencoder is not in conv mode");
    // frame pool from every clip
    std::vector<Tensor> frames;
    for (const auto& spec : specs) {
        RenderedClip clip = generate_clip(spec);
        for (int64_t f = 0; f < clip.video.dim(2); ++f) {
            Tensor fr = video_frame(clip.video, f);
            frames.push_back(reshape(fr, {1, fr.dim(0), fr.dim(1), fr.dim(2)}));
        }
    }
    if (frames.empty()) throw std::invalid_argument("train_autoencoder: no frames");

    FreezeMask vae_only;
    vae_only.trainable.resize(model.params.size(), 0);
    for (size_t i = 0; i < model.params.size(); ++i)
        if (model.params.name(i).rfind("vae.", 0) == 0) vae_only.trainable[i] = 1;

    RngStream& data_rng = rng.stream("vae_data");
    double last = 0.0;
    double saved_lr = state.opt.lr;
    state.opt.lr = lr;
    for (int step = 0; step < steps; ++step) {
        std::vector<Tensor> pick;
        for (int i = 0; i < batch_size; ++i)
            pick.push_back(frames[static_cast<size_t>(
                data_rng.randint(static_cast<int64_t>(frames.size())))]);
        Tensor x = concat(pick, 0);
        model.params.zero_grad();
        Tensor rec = model.vae.decode_frames(model.vae.encode_frames(x));
        Tensor loss = mse(rec, x);
        loss.backward();
        state.opt.step(model.params, vae_only.trainable);
        last = loss.item();
        if (!std::isfinite(last)) throw TrainingDivergence("autoencoder loss diverged");
    }
    state.opt.lr = saved_lr;

    // calibrate the latent scale so diffusion sees roughly unit-variance latents
    {
        NoGradGuard guard;
        double sum = 0.0, sumsq = 0.0;
        int64_t count = 0;
        for (const auto& fr : frames) {
            Tensor z = model.vae.encode_frames(fr);
            for (int64_t i = 0; i < z.numel(); ++i) {
                sum += z.data()[i];
                sumsq += z.data()[i] * z.data()[i];
            }
            count += z.numel();
        }
        double mean = sum / static_cast<double>(count);
        double var = sumsq / static_cast<double>(count) - mean * mean;
        double stddev = std::sqrt(std::max(var, 1e-12));
        model.vae.set_latent_scale(1.0 / stddev);
        model.cfg.vae.latent_scale = 1.0 / stddev;
    }
    return last;
}

std::vector<LossRecord> run_training(GenerativeModel& model, const TrainConfig& cfg,
                                     const std::vector<ClipSpec>& specs, RngSuite& rng,
                                     TrainState& state, const TrainHooks& hooks) {
    cfg.validate();
    if (specs.empty()) throw std::invalid_argument("run_training: no clip specs");

    if (cfg.stage == TrainStage::t2v && cfg.vae_steps > 0 &&
        model.cfg.vae.mode == AutoencoderMode::conv)
        train_autoencoder(model, specs, cfg.vae_steps, cfg.vae_batch, cfg.vae_lr, rng, state);

    FreezeMask mask = set_training_stage(cfg.stage, model);
    bool attach_image = model.has_image_branch();
    state.opt.lr = cfg.learning_rate;

    std::vector<LossRecord> history;
    RngStream& data_rng = rng.stream("data");

    for (size_t stage_idx = 0; stage_idx < cfg.schedule.size(); ++stage_idx) {
        const StageSpec& st = cfg.schedule[stage_idx];
        // render this stage's data pool
        VideoSource videos;
        ImageSource images;
        for (const auto& spec : specs) {
            RenderedClip clip = generate_clip(with_resolution(spec, st.size, st.frames));
            ImageSource::Item item{video_frame(clip.video, 0), clip.caption, clip.fps};
            videos.clips.push_back(std::move(clip));
            images.items.push_back(std::move(item));
        }

        for (int step = 0; step < st.steps; ++step) {
            std::vector<TrainSample> batch =
                make_joint_batch(videos, images, cfg.image_batch_ratio, st.batch_size,
                                 data_rng, attach_image);
            model.params.zero_grad();
            Tensor loss = diffusion_loss(batch, model, model.schedule, rng, cfg.drop_text,
                                         cfg.drop_image);
            loss.backward();
            state.opt.step(model.params, mask.trainable);

            LossRecord rec{state.global_step, to_string(cfg.stage), loss.item(),
                           state.opt.lr};
            ++state.global_step;
            history.push_back(rec);
            if (hooks.on_record) hooks.on_record(rec);
            if (hooks.save_checkpoint && cfg.checkpoint_every > 0 &&
                (step + 1) % cfg.checkpoint_every == 0)
                hooks.save_checkpoint("step" + std::to_string(state.global_step));
        }
        if (hooks.save_checkpoint)
            hooks.save_checkpoint("stage" + std::to_string(stage_idx));
    }
    return history;
}

}  // namespace lvd
