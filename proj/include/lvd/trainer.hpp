#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lvd/data.hpp"
#include "lvd/model.hpp"

namespace lvd {

enum class TrainStage { t2v, i2v_projection, i2v_finetune };
TrainStage train_stage_from_string(const std::string& s);
std::string to_string(TrainStage s);

// thrown when a loss goes non-finite; the last written checkpoint stays valid
struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StageSpec {
    int size = 16;        // pixel resolution of rendered clips
    int frames = 8;
    int steps = 0;
    int batch_size = 4;
};

struct TrainConfig {
    TrainStage stage = TrainStage::t2v;
    std::vector<StageSpec> schedule = {StageSpec{}};
    double image_batch_ratio = 0.0;   // probability a batch is single-frame images
    double learning_rate = 1e-3;
    double drop_text = 0.1;
    double drop_image = 0.1;
    int vae_steps = 0;                // reconstruction pretraining (t2v stage only)
    int vae_batch = 16;
    double vae_lr = 2e-3;
    int checkpoint_every = 0;         // 0 = stage boundaries only
    void validate() const;
};

// per-parameter-group trainable flags, indexed like the model's ParamStore
struct FreezeMask {
    std::vector<uint8_t> trainable;
    bool is_trainable(size_t i) const { return trainable.empty() || trainable[i]; }
};

FreezeMask set_training_stage(TrainStage stage, const GenerativeModel& model);

struct TrainSample {
    Tensor video;                  // [1,C,F,H,W] pixel space
    std::string prompt;
    std::optional<Tensor> image;   // [C,H,W] conditioning image (I2V)
    double fps = 8.0;
};

struct VideoSource {
    std::vector<RenderedClip> clips;
};
struct ImageSource {
    struct Item {
        Tensor image;  // [C,H,W]
        std::string caption;
        double fps;
    };
    std::vector<Item> items;
};

// Whole batches come from one modality: with probability `ratio` the batch is
// single-frame images, otherwise videos. Both flow through the same loss path.
std::vector<TrainSample> make_joint_batch(const VideoSource& videos,
                                          const ImageSource& images, double ratio,
                                          int batch_size, RngStream& rng,
                                          bool attach_condition_image);

using NoisePredictor =
    std::function<Tensor(const Tensor& z_t, const std::vector<int>& t,
                         const std::vector<double>& fps, const BatchedCond& cond)>;

// epsilon-prediction MSE with per-sample uniform timesteps; z0 are latents
Tensor diffusion_loss_core(const NoisePredictor& predict, const Tensor& z0,
                           const std::vector<ConditioningBundle>& bundles,
                           const NoiseSchedule& schedule, RngStream& rng_timestep,
                           RngStream& rng_noise);

// full path: framewise encode, conditioning assembly with dropout, denoise
Tensor diffusion_loss(const std::vector<TrainSample>& batch, const GenerativeModel& model,
                      const NoiseSchedule& schedule, RngSuite& rng, double drop_text,
                      double drop_image);

struct LossRecord {
    int64_t step = 0;
    std::string stage;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainState {
    AdamOptimizer opt;
    int64_t global_step = 0;
};

struct TrainHooks {
    // called at stage boundaries and every checkpoint_every steps when set
    std::function<void(const std::string& tag)> save_checkpoint;
    std::function<void(const LossRecord&)> on_record;
};

// Executes the resolution stages in order, mutating the model in place.
// Returns the loss history of this call. Deterministic given the rng suite.
std::vector<LossRecord> run_training(GenerativeModel& model, const TrainConfig& cfg,
                                     const std::vector<ClipSpec>& specs, RngSuite& rng,
                                     TrainState& state, const TrainHooks& hooks = {});

// reconstruction pretraining for the conv autoencoder; returns final loss and
// calibrates the latent scale from the training frames
double train_autoencoder(GenerativeModel& model, const std::vector<ClipSpec>& specs,
                         int steps, int batch_size, double lr, RngSuite& rng,
                         TrainState& state);

}  // namespace lvd
