#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcf/dataset.hpp"
#include "lcf/loss.hpp"
#include "lcf/model.hpp"
#include "lcf/rng.hpp"

namespace lcf {

enum class ProxySource { patch, external };

struct TrainConfig {
    LossKind loss_kind = LossKind::gaussian_star;
    ProxyReducer reducer = ProxyReducer::min;
    int window = 9;
    bool include_center = true;
    ProxySource proxy_source = ProxySource::patch;
    double learning_rate = 1e-5;
    int batch_size = 2;
    int epochs = 3;
    int crop_width = 1216, crop_height = 320;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::uint64_t seed = 0;
    double grad_clip = 0.0;         // 0 disables clipping
    bool reject_empty_crops = false; // resample crops with no valid pixel
    int threads = 1;

    void validate() const;
    std::string to_text() const;
    static TrainConfig from_text(const std::string& text);
};

struct TrainStepLog {
    long step = 0;
    double loss = 0.0;
    std::size_t valid_px = 0;
    double grad_norm = 0.0;
};

struct TrainEpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    long steps = 0;
    long skipped = 0;
};

struct TrainLog {
    std::vector<TrainStepLog> steps; // rows with valid_px == 0 are skipped steps
    std::vector<TrainEpochLog> epochs;
    double wall_time_s = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

struct TrainResult {
    ModelParams params; // last finite-loss parameters when aborted
    TrainLog log;
};

struct CropRect {
    int x = 0, y = 0, width = 0, height = 0;
};

// Uniform random top-left; throws if the crop exceeds the frame.
CropRect sample_crop(int frame_width, int frame_height, int crop_width, int crop_height,
                     Rng& rng);

// Crops image+depth, computes proxy labels from the cropped depth alone
// (patch mode) or from the cropped reference (external mode), and lists the
// trainable pixels.
CropBatchItem prepare_crop_item(const Frame& frame, const CropRect& rect,
                                const TrainConfig& cfg, const ArchConfig& arch);

struct AdamState {
    ParamSet m, v;

    static AdamState like(const ParamSet& params);
};

// One Adam update with bias correction; t counts applied updates from 1.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, long t,
               double lr, double beta1, double beta2, double eps);

// Full training loop: per step, sample batch crops, recompute proxies on the
// crops, forward/backward, Adam. Frames are reshuffled each epoch; every
// random draw comes from one generator seeded with cfg.seed, so the run is
// bit-reproducible. A non-finite loss or gradient aborts before the update.
TrainResult train(const std::vector<Frame>& dataset, const ArchConfig& arch,
                  const TrainConfig& cfg);

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);
void write_epochs_csv(const TrainLog& log, const std::filesystem::path& path);

} // namespace lcf
