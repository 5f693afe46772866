#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcf/depthio.hpp"
#include "lcf/geometry.hpp"
#include "lcf/image.hpp"
#include "lcf/loss.hpp"
#include "lcf/tensor.hpp"

namespace lcf {

// Encoder/head layout. Channel counts are stored at reference scale and
// multiplied by width_num/width_den (then clamped to >= 1) for reduced-width
// runs; the six pyramid scales are always built, scale_subset only selects
// which of them feed the head.
struct ArchConfig {
    std::array<int, 3> stem_channels{32, 64, 64};
    std::array<int, 5> block_channels{128, 256, 512, 512, 512};
    std::vector<int> mlp_hidden{512, 128};
    double leaky_slope = 0.01;
    std::vector<int> scale_subset{1, 2, 4, 8, 16, 32}; // scale denominators
    int width_num = 1, width_den = 1;
    double depth_scale = 100.0; // depth channel is divided by this

    static ArchConfig reference(); // full-width 16M-parameter configuration
    static ArchConfig desk();      // width 1/8, for small-raster runs

    int scaled(int base) const;
    std::vector<int> pyramid_channels() const; // per scale, denominators 1..32
    static const std::array<int, 6>& pyramid_denoms();
    int feature_dim() const;                // concatenated width over scale_subset
    std::vector<int> mlp_layer_widths() const; // [feature_dim, hidden..., 1]
    void validate() const;

    std::string to_text() const;
    static ArchConfig from_text(const std::string& text);
};

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> v;

    std::size_t numel() const { return v.size(); }
};

// Flat list of tensors in a fixed declaration order; also used for gradients
// and optimizer state.
struct ParamSet {
    std::vector<ParamTensor> tensors;

    std::size_t total_count() const;
    void zero();
};

ParamSet make_param_set(const ArchConfig& config); // zero-filled, final shapes

struct ModelParams {
    ArchConfig arch;
    ParamSet set;

    std::size_t count() const { return set.total_count(); }
};

class Rng;

// He-style init: zero-mean normals with variance 2 / ((1 + slope^2) * fan_in),
// biases zero. Deterministic in (config, seed).
ModelParams init_params(const ArchConfig& config, std::uint64_t seed);
void init_params_into(ModelParams& params, Rng& rng);

struct FeaturePyramid {
    std::vector<int> denoms;
    std::vector<Tensor> feats;
};

// 4-channel encoder input: RGB in [0,1] plus depth / depth_scale.
Tensor make_model_input(const Image& image, const SparseDepthMap& depth, double depth_scale);

// Stem (3 convs) + five blocks of maxpool(2x2, ceil) and two convs, leaky ReLU
// after every conv. Requires H, W >= 32.
FeaturePyramid encoder_forward(const Image& image, const SparseDepthMap& depth,
                               const ModelParams& params);

// Per-pixel feature vector: nearest-cell lookup floor(u/k), floor(v/k) at each
// selected scale, concatenated finest-first. Throws if (u, v) is outside the
// full-resolution raster.
std::vector<double> sample_features(const FeaturePyramid& pyramid, int u, int v,
                                    const std::vector<int>& scale_subset);

// Fully connected head; leaky ReLU between layers, final layer linear.
double mlp_forward(const std::vector<double>& features, const ModelParams& params);

// sigma = 1 + softplus(raw), with softplus clamped below at 1e-12 so the
// sigma >= 1 + 1e-12 floor survives underflow.
double sigma_from_raw(double raw);

// sigma for every valid pixel of the depth map (0 elsewhere).
ConfidenceMap infer_confidence(const Image& image, const SparseDepthMap& depth,
                               const ModelParams& params);

// --- training-path evaluation ---

struct PixelSample {
    int u = 0, v = 0;
    double d = 0.0, d_star = 0.0;
};

struct CropBatchItem {
    Tensor input; // 4 x H x W
    std::vector<PixelSample> pixels;
};

struct ModelBackwardResult {
    ParamSet grads;           // gradient of loss_scale * mean per-pixel loss
    double mean_loss = 0.0;
    std::size_t valid_pixels = 0;
    bool skipped = false;     // no valid pixel in the whole batch
};

// Reverse-mode gradients of the mean per-pixel loss over all valid pixels of
// the batch. Batch members can be evaluated on `threads` workers; member
// results are reduced in index order so the result does not depend on the
// thread count.
ModelBackwardResult model_backward(const std::vector<CropBatchItem>& batch,
                                   const ModelParams& params, LossKind kind,
                                   double loss_scale = 1.0, int threads = 1);

// Forward-only mean loss with the same reduction (used by finite-difference
// checks).
ModelBackwardResult model_forward_loss(const std::vector<CropBatchItem>& batch,
                                       const ModelParams& params, LossKind kind,
                                       double loss_scale = 1.0);

// --- checkpoint format (magic, version, config text, float32 tensors) ---

void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

} // namespace lcf
