#include "lcf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lcf/rng.hpp"
#include "lcf/threading.hpp"
#include "lcf/util.hpp"

namespace lcf {

// --- configuration ---

ArchConfig ArchConfig::reference() { return {}; }

ArchConfig ArchConfig::desk() {
    ArchConfig cfg;
    cfg.width_num = 1;
    cfg.width_den = 8;
    return cfg;
}

int ArchConfig::scaled(int base) const {
    const long s = std::lround(static_cast<double>(base) * width_num / width_den);
    return static_cast<int>(std::max(1L, s));
}

const std::array<int, 6>& ArchConfig::pyramid_denoms() {
    static const std::array<int, 6> denoms{1, 2, 4, 8, 16, 32};
    return denoms;
}

std::vector<int> ArchConfig::pyramid_channels() const {
    std::vector<int> ch;
    ch.push_back(scaled(stem_channels[2]));
    for (int b : block_channels) ch.push_back(scaled(b));
    return ch;
}

int ArchConfig::feature_dim() const {
    const auto ch = pyramid_channels();
    const auto& denoms = pyramid_denoms();
    int dim = 0;
    for (std::size_t i = 0; i < denoms.size(); ++i)
        if (std::find(scale_subset.begin(), scale_subset.end(), denoms[i]) != scale_subset.end())
            dim += ch[i];
    return dim;
}

std::vector<int> ArchConfig::mlp_layer_widths() const {
    std::vector<int> widths{feature_dim()};
    for (int hdim : mlp_hidden) widths.push_back(scaled(hdim));
    widths.push_back(1);
    return widths;
}

void ArchConfig::validate() const {
    if (scale_subset.empty()) throw std::invalid_argument("scale_subset must be non-empty");
    const auto& denoms = pyramid_denoms();
    for (std::size_t i = 0; i < scale_subset.size(); ++i) {
        if (std::find(denoms.begin(), denoms.end(), scale_subset[i]) == denoms.end())
            throw std::invalid_argument("scale_subset entries must be one of 1,2,4,8,16,32");
        if (i > 0 && scale_subset[i] <= scale_subset[i - 1])
            throw std::invalid_argument("scale_subset must be strictly ascending");
    }
    if (width_num < 1 || width_den < 1)
        throw std::invalid_argument("width_scale must be a positive rational");
    if (!(leaky_slope > 0.0) || leaky_slope >= 1.0)
        throw std::invalid_argument("leaky_slope must be in (0, 1)");
    if (!(depth_scale > 0.0)) throw std::invalid_argument("depth_scale must be > 0");
}

std::string ArchConfig::to_text() const {
    std::ostringstream out;
    out << "stem_channels";
    for (int cpl : stem_channels) out << " " << cpl;
    out << "\nblock_channels";
    for (int cpl : block_channels) out << " " << cpl;
    out << "\nmlp_hidden";
    for (int cpl : mlp_hidden) out << " " << cpl;
    out << "\nleaky_slope " << leaky_slope;
    out << "\nscale_subset";
    for (int s : scale_subset) out << " " << s;
    out << "\nwidth_scale " << width_num << "/" << width_den;
    out << "\ndepth_scale " << depth_scale << "\n";
    return out.str();
}

ArchConfig ArchConfig::from_text(const std::string& text) {
    ArchConfig cfg;
    cfg.mlp_hidden.clear();
    cfg.scale_subset.clear();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (key == "stem_channels") {
            for (int i = 0; i < 3; ++i)
                if (!(ss >> cfg.stem_channels[static_cast<std::size_t>(i)]))
                    throw std::invalid_argument("stem_channels expects 3 values");
        } else if (key == "block_channels") {
            for (int i = 0; i < 5; ++i)
                if (!(ss >> cfg.block_channels[static_cast<std::size_t>(i)]))
                    throw std::invalid_argument("block_channels expects 5 values");
        } else if (key == "mlp_hidden") {
            int v;
            while (ss >> v) cfg.mlp_hidden.push_back(v);
        } else if (key == "leaky_slope") {
            ss >> cfg.leaky_slope;
        } else if (key == "scale_subset") {
            int v;
            while (ss >> v) cfg.scale_subset.push_back(v);
        } else if (key == "width_scale") {
            std::string frac;
            ss >> frac;
            const auto slash = frac.find('/');
            cfg.width_num = std::stoi(frac.substr(0, slash));
            cfg.width_den = slash == std::string::npos ? 1 : std::stoi(frac.substr(slash + 1));
        } else if (key == "depth_scale") {
            ss >> cfg.depth_scale;
        } else {
            throw std::invalid_argument("arch config: unknown key '" + key + "'");
        }
    }
    if (cfg.mlp_hidden.empty()) cfg.mlp_hidden = {512, 128};
    if (cfg.scale_subset.empty()) cfg.scale_subset = {1, 2, 4, 8, 16, 32};
    cfg.validate();
    return cfg;
}

// --- parameter layout ---

namespace {

struct ConvShape {
    std::string name;
    int in_c, out_c;
};

std::vector<ConvShape> conv_plan(const ArchConfig& cfg) {
    std::vector<ConvShape> plan;
    int in_c = 4;
    for (int i = 0; i < 3; ++i) {
        const int out_c = cfg.scaled(cfg.stem_channels[static_cast<std::size_t>(i)]);
        plan.push_back({"stem" + std::to_string(i), in_c, out_c});
        in_c = out_c;
    }
    for (int b = 0; b < 5; ++b) {
        const int out_c = cfg.scaled(cfg.block_channels[static_cast<std::size_t>(b)]);
        plan.push_back({"block" + std::to_string(b) + ".conv0", in_c, out_c});
        plan.push_back({"block" + std::to_string(b) + ".conv1", out_c, out_c});
        in_c = out_c;
    }
    return plan;
}

} // namespace

std::size_t ParamSet::total_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

void ParamSet::zero() {
    for (auto& t : tensors) std::fill(t.v.begin(), t.v.end(), 0.0);
}

ParamSet make_param_set(const ArchConfig& cfg) {
    cfg.validate();
    ParamSet set;
    for (const ConvShape& c : conv_plan(cfg)) {
        set.tensors.push_back({c.name + ".weight",
                               {c.out_c, c.in_c, 3, 3},
                               std::vector<double>(static_cast<std::size_t>(c.out_c) * c.in_c * 9, 0.0)});
        set.tensors.push_back({c.name + ".bias", {c.out_c},
                               std::vector<double>(static_cast<std::size_t>(c.out_c), 0.0)});
    }
    const auto widths = cfg.mlp_layer_widths();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in_w = widths[l], out_w = widths[l + 1];
        set.tensors.push_back({"mlp" + std::to_string(l) + ".weight",
                               {out_w, in_w},
                               std::vector<double>(static_cast<std::size_t>(out_w) * in_w, 0.0)});
        set.tensors.push_back({"mlp" + std::to_string(l) + ".bias", {out_w},
                               std::vector<double>(static_cast<std::size_t>(out_w), 0.0)});
    }
    return set;
}

void init_params_into(ModelParams& params, Rng& rng) {
    const double slope = params.arch.leaky_slope;
    for (ParamTensor& t : params.set.tensors) {
        if (t.name.ends_with(".bias")) {
            std::fill(t.v.begin(), t.v.end(), 0.0);
            continue;
        }
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < t.shape.size(); ++i)
            fan_in *= static_cast<std::size_t>(t.shape[i]);
        const double stddev =
            std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
        for (double& wv : t.v) wv = rng.normal(0.0, stddev);
    }
}

ModelParams init_params(const ArchConfig& config, std::uint64_t seed) {
    ModelParams params;
    params.arch = config;
    params.set = make_param_set(config);
    Rng rng(seed);
    init_params_into(params, rng);
    return params;
}

// --- kernels ---

namespace {

// 3x3 convolution, stride 1, zero padding 1. Taps outside the raster are
// skipped, which is equivalent to zero padding.
void conv3x3_forward(const Tensor& in, const ParamTensor& weight, const ParamTensor& bias,
                     Tensor& out) {
    const int h = in.h, w = in.w;
    const int out_c = weight.shape[0], in_c = weight.shape[1];
    out = Tensor(out_c, h, w);
    for (int oc = 0; oc < out_c; ++oc) {
        double* op = out.plane(oc);
        const double b = bias.v[static_cast<std::size_t>(oc)];
        std::fill(op, op + static_cast<std::size_t>(h) * w, b);
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = in.plane(ic);
            const double* wk = weight.v.data() + (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            for (int k = 0; k < 9; ++k) {
                const double wv = wk[k];
                if (wv == 0.0) continue;
                const int ky = k / 3 - 1, kx = k % 3 - 1;
                const int y0 = std::max(0, -ky), y1 = h - 1 - std::max(0, ky);
                const int x0 = std::max(0, -kx), x1 = w - 1 - std::max(0, kx);
                for (int y = y0; y <= y1; ++y) {
                    const double* irow = ip + static_cast<std::size_t>(y + ky) * w + kx;
                    double* orow = op + static_cast<std::size_t>(y) * w;
                    for (int x = x0; x <= x1; ++x) orow[x] += wv * irow[x];
                }
            }
        }
    }
}

void conv3x3_backward(const Tensor& in, const ParamTensor& weight, const Tensor& gout,
                      Tensor* gin, ParamTensor& gweight, ParamTensor& gbias) {
    const int h = in.h, w = in.w;
    const int out_c = weight.shape[0], in_c = weight.shape[1];
    for (int oc = 0; oc < out_c; ++oc) {
        const double* gp = gout.plane(oc);
        double bsum = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) bsum += gp[i];
        gbias.v[static_cast<std::size_t>(oc)] += bsum;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = in.plane(ic);
            double* gip = gin ? gin->plane(ic) : nullptr;
            const std::size_t base = (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            const double* wk = weight.v.data() + base;
            double* gw = gweight.v.data() + base;
            for (int k = 0; k < 9; ++k) {
                const int ky = k / 3 - 1, kx = k % 3 - 1;
                const int y0 = std::max(0, -ky), y1 = h - 1 - std::max(0, ky);
                const int x0 = std::max(0, -kx), x1 = w - 1 - std::max(0, kx);
                double acc = 0.0;
                const double wv = wk[k];
                for (int y = y0; y <= y1; ++y) {
                    const double* irow = ip + static_cast<std::size_t>(y + ky) * w + kx;
                    const double* grow = gp + static_cast<std::size_t>(y) * w;
                    for (int x = x0; x <= x1; ++x) acc += grow[x] * irow[x];
                    if (gip) {
                        double* girow = gip + static_cast<std::size_t>(y + ky) * w + kx;
                        for (int x = x0; x <= x1; ++x) girow[x] += wv * grow[x];
                    }
                }
                gw[k] += acc;
            }
        }
    }
}

void leaky_forward(Tensor& t, double slope) {
    for (double& x : t.v)
        if (x < 0.0) x *= slope;
}

// Gradient factor derived from the stored post-activation value.
void leaky_backward(Tensor& grad, const Tensor& out, double slope) {
    for (std::size_t i = 0; i < grad.v.size(); ++i)
        if (!(out.v[i] > 0.0)) grad.v[i] *= slope;
}

// 2x2 max pooling, stride 2, ceil mode: border windows are clipped. Ties pick
// the first element in row-major window order.
void maxpool2_forward(const Tensor& in, Tensor& out, std::vector<std::int32_t>& argmax) {
    const int oh = (in.h + 1) / 2, ow = (in.w + 1) / 2;
    out = Tensor(in.c, oh, ow);
    argmax.assign(out.size(), 0);
    for (int ci = 0; ci < in.c; ++ci) {
        const double* ip = in.plane(ci);
        double* op = out.plane(ci);
        std::int32_t* ap = argmax.data() + static_cast<std::size_t>(ci) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const int y0 = 2 * y, x0 = 2 * x;
                const int y1 = std::min(y0 + 1, in.h - 1), x1 = std::min(x0 + 1, in.w - 1);
                double best = ip[static_cast<std::size_t>(y0) * in.w + x0];
                std::int32_t best_idx = y0 * in.w + x0;
                for (int yy = y0; yy <= y1; ++yy)
                    for (int xx = x0; xx <= x1; ++xx) {
                        const double val = ip[static_cast<std::size_t>(yy) * in.w + xx];
                        if (val > best) {
                            best = val;
                            best_idx = yy * in.w + xx;
                        }
                    }
                op[static_cast<std::size_t>(y) * ow + x] = best;
                ap[static_cast<std::size_t>(y) * ow + x] = best_idx;
            }
        }
    }
}

void maxpool2_backward(const Tensor& gout, const std::vector<std::int32_t>& argmax, Tensor& gin) {
    const std::size_t plane = static_cast<std::size_t>(gout.h) * gout.w;
    for (int ci = 0; ci < gout.c; ++ci) {
        const double* gp = gout.plane(ci);
        const std::int32_t* ap = argmax.data() + static_cast<std::size_t>(ci) * plane;
        double* gi = gin.plane(ci);
        for (std::size_t i = 0; i < plane; ++i) gi[static_cast<std::size_t>(ap[i])] += gp[i];
    }
}

struct EncoderCache {
    std::array<Tensor, 3> stem; // post-activation
    struct Block {
        Tensor pooled;
        std::vector<std::int32_t> argmax;
        Tensor conv0, conv1; // post-activation
    };
    std::array<Block, 5> blocks;

    const Tensor& scale_output(int level) const {
        return level == 0 ? stem[2] : blocks[static_cast<std::size_t>(level - 1)].conv1;
    }
};

void encoder_forward_cached(const Tensor& input, const ModelParams& params, EncoderCache& cache) {
    const double slope = params.arch.leaky_slope;
    const auto& set = params.set.tensors;
    const Tensor* prev = &input;
    for (int i = 0; i < 3; ++i) {
        conv3x3_forward(*prev, set[static_cast<std::size_t>(2 * i)],
                        set[static_cast<std::size_t>(2 * i + 1)], cache.stem[static_cast<std::size_t>(i)]);
        leaky_forward(cache.stem[static_cast<std::size_t>(i)], slope);
        prev = &cache.stem[static_cast<std::size_t>(i)];
    }
    for (int b = 0; b < 5; ++b) {
        auto& blk = cache.blocks[static_cast<std::size_t>(b)];
        maxpool2_forward(*prev, blk.pooled, blk.argmax);
        const std::size_t base = 6 + static_cast<std::size_t>(b) * 4;
        conv3x3_forward(blk.pooled, set[base], set[base + 1], blk.conv0);
        leaky_forward(blk.conv0, slope);
        conv3x3_forward(blk.conv0, set[base + 2], set[base + 3], blk.conv1);
        leaky_forward(blk.conv1, slope);
        prev = &blk.conv1;
    }
}

std::vector<double> gather_features(const EncoderCache& cache, const ArchConfig& cfg,
                                    int u, int v) {
    std::vector<double> feat;
    feat.reserve(static_cast<std::size_t>(cfg.feature_dim()));
    const auto& denoms = ArchConfig::pyramid_denoms();
    for (std::size_t level = 0; level < denoms.size(); ++level) {
        if (std::find(cfg.scale_subset.begin(), cfg.scale_subset.end(), denoms[level]) ==
            cfg.scale_subset.end())
            continue;
        const Tensor& t = cache.scale_output(static_cast<int>(level));
        const int cu = u / denoms[level], cv = v / denoms[level];
        for (int ci = 0; ci < t.c; ++ci) feat.push_back(t.at(ci, cv, cu));
    }
    return feat;
}

std::size_t mlp_tensor_base(const ArchConfig&) { return 6 + 5 * 4; }

// Forward through the head; `acts` holds each layer's post-activation (the
// last entry is the raw linear output).
double mlp_forward_cached(const std::vector<double>& features, const ModelParams& params,
                          std::vector<std::vector<double>>* acts) {
    const auto widths = params.arch.mlp_layer_widths();
    const std::size_t base = mlp_tensor_base(params.arch);
    const double slope = params.arch.leaky_slope;
    std::vector<double> cur = features;
    if (acts) acts->clear();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const ParamTensor& wt = params.set.tensors[base + 2 * l];
        const ParamTensor& bt = params.set.tensors[base + 2 * l + 1];
        const int in_w = widths[l], out_w = widths[l + 1];
        if (static_cast<int>(cur.size()) != in_w)
            throw std::invalid_argument("mlp_forward: feature width " +
                                        std::to_string(cur.size()) + " does not match layer " +
                                        std::to_string(in_w));
        std::vector<double> next(static_cast<std::size_t>(out_w));
        const bool last = l + 2 == widths.size();
        for (int o = 0; o < out_w; ++o) {
            const double* wrow = wt.v.data() + static_cast<std::size_t>(o) * in_w;
            double acc = bt.v[static_cast<std::size_t>(o)];
            for (int i = 0; i < in_w; ++i) acc += wrow[i] * cur[static_cast<std::size_t>(i)];
            if (!last && acc < 0.0) acc *= slope;
            next[static_cast<std::size_t>(o)] = acc;
        }
        cur = std::move(next);
        if (acts) acts->push_back(cur);
    }
    return cur[0];
}

} // namespace

Tensor make_model_input(const Image& image, const SparseDepthMap& depth, double depth_scale) {
    if (image.width != depth.width || image.height != depth.height)
        throw std::invalid_argument("image and depth raster sizes differ");
    Tensor input(4, image.height, image.width);
    const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
    for (int ch = 0; ch < 3; ++ch)
        std::copy(image.rgb.begin() + static_cast<std::ptrdiff_t>(ch * plane),
                  image.rgb.begin() + static_cast<std::ptrdiff_t>((ch + 1) * plane),
                  input.v.begin() + static_cast<std::ptrdiff_t>(ch * plane));
    for (std::size_t i = 0; i < plane; ++i) input.v[3 * plane + i] = depth.depth[i] / depth_scale;
    return input;
}

FeaturePyramid encoder_forward(const Image& image, const SparseDepthMap& depth,
                               const ModelParams& params) {
    if (image.height < 32 || image.width < 32)
        throw std::invalid_argument("encoder input must be at least 32x32");
    const Tensor input = make_model_input(image, depth, params.arch.depth_scale);
    EncoderCache cache;
    encoder_forward_cached(input, params, cache);
    FeaturePyramid pyr;
    const auto& denoms = ArchConfig::pyramid_denoms();
    pyr.denoms.assign(denoms.begin(), denoms.end());
    pyr.feats.push_back(std::move(cache.stem[2]));
    for (auto& blk : cache.blocks) pyr.feats.push_back(std::move(blk.conv1));
    return pyr;
}

std::vector<double> sample_features(const FeaturePyramid& pyramid, int u, int v,
                                    const std::vector<int>& scale_subset) {
    if (pyramid.feats.empty()) throw std::invalid_argument("empty pyramid");
    const Tensor& full = pyramid.feats[0];
    if (u < 0 || v < 0 || u >= full.w || v >= full.h)
        throw std::invalid_argument("sample_features: pixel outside the raster");
    std::vector<double> feat;
    for (std::size_t level = 0; level < pyramid.feats.size(); ++level) {
        const int denom = pyramid.denoms[level];
        if (std::find(scale_subset.begin(), scale_subset.end(), denom) == scale_subset.end())
            continue;
        const Tensor& t = pyramid.feats[level];
        const int cu = u / denom, cv = v / denom;
        for (int ci = 0; ci < t.c; ++ci) feat.push_back(t.at(ci, cv, cu));
    }
    return feat;
}

double mlp_forward(const std::vector<double>& features, const ModelParams& params) {
    return mlp_forward_cached(features, params, nullptr);
}

double sigma_from_raw(double raw) {
    if (!std::isfinite(raw)) return std::numeric_limits<double>::quiet_NaN();
    return 1.0 + std::max(softplus(raw), 1e-12);
}

ConfidenceMap infer_confidence(const Image& image, const SparseDepthMap& depth,
                               const ModelParams& params) {
    if (image.height < 32 || image.width < 32)
        throw std::invalid_argument("encoder input must be at least 32x32");
    const Tensor input = make_model_input(image, depth, params.arch.depth_scale);
    EncoderCache cache;
    encoder_forward_cached(input, params, cache);
    ConfidenceMap out(depth.width, depth.height);
    for (int v = 0; v < depth.height; ++v)
        for (int u = 0; u < depth.width; ++u) {
            if (!depth.valid(v, u)) continue;
            const auto feat = gather_features(cache, params.arch, u, v);
            out.at(v, u) = sigma_from_raw(mlp_forward_cached(feat, params, nullptr));
        }
    return out;
}

// --- training path ---

namespace {

struct ItemResult {
    ParamSet grads;
    double loss_sum = 0.0;
};

// Forward + reverse pass for one crop. `pixel_scale` multiplies every
// per-pixel loss gradient (the caller passes loss_scale / total_valid).
ItemResult backward_one_item(const CropBatchItem& item, const ModelParams& params,
                             LossKind kind, double pixel_scale, bool want_grads) {
    const ArchConfig& cfg = params.arch;
    const double slope = cfg.leaky_slope;
    ItemResult res;
    res.grads = make_param_set(cfg);

    EncoderCache cache;
    encoder_forward_cached(item.input, params, cache);

    // Per-scale gradient buffers for the pyramid outputs.
    std::array<Tensor, 6> pyr_grad;
    if (want_grads)
        for (int level = 0; level < 6; ++level) {
            const Tensor& t = cache.scale_output(level);
            pyr_grad[static_cast<std::size_t>(level)] = Tensor(t.c, t.h, t.w);
        }

    const auto widths = cfg.mlp_layer_widths();
    const std::size_t mlp_base = mlp_tensor_base(cfg);
    std::vector<std::vector<double>> acts;
    std::vector<double> delta, delta_prev;
    for (const PixelSample& px : item.pixels) {
        const auto feat = gather_features(cache, cfg, px.u, px.v);
        const double raw = mlp_forward_cached(feat, params, &acts);
        const double sp = softplus(raw);
        const double sigma = 1.0 + std::max(sp, 1e-12);
        res.loss_sum += loss_value(kind, {px.d, px.d_star, sigma});
        if (!want_grads) continue;

        const double dsigma_draw = sp > 1e-12 ? sigmoid(raw) : 0.0;
        const double draw =
            pixel_scale * loss_grad_sigma(kind, {px.d, px.d_star, sigma}) * dsigma_draw;

        // Head backward, layer by layer.
        delta.assign(1, draw);
        for (std::size_t l = widths.size() - 1; l-- > 0;) {
            const ParamTensor& wt = params.set.tensors[mlp_base + 2 * l];
            ParamTensor& gw = res.grads.tensors[mlp_base + 2 * l];
            ParamTensor& gb = res.grads.tensors[mlp_base + 2 * l + 1];
            const int in_w = widths[l], out_w = widths[l + 1];
            const std::vector<double>& in_act = l == 0 ? feat : acts[l - 1];
            delta_prev.assign(static_cast<std::size_t>(in_w), 0.0);
            for (int o = 0; o < out_w; ++o) {
                const double dv = delta[static_cast<std::size_t>(o)];
                if (dv == 0.0) continue;
                gb.v[static_cast<std::size_t>(o)] += dv;
                const double* wrow = wt.v.data() + static_cast<std::size_t>(o) * in_w;
                double* gwrow = gw.v.data() + static_cast<std::size_t>(o) * in_w;
                for (int i = 0; i < in_w; ++i) {
                    gwrow[i] += dv * in_act[static_cast<std::size_t>(i)];
                    delta_prev[static_cast<std::size_t>(i)] += dv * wrow[i];
                }
            }
            if (l > 0) {
                const std::vector<double>& out_act = acts[l - 1];
                for (int i = 0; i < in_w; ++i)
                    if (!(out_act[static_cast<std::size_t>(i)] > 0.0))
                        delta_prev[static_cast<std::size_t>(i)] *= slope;
            }
            delta = delta_prev;
        }

        // Scatter the feature gradient into the pyramid buffers.
        std::size_t off = 0;
        const auto& denoms = ArchConfig::pyramid_denoms();
        for (std::size_t level = 0; level < denoms.size(); ++level) {
            if (std::find(cfg.scale_subset.begin(), cfg.scale_subset.end(), denoms[level]) ==
                cfg.scale_subset.end())
                continue;
            Tensor& g = pyr_grad[level];
            const int cu = px.u / denoms[level], cv = px.v / denoms[level];
            for (int ci = 0; ci < g.c; ++ci) g.at(ci, cv, cu) += delta[off++];
        }
    }

    if (!want_grads) return res;

    // Encoder backward, last block first. The output of each scale feeds both
    // the pyramid and the next block, so gradients add up.
    Tensor carry; // gradient flowing into scale_output(level) from level+1
    for (int b = 4; b >= 0; --b) {
        auto& blk = cache.blocks[static_cast<std::size_t>(b)];
        Tensor g1 = std::move(pyr_grad[static_cast<std::size_t>(b + 1)]);
        if (carry.size() > 0)
            for (std::size_t i = 0; i < g1.v.size(); ++i) g1.v[i] += carry.v[i];
        leaky_backward(g1, blk.conv1, slope);
        const std::size_t base = 6 + static_cast<std::size_t>(b) * 4;
        Tensor g0(blk.conv0.c, blk.conv0.h, blk.conv0.w);
        conv3x3_backward(blk.conv0, params.set.tensors[base + 2], g1, &g0,
                         res.grads.tensors[base + 2], res.grads.tensors[base + 3]);
        leaky_backward(g0, blk.conv0, slope);
        Tensor gpool(blk.pooled.c, blk.pooled.h, blk.pooled.w);
        conv3x3_backward(blk.pooled, params.set.tensors[base], g0, &gpool,
                         res.grads.tensors[base], res.grads.tensors[base + 1]);
        const Tensor& below = b == 0 ? cache.stem[2] : cache.blocks[static_cast<std::size_t>(b - 1)].conv1;
        carry = Tensor(below.c, below.h, below.w);
        maxpool2_backward(gpool, blk.argmax, carry);
    }
    Tensor g = std::move(pyr_grad[0]);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += carry.v[i];
    for (int i = 2; i >= 0; --i) {
        leaky_backward(g, cache.stem[static_cast<std::size_t>(i)], slope);
        const Tensor& below = i == 0 ? item.input : cache.stem[static_cast<std::size_t>(i - 1)];
        Tensor gbelow;
        if (i > 0) gbelow = Tensor(below.c, below.h, below.w);
        conv3x3_backward(below, params.set.tensors[static_cast<std::size_t>(2 * i)], g,
                         i > 0 ? &gbelow : nullptr,
                         res.grads.tensors[static_cast<std::size_t>(2 * i)],
                         res.grads.tensors[static_cast<std::size_t>(2 * i + 1)]);
        g = std::move(gbelow);
    }
    return res;
}

ModelBackwardResult run_batch(const std::vector<CropBatchItem>& batch, const ModelParams& params,
                              LossKind kind, double loss_scale, int threads, bool want_grads) {
    std::size_t total = 0;
    for (const auto& item : batch) total += item.pixels.size();
    ModelBackwardResult out;
    out.valid_pixels = total;
    out.grads = make_param_set(params.arch);
    if (total == 0) {
        out.skipped = true;
        return out;
    }
    const double pixel_scale = loss_scale / static_cast<double>(total);
    std::vector<ItemResult> results(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        results[i] = backward_one_item(batch[i], params, kind, pixel_scale, want_grads);
    });
    double loss_sum = 0.0;
    for (const ItemResult& r : results) {
        loss_sum += r.loss_sum;
        if (want_grads)
            for (std::size_t t = 0; t < out.grads.tensors.size(); ++t) {
                auto& dst = out.grads.tensors[t].v;
                const auto& src = r.grads.tensors[t].v;
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
    }
    out.mean_loss = loss_sum / static_cast<double>(total);
    return out;
}

} // namespace

ModelBackwardResult model_backward(const std::vector<CropBatchItem>& batch,
                                   const ModelParams& params, LossKind kind, double loss_scale,
                                   int threads) {
    return run_batch(batch, params, kind, loss_scale, threads, true);
}

ModelBackwardResult model_forward_loss(const std::vector<CropBatchItem>& batch,
                                       const ModelParams& params, LossKind kind,
                                       double loss_scale) {
    return run_batch(batch, params, kind, loss_scale, 1, false);
}

// --- checkpoint ---

namespace {
constexpr char kMagic[4] = {'L', 'C', 'F', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32_stream(std::ostream& out, std::uint32_t u) {
    const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                           static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32_stream(std::istream& in, const std::string& path) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4))
        throw io_error(path + ": truncated checkpoint");
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}
} // namespace

void save_model(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    put_u32_stream(out, kVersion);
    const std::string cfg = params.arch.to_text();
    put_u32_stream(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    std::vector<unsigned char> buf;
    for (const ParamTensor& t : params.set.tensors) {
        buf.resize(t.v.size() * 4);
        for (std::size_t i = 0; i < t.v.size(); ++i) {
            const float f = static_cast<float>(t.v[i]);
            std::uint32_t u;
            std::memcpy(&u, &f, 4);
            buf[4 * i] = static_cast<unsigned char>(u & 0xff);
            buf[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
            buf[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
            buf[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw io_error("short write to " + path.string());
}

ModelParams load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw io_error(path.string() + ": not a model checkpoint");
    const std::uint32_t version = get_u32_stream(in, path.string());
    if (version != kVersion)
        throw io_error(path.string() + ": unsupported checkpoint version " +
                       std::to_string(version));
    const std::uint32_t cfg_len = get_u32_stream(in, path.string());
    std::string cfg_text(cfg_len, '\0');
    if (!in.read(cfg_text.data(), cfg_len)) throw io_error(path.string() + ": truncated config");
    ModelParams params;
    try {
        params.arch = ArchConfig::from_text(cfg_text);
    } catch (const std::invalid_argument& e) {
        throw io_error(path.string() + ": " + e.what());
    }
    params.set = make_param_set(params.arch);
    std::vector<unsigned char> buf;
    for (ParamTensor& t : params.set.tensors) {
        buf.resize(t.v.size() * 4);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw io_error(path.string() + ": truncated tensor " + t.name);
        for (std::size_t i = 0; i < t.v.size(); ++i) {
            std::uint32_t u = static_cast<std::uint32_t>(buf[4 * i]) |
                              (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
            float f;
            std::memcpy(&f, &u, 4);
            if (!std::isfinite(f))
                throw io_error(path.string() + ": non-finite value in tensor " + t.name);
            t.v[i] = f;
        }
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw io_error(path.string() + ": trailing bytes after tensors");
    return params;
}

} // namespace lcf
