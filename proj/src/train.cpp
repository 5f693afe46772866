#include "lcf/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lcf/util.hpp"

namespace lcf {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (crop_width < 32 || crop_height < 32)
        throw std::invalid_argument("crop must be at least 32x32");
    if (window < 3 || window % 2 == 0)
        throw std::invalid_argument("proxy window must be odd and >= 3");
    if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be >= 0");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

std::string TrainConfig::to_text() const {
    std::ostringstream out;
    char buf[64];
    out << "loss " << loss_kind_name(loss_kind) << "\n";
    out << "reducer " << (reducer == ProxyReducer::min ? "min" : "avg") << "\n";
    out << "window " << window << "\n";
    out << "include_center " << (include_center ? 1 : 0) << "\n";
    out << "proxy_source " << (proxy_source == ProxySource::patch ? "patch" : "external") << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", learning_rate);
    out << "learning_rate " << buf << "\n";
    out << "batch_size " << batch_size << "\n";
    out << "epochs " << epochs << "\n";
    out << "crop " << crop_height << "x" << crop_width << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", beta1);
    out << "beta1 " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", beta2);
    out << "beta2 " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", adam_eps);
    out << "adam_eps " << buf << "\n";
    out << "seed " << seed << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", grad_clip);
    out << "grad_clip " << buf << "\n";
    out << "reject_empty_crops " << (reject_empty_crops ? 1 : 0) << "\n";
    return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        std::string word;
        if (key == "loss") {
            ss >> word;
            cfg.loss_kind = loss_kind_from_name(word);
        } else if (key == "reducer") {
            ss >> word;
            if (word == "min") cfg.reducer = ProxyReducer::min;
            else if (word == "avg") cfg.reducer = ProxyReducer::avg;
            else throw std::invalid_argument("reducer must be min or avg");
        } else if (key == "window") {
            ss >> cfg.window;
        } else if (key == "include_center") {
            int v; ss >> v; cfg.include_center = v != 0;
        } else if (key == "proxy_source") {
            ss >> word;
            if (word == "patch") cfg.proxy_source = ProxySource::patch;
            else if (word == "external") cfg.proxy_source = ProxySource::external;
            else throw std::invalid_argument("proxy_source must be patch or external");
        } else if (key == "learning_rate") {
            ss >> cfg.learning_rate;
        } else if (key == "batch_size") {
            ss >> cfg.batch_size;
        } else if (key == "epochs") {
            ss >> cfg.epochs;
        } else if (key == "crop") {
            ss >> word;
            const auto x = word.find('x');
            if (x == std::string::npos) throw std::invalid_argument("crop must be HxW");
            cfg.crop_height = std::stoi(word.substr(0, x));
            cfg.crop_width = std::stoi(word.substr(x + 1));
        } else if (key == "beta1") {
            ss >> cfg.beta1;
        } else if (key == "beta2") {
            ss >> cfg.beta2;
        } else if (key == "adam_eps") {
            ss >> cfg.adam_eps;
        } else if (key == "seed") {
            ss >> cfg.seed;
        } else if (key == "grad_clip") {
            ss >> cfg.grad_clip;
        } else if (key == "reject_empty_crops") {
            int v; ss >> v; cfg.reject_empty_crops = v != 0;
        } else {
            throw std::invalid_argument("train config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

CropRect sample_crop(int frame_width, int frame_height, int crop_width, int crop_height,
                     Rng& rng) {
    if (crop_width > frame_width || crop_height > frame_height)
        throw std::invalid_argument("crop larger than frame");
    CropRect rect;
    rect.width = crop_width;
    rect.height = crop_height;
    rect.y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(frame_height - crop_height + 1)));
    rect.x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(frame_width - crop_width + 1)));
    return rect;
}

namespace {

SparseDepthMap crop_depth(const SparseDepthMap& full, const CropRect& r) {
    SparseDepthMap out(r.width, r.height);
    for (int v = 0; v < r.height; ++v)
        for (int u = 0; u < r.width; ++u) out.at(v, u) = full.at(r.y + v, r.x + u);
    return out;
}

Image crop_image(const Image& full, const CropRect& r) {
    Image out(r.width, r.height);
    for (int c = 0; c < 3; ++c)
        for (int v = 0; v < r.height; ++v)
            for (int u = 0; u < r.width; ++u) out.at(c, v, u) = full.at(c, r.y + v, r.x + u);
    return out;
}

} // namespace

CropBatchItem prepare_crop_item(const Frame& frame, const CropRect& rect,
                                const TrainConfig& cfg, const ArchConfig& arch) {
    const SparseDepthMap depth = crop_depth(frame.depth, rect);
    const Image image = crop_image(frame.image, rect);
    CropBatchItem item;
    item.input = make_model_input(image, depth, arch.depth_scale);
    if (cfg.proxy_source == ProxySource::patch) {
        const ProxyLabelMap proxy =
            compute_proxy_labels(depth, cfg.window, cfg.reducer, cfg.include_center);
        for (int v = 0; v < depth.height; ++v)
            for (int u = 0; u < depth.width; ++u)
                if (depth.valid(v, u) && proxy.valid(v, u))
                    item.pixels.push_back({u, v, depth.at(v, u), proxy.at(v, u)});
    } else {
        if (frame.reference.depth.empty())
            throw std::invalid_argument("frame '" + frame.name +
                                        "' has no reference depth for external proxy labels");
        const SparseDepthMap ref = crop_depth(frame.reference, rect);
        for (int v = 0; v < depth.height; ++v)
            for (int u = 0; u < depth.width; ++u)
                if (depth.valid(v, u) && ref.valid(v, u))
                    item.pixels.push_back({u, v, depth.at(v, u), ref.at(v, u)});
    }
    return item;
}

AdamState AdamState::like(const ParamSet& params) {
    AdamState state;
    state.m = params;
    state.v = params;
    state.m.zero();
    state.v.zero();
    return state;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, long t,
               double lr, double beta1, double beta2, double eps) {
    if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
    if (params.tensors.size() != grads.tensors.size())
        throw std::invalid_argument("adam_step: gradient layout mismatch");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
        auto& p = params.tensors[ti].v;
        const auto& g = grads.tensors[ti].v;
        auto& m = state.m.tensors[ti].v;
        auto& v = state.v.tensors[ti].v;
        if (p.size() != g.size() || p.size() != m.size())
            throw std::invalid_argument("adam_step: tensor shape mismatch at " +
                                        params.tensors[ti].name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

namespace {

double grad_l2_norm(const ParamSet& grads) {
    double sq = 0.0;
    for (const auto& t : grads.tensors)
        for (double g : t.v) sq += g * g;
    return std::sqrt(sq);
}

} // namespace

TrainResult train(const std::vector<Frame>& dataset, const ArchConfig& arch,
                  const TrainConfig& cfg) {
    cfg.validate();
    arch.validate();
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    for (const Frame& f : dataset) {
        if (f.depth.width < cfg.crop_width || f.depth.height < cfg.crop_height)
            throw std::invalid_argument("frame '" + f.name + "' (" +
                                        std::to_string(f.depth.width) + "x" +
                                        std::to_string(f.depth.height) +
                                        ") is smaller than the crop");
        if (cfg.proxy_source == ProxySource::external && f.reference.depth.empty())
            throw std::invalid_argument("frame '" + f.name +
                                        "' has no reference depth for external proxy labels");
    }

    const auto t_start = std::chrono::steady_clock::now();
    TrainResult result;
    result.params.arch = arch;
    result.params.set = make_param_set(arch);
    Rng rng(cfg.seed);
    init_params_into(result.params, rng);
    AdamState state = AdamState::like(result.params.set);

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    long adam_t = 0;
    for (int epoch = 1; epoch <= cfg.epochs && !result.log.aborted; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_steps = 0, epoch_skipped = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t members =
                std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - pos);
            std::vector<CropBatchItem> batch;
            batch.reserve(members);
            for (std::size_t b = 0; b < members; ++b) {
                const Frame& frame = dataset[order[pos + b]];
                CropRect rect = sample_crop(frame.depth.width, frame.depth.height,
                                            cfg.crop_width, cfg.crop_height, rng);
                CropBatchItem item = prepare_crop_item(frame, rect, cfg, arch);
                if (cfg.reject_empty_crops) {
                    for (int attempt = 0; attempt < 20 && item.pixels.empty(); ++attempt) {
                        rect = sample_crop(frame.depth.width, frame.depth.height,
                                           cfg.crop_width, cfg.crop_height, rng);
                        item = prepare_crop_item(frame, rect, cfg, arch);
                    }
                }
                batch.push_back(std::move(item));
            }
            ++step;
            ModelBackwardResult res =
                model_backward(batch, result.params, cfg.loss_kind, 1.0, cfg.threads);
            if (res.skipped) {
                result.log.steps.push_back({step, 0.0, 0, 0.0});
                ++epoch_skipped;
                continue;
            }
            double norm = grad_l2_norm(res.grads);
            if (!std::isfinite(res.mean_loss) || !std::isfinite(norm)) {
                result.log.aborted = true;
                std::ostringstream reason;
                reason << "non-finite loss at step " << step << " (loss=" << res.mean_loss
                       << ", grad_norm=" << norm << "); parameters kept from step "
                       << (step - 1);
                result.log.abort_reason = reason.str();
                break;
            }
            if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
                const double scale = cfg.grad_clip / norm;
                for (auto& t : res.grads.tensors)
                    for (double& g : t.v) g *= scale;
                norm = cfg.grad_clip;
            }
            ++adam_t;
            adam_step(result.params.set, res.grads, state, adam_t, cfg.learning_rate,
                      cfg.beta1, cfg.beta2, cfg.adam_eps);
            result.log.steps.push_back({step, res.mean_loss, res.valid_pixels, norm});
            epoch_loss += res.mean_loss;
            ++epoch_steps;
        }
        if (epoch_steps > 0 || epoch_skipped > 0)
            result.log.epochs.push_back(
                {epoch, epoch_steps > 0 ? epoch_loss / static_cast<double>(epoch_steps) : 0.0,
                 epoch_steps, epoch_skipped});
    }
    result.log.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "step,loss,valid_px,grad_norm\n";
    char buf[96];
    for (const auto& s : log.steps) {
        std::snprintf(buf, sizeof buf, "%ld,%.17g,%zu,%.17g\n", s.step, s.loss, s.valid_px,
                      s.grad_norm);
        out << buf;
    }
}

void write_epochs_csv(const TrainLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "epoch,mean_loss,steps,skipped\n";
    char buf[96];
    for (const auto& e : log.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%ld,%ld\n", e.epoch, e.mean_loss, e.steps,
                      e.skipped);
        out << buf;
    }
}

} // namespace lcf
