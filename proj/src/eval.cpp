#include "lcf/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lcf/rng.hpp"
#include "lcf/threading.hpp"
#include "lcf/util.hpp"

namespace lcf {

namespace {

constexpr int kCurvePoints = 50;
constexpr double kCurveStep = 0.02;

// Pixels ordered by removal priority; ties keep input (raster) order.
std::vector<std::size_t> removal_order(const std::vector<double>& key) {
    std::vector<std::size_t> idx(key.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
    return idx;
}

// RMSE over the suffix that remains after removing the first `removed` pixels
// of `order`, for each curve level.
SparsificationCurve curve_from_order(const std::vector<double>& errors,
                                     const std::vector<std::size_t>& order) {
    const std::size_t n = errors.size();
    std::vector<double> suffix_sq(n + 1, 0.0);
    for (std::size_t i = n; i-- > 0;)
        suffix_sq[i] = suffix_sq[i + 1] + errors[order[i]] * errors[order[i]];
    SparsificationCurve curve;
    curve.degenerate = n < static_cast<std::size_t>(kCurvePoints);
    const std::size_t step = std::max<std::size_t>(1, n / kCurvePoints);
    for (int i = 0; i < kCurvePoints; ++i) {
        const std::size_t removed = std::min(static_cast<std::size_t>(i) * step, n - 1);
        curve.fractions.push_back(kCurveStep * i);
        curve.rmse.push_back(
            std::sqrt(suffix_sq[removed] / static_cast<double>(n - removed)));
    }
    return curve;
}

} // namespace

SparsificationCurve sparsification_curve(const std::vector<double>& errors,
                                         const std::vector<double>& confidence,
                                         SortOrder order) {
    if (errors.empty()) throw std::invalid_argument("sparsification_curve: no pixels");
    for (double e : errors)
        if (!std::isfinite(e)) throw std::invalid_argument("sparsification_curve: non-finite error");
    if (order == SortOrder::by_confidence && confidence.size() != errors.size())
        throw std::invalid_argument("sparsification_curve: confidence size mismatch");
    const std::vector<std::size_t> idx =
        removal_order(order == SortOrder::by_confidence ? confidence : errors);
    return curve_from_order(errors, idx);
}

double auc(const SparsificationCurve& curve) {
    if (curve.rmse.size() != static_cast<std::size_t>(kCurvePoints))
        throw std::invalid_argument("auc: malformed curve");
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < curve.rmse.size(); ++i)
        area += kCurveStep * (curve.rmse[i] + curve.rmse[i + 1]) / 2.0;
    return area / (kCurveStep * (kCurvePoints - 1));
}

double rmse(const std::vector<double>& pred, const std::vector<double>& ref,
            const std::vector<std::uint8_t>& mask) {
    if (pred.size() != ref.size() || pred.size() != mask.size())
        throw std::invalid_argument("rmse: size mismatch");
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask[i]) {
            const double e = pred[i] - ref[i];
            sq += e * e;
            ++n;
        }
    if (n == 0) throw std::invalid_argument("rmse: empty mask");
    return std::sqrt(sq / static_cast<double>(n));
}

double mae(const std::vector<double>& pred, const std::vector<double>& ref,
           const std::vector<std::uint8_t>& mask) {
    if (pred.size() != ref.size() || pred.size() != mask.size())
        throw std::invalid_argument("mae: size mismatch");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask[i]) {
            acc += std::fabs(pred[i] - ref[i]);
            ++n;
        }
    if (n == 0) throw std::invalid_argument("mae: empty mask");
    return acc / static_cast<double>(n);
}

SparseDepthMap filter_depth(const SparseDepthMap& depth, const ConfidenceMap& conf,
                            FilterMode mode, double value) {
    if (depth.width != conf.width || depth.height != conf.height)
        throw std::invalid_argument("filter_depth: raster size mismatch");
    SparseDepthMap out = depth;
    if (mode == FilterMode::threshold) {
        if (!(value >= 1.0)) throw std::invalid_argument("filter threshold must be >= 1");
        for (std::size_t i = 0; i < out.depth.size(); ++i)
            if (out.depth[i] > 0.0 && conf.sigma[i] > value) out.depth[i] = 0.0;
        return out;
    }
    if (value < 0.0 || value >= 100.0)
        throw std::invalid_argument("filter percentile must be in [0, 100)");
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < depth.depth.size(); ++i)
        if (depth.depth[i] > 0.0) valid.push_back(i);
    const std::size_t remove =
        static_cast<std::size_t>(std::ceil(value / 100.0 * static_cast<double>(valid.size())));
    if (remove == 0) return out;
    std::stable_sort(valid.begin(), valid.end(),
                     [&](std::size_t a, std::size_t b) { return conf.sigma[a] > conf.sigma[b]; });
    for (std::size_t i = 0; i < remove; ++i) out.depth[valid[i]] = 0.0;
    return out;
}

MethodSpec method_from_model(const ModelParams& params) {
    return {"model", [params](const Frame& frame, std::size_t) {
                return infer_confidence(frame.image, frame.depth, params);
            }};
}

MethodSpec method_abs_diff(ProxyReducer reducer, int window) {
    const std::string name = reducer == ProxyReducer::min ? "absdiff-min" : "absdiff-avg";
    return {name, [reducer, window](const Frame& frame, std::size_t) {
                const ProxyLabelMap proxy = compute_proxy_labels(frame.depth, window, reducer);
                return abs_diff_confidence(frame.depth, proxy);
            }};
}

MethodSpec method_random(std::uint64_t seed) {
    return {"random", [seed](const Frame& frame, std::size_t index) {
                Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
                ConfidenceMap conf(frame.depth.width, frame.depth.height);
                for (std::size_t i = 0; i < conf.sigma.size(); ++i)
                    if (frame.depth.depth[i] > 0.0) conf.sigma[i] = 1.0 + rng.uniform();
                return conf;
            }};
}

MethodSpec method_oracle() {
    return {"oracle", [](const Frame& frame, std::size_t) {
                ConfidenceMap conf(frame.depth.width, frame.depth.height);
                if (frame.reference.depth.empty()) return conf;
                for (std::size_t i = 0; i < conf.sigma.size(); ++i)
                    if (frame.depth.depth[i] > 0.0 && frame.reference.depth[i] > 0.0)
                        conf.sigma[i] =
                            std::fabs(frame.depth.depth[i] - frame.reference.depth[i]) + 1.0;
                return conf;
            }};
}

namespace {

struct FrameEval {
    bool skipped = false;
    bool degenerate = false;
    std::vector<double> errors;                    // evaluable pixels
    std::vector<std::vector<double>> method_conf;  // per method, evaluable pixels
    std::vector<double> method_auc;
    std::vector<SparsificationCurve> method_curve;
    double optimal_auc = 0.0;
    SparsificationCurve optimal_curve;
    // percentile-filter statistics per method: {sq_sum, abs_sum, count}
    std::vector<std::array<double, 3>> filter_stats;
};

double pooled_rmse_at(const std::vector<double>& suffix_sq, std::size_t removed) {
    const std::size_t n = suffix_sq.size() - 1;
    return std::sqrt(suffix_sq[removed] / static_cast<double>(n - removed));
}

} // namespace

EvalReport evaluate_methods(const std::vector<Frame>& frames,
                            const std::vector<MethodSpec>& methods, const EvalOptions& opts) {
    if (frames.empty()) throw std::invalid_argument("evaluate_methods: no frames");
    if (methods.empty()) throw std::invalid_argument("evaluate_methods: no methods");

    std::vector<FrameEval> evals(frames.size());
    parallel_for(frames.size(), opts.threads, [&](std::size_t fi) {
        const Frame& frame = frames[fi];
        FrameEval& fe = evals[fi];
        if (!frame.has_reference()) {
            fe.skipped = true;
            return;
        }
        std::vector<std::size_t> px;
        for (std::size_t i = 0; i < frame.depth.depth.size(); ++i)
            if (frame.depth.depth[i] > 0.0 && frame.reference.depth[i] > 0.0) px.push_back(i);
        if (px.empty()) {
            fe.skipped = true;
            return;
        }
        fe.errors.reserve(px.size());
        for (std::size_t i : px)
            fe.errors.push_back(std::fabs(frame.depth.depth[i] - frame.reference.depth[i]));
        fe.optimal_curve = sparsification_curve(fe.errors, {}, SortOrder::by_error);
        fe.optimal_auc = auc(fe.optimal_curve);
        fe.degenerate = fe.optimal_curve.degenerate;
        fe.method_conf.resize(methods.size());
        fe.method_auc.resize(methods.size());
        fe.method_curve.resize(methods.size());
        if (opts.filter_percentile) fe.filter_stats.resize(methods.size());
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const ConfidenceMap conf = methods[mi].provider(frame, fi);
            if (conf.width != frame.depth.width || conf.height != frame.depth.height)
                throw std::runtime_error("method '" + methods[mi].name +
                                         "' returned a mismatched confidence raster");
            auto& cvec = fe.method_conf[mi];
            cvec.reserve(px.size());
            for (std::size_t i : px) cvec.push_back(conf.sigma[i]);
            fe.method_curve[mi] = sparsification_curve(fe.errors, cvec, SortOrder::by_confidence);
            fe.method_auc[mi] = auc(fe.method_curve[mi]);
            if (fe.method_auc[mi] < fe.optimal_auc - 1e-12)
                throw std::runtime_error("optimal AUC exceeded by method '" + methods[mi].name +
                                         "' — sparsification invariant violated");
            if (opts.filter_percentile) {
                const SparseDepthMap filtered = filter_depth(
                    frame.depth, conf, FilterMode::percentile, *opts.filter_percentile);
                auto& st = fe.filter_stats[mi];
                st = {0.0, 0.0, 0.0};
                for (std::size_t i : px)
                    if (filtered.depth[i] > 0.0) {
                        const double e = filtered.depth[i] - frame.reference.depth[i];
                        st[0] += e * e;
                        st[1] += std::fabs(e);
                        st[2] += 1.0;
                    }
            }
        }
    });

    EvalReport report;
    report.pooled = opts.pooled;
    for (int i = 0; i < kCurvePoints; ++i) report.fractions.push_back(kCurveStep * i);
    report.methods.resize(methods.size());
    for (std::size_t mi = 0; mi < methods.size(); ++mi)
        report.methods[mi].name = methods[mi].name;

    double err_sq = 0.0, err_abs = 0.0;
    std::size_t err_n = 0;
    std::vector<double> pooled_errors;
    std::vector<std::vector<double>> pooled_conf(methods.size());
    std::vector<std::array<double, 3>> filter_totals(methods.size(), {0.0, 0.0, 0.0});
    report.optimal_mean_curve.assign(kCurvePoints, 0.0);
    for (auto& m : report.methods) m.mean_curve.assign(kCurvePoints, 0.0);

    for (const FrameEval& fe : evals) {
        if (fe.skipped) {
            ++report.frames_skipped;
            continue;
        }
        ++report.frames_evaluated;
        if (fe.degenerate) ++report.degenerate_frames;
        for (double e : fe.errors) {
            err_sq += e * e;
            err_abs += std::fabs(e);
            ++err_n;
        }
        report.optimal_frame_auc.push_back(fe.optimal_auc);
        for (int i = 0; i < kCurvePoints; ++i)
            report.optimal_mean_curve[static_cast<std::size_t>(i)] +=
                fe.optimal_curve.rmse[static_cast<std::size_t>(i)];
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            report.methods[mi].frame_auc.push_back(fe.method_auc[mi]);
            for (int i = 0; i < kCurvePoints; ++i)
                report.methods[mi].mean_curve[static_cast<std::size_t>(i)] +=
                    fe.method_curve[mi].rmse[static_cast<std::size_t>(i)];
            if (opts.filter_percentile)
                for (int k = 0; k < 3; ++k) filter_totals[mi][static_cast<std::size_t>(k)] +=
                    fe.filter_stats[mi][static_cast<std::size_t>(k)];
        }
        if (opts.pooled || opts.fixed_removal_pct || opts.target_rmse) {
            pooled_errors.insert(pooled_errors.end(), fe.errors.begin(), fe.errors.end());
            for (std::size_t mi = 0; mi < methods.size(); ++mi)
                pooled_conf[mi].insert(pooled_conf[mi].end(), fe.method_conf[mi].begin(),
                                       fe.method_conf[mi].end());
        }
    }
    if (report.frames_evaluated == 0)
        throw std::invalid_argument("evaluate_methods: no frame has a usable reference");

    const double n_frames = static_cast<double>(report.frames_evaluated);
    for (double& v : report.optimal_mean_curve) v /= n_frames;
    for (auto& m : report.methods)
        for (double& v : m.mean_curve) v /= n_frames;
    report.unfiltered_rmse = std::sqrt(err_sq / static_cast<double>(err_n));
    report.unfiltered_mae = err_abs / static_cast<double>(err_n);

    if (opts.pooled) {
        const auto opt_curve = sparsification_curve(pooled_errors, {}, SortOrder::by_error);
        report.optimal_mean_auc = auc(opt_curve);
        for (std::size_t mi = 0; mi < methods.size(); ++mi)
            report.methods[mi].mean_auc =
                auc(sparsification_curve(pooled_errors, pooled_conf[mi], SortOrder::by_confidence));
    } else {
        report.optimal_mean_auc =
            std::accumulate(report.optimal_frame_auc.begin(), report.optimal_frame_auc.end(), 0.0) /
            n_frames;
        for (auto& m : report.methods)
            m.mean_auc = std::accumulate(m.frame_auc.begin(), m.frame_auc.end(), 0.0) / n_frames;
    }

    // Dataset-level removal protocols on the pooled pixel set.
    if (opts.fixed_removal_pct || opts.target_rmse) {
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const auto order = removal_order(pooled_conf[mi]);
            const std::size_t n = pooled_errors.size();
            std::vector<double> suffix_sq(n + 1, 0.0);
            for (std::size_t i = n; i-- > 0;)
                suffix_sq[i] = suffix_sq[i + 1] + pooled_errors[order[i]] * pooled_errors[order[i]];
            if (opts.fixed_removal_pct) {
                const double pct = *opts.fixed_removal_pct;
                const std::size_t removed = std::min<std::size_t>(
                    n - 1, static_cast<std::size_t>(std::llround(pct / 100.0 * static_cast<double>(n))));
                report.methods[mi].rmse_at_removal = pooled_rmse_at(suffix_sq, removed);
            }
            if (opts.target_rmse) {
                // Binary search assuming RMSE is non-increasing along the
                // confidence-sorted prefix.
                const double target = *opts.target_rmse;
                std::size_t lo = 0, hi = n - 1;
                if (pooled_rmse_at(suffix_sq, hi) <= target) {
                    while (lo < hi) {
                        const std::size_t mid = (lo + hi) / 2;
                        if (pooled_rmse_at(suffix_sq, mid) <= target) hi = mid;
                        else lo = mid + 1;
                    }
                    report.methods[mi].removal_for_target =
                        100.0 * static_cast<double>(lo) / static_cast<double>(n);
                }
            }
        }
    }
    if (opts.filter_percentile)
        for (std::size_t mi = 0; mi < methods.size(); ++mi)
            if (filter_totals[mi][2] > 0.0) {
                report.methods[mi].post_filter_rmse =
                    std::sqrt(filter_totals[mi][0] / filter_totals[mi][2]);
                report.methods[mi].post_filter_mae = filter_totals[mi][1] / filter_totals[mi][2];
            }
    return report;
}

// --- report output ---

namespace {

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "method,mean_auc,rmse_at_removal,removal_for_target_pct,post_filter_rmse,"
           "post_filter_mae\n";
    for (const auto& m : report.methods) {
        out << m.name << "," << num(m.mean_auc) << ",";
        if (m.rmse_at_removal) out << num(*m.rmse_at_removal);
        out << ",";
        if (m.removal_for_target) out << num(*m.removal_for_target);
        out << ",";
        if (m.post_filter_rmse) out << num(*m.post_filter_rmse);
        out << ",";
        if (m.post_filter_mae) out << num(*m.post_filter_mae);
        out << "\n";
    }
    out << "optimal," << num(report.optimal_mean_auc) << ",,,,\n";
    out << "# frames_evaluated=" << report.frames_evaluated
        << " frames_skipped=" << report.frames_skipped
        << " degenerate_frames=" << report.degenerate_frames
        << " unfiltered_rmse=" << num(report.unfiltered_rmse)
        << " unfiltered_mae=" << num(report.unfiltered_mae)
        << " auc_mode=" << (report.pooled ? "pooled" : "per-frame") << "\n";
}

void write_frame_auc_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "frame_index,optimal";
    for (const auto& m : report.methods) out << "," << m.name;
    out << "\n";
    for (std::size_t i = 0; i < report.optimal_frame_auc.size(); ++i) {
        out << i << "," << num(report.optimal_frame_auc[i]);
        for (const auto& m : report.methods) out << "," << num(m.frame_auc[i]);
        out << "\n";
    }
}

void write_curves_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "fraction,optimal";
    for (const auto& m : report.methods) out << "," << m.name;
    out << "\n";
    for (std::size_t i = 0; i < report.fractions.size(); ++i) {
        out << num(report.fractions[i]) << "," << num(report.optimal_mean_curve[i]);
        for (const auto& m : report.methods) out << "," << num(m.mean_curve[i]);
        out << "\n";
    }
}

void write_curves_svg(const EvalReport& report, const std::filesystem::path& path) {
    const int width = 800, height = 500, ml = 70, mr = 170, mt = 30, mb = 50;
    const int pw = width - ml - mr, ph = height - mt - mb;
    double ymax = 0.0;
    for (const auto& m : report.methods)
        for (double v : m.mean_curve) ymax = std::max(ymax, v);
    for (double v : report.optimal_mean_curve) ymax = std::max(ymax, v);
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.05;

    static const char* palette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double frac = 0.98 * i / 5.0;
        const int x = ml + static_cast<int>(pw * frac / 0.98);
        svg << "<text x=\"" << x << "\" y=\"" << mt + ph + 20
            << "\" font-size=\"12\" text-anchor=\"middle\">" << num(frac) << "</text>\n";
        const double yv = ymax * i / 5.0;
        const int y = mt + ph - static_cast<int>(ph * yv / ymax);
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
            << "\" font-size=\"12\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    }
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
        << "\" font-size=\"13\" text-anchor=\"middle\">removed fraction</text>\n";
    svg << "<text x=\"18\" y=\"" << mt + ph / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << mt + ph / 2 << ")\">RMSE (m)</text>\n";

    auto polyline = [&](const std::vector<double>& curve, const char* color,
                        const std::string& label, int slot) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < curve.size(); ++i) {
            const double x = ml + pw * report.fractions[i] / 0.98;
            const double y = mt + ph - ph * curve[i] / ymax;
            svg << x << "," << y << " ";
        }
        svg << "\"/>\n";
        const int ly = mt + 16 + slot * 18;
        svg << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\""
            << ml + pw + 34 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly
            << "\" font-size=\"12\">" << label << "</text>\n";
    };
    int slot = 0;
    for (std::size_t mi = 0; mi < report.methods.size(); ++mi)
        polyline(report.methods[mi].mean_curve, palette[mi % 8], report.methods[mi].name, slot++);
    polyline(report.optimal_mean_curve, "#000000", "optimal", slot);
    svg << "</svg>\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << svg.str();
}

} // namespace lcf
