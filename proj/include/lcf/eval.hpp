#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lcf/dataset.hpp"
#include "lcf/depthio.hpp"
#include "lcf/model.hpp"

namespace lcf {

enum class SortOrder { by_confidence, by_error };

// RMSE of retained pixels while removing 2% of the initial pixel count per
// step (floored, at least one pixel). 50 points at fractions 0.00 .. 0.98.
struct SparsificationCurve {
    std::vector<double> fractions;
    std::vector<double> rmse;
    bool degenerate = false; // fewer than 50 input pixels
};

SparsificationCurve sparsification_curve(const std::vector<double>& errors,
                                         const std::vector<double>& confidence,
                                         SortOrder order);

// Trapezoidal area over fraction in [0, 0.98], normalized by 0.98 so a
// constant curve integrates to its own value.
double auc(const SparsificationCurve& curve);

double rmse(const std::vector<double>& pred, const std::vector<double>& ref,
            const std::vector<std::uint8_t>& mask);
double mae(const std::vector<double>& pred, const std::vector<double>& ref,
           const std::vector<std::uint8_t>& mask);

enum class FilterMode { percentile, threshold };

// percentile: invalidates the ceil(p% of valid) pixels with the largest sigma,
// ties broken toward earlier raster order. threshold: invalidates sigma > t.
SparseDepthMap filter_depth(const SparseDepthMap& depth, const ConfidenceMap& conf,
                            FilterMode mode, double value);

struct MethodSpec {
    std::string name;
    std::function<ConfidenceMap(const Frame&, std::size_t frame_index)> provider;
};

struct EvalOptions {
    bool pooled = false; // pool pixels across frames instead of per-frame AUC
    std::optional<double> fixed_removal_pct; // report RMSE at this removal
    std::optional<double> target_rmse;       // report minimal removal reaching it
    std::optional<double> filter_percentile; // report pre/post filter RMSE/MAE
    int threads = 1;
};

struct MethodReport {
    std::string name;
    double mean_auc = 0.0;
    std::vector<double> frame_auc;
    std::vector<double> mean_curve;
    std::optional<double> rmse_at_removal;
    std::optional<double> removal_for_target; // percent
    std::optional<double> post_filter_rmse;
    std::optional<double> post_filter_mae;
};

struct EvalReport {
    std::vector<double> fractions;
    std::vector<MethodReport> methods;
    double optimal_mean_auc = 0.0;
    std::vector<double> optimal_frame_auc;
    std::vector<double> optimal_mean_curve;
    std::size_t frames_evaluated = 0;
    std::size_t frames_skipped = 0;   // missing reference
    std::size_t degenerate_frames = 0; // fewer than 50 evaluable pixels
    double unfiltered_rmse = 0.0;
    double unfiltered_mae = 0.0;
    bool pooled = false;
};

// Evaluation runs over pixels valid in both the LiDAR map and the reference.
// Frames without a reference are skipped (and counted). The optimal curve
// removes pixels in decreasing error order.
EvalReport evaluate_methods(const std::vector<Frame>& frames,
                            const std::vector<MethodSpec>& methods, const EvalOptions& opts);

// Built-in confidence providers.
MethodSpec method_from_model(const ModelParams& params);
MethodSpec method_abs_diff(ProxyReducer reducer, int window);
MethodSpec method_random(std::uint64_t seed);
MethodSpec method_oracle(); // sigma = |d - reference| + 1

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_frame_auc_csv(const EvalReport& report, const std::filesystem::path& path);
void write_curves_csv(const EvalReport& report, const std::filesystem::path& path);
void write_curves_svg(const EvalReport& report, const std::filesystem::path& path);

} // namespace lcf
