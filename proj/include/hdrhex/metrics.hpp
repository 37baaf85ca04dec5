#pragma once

#include "hdrhex/image.hpp"

#include <json.hpp>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace hdrhex {

/// 10 log10(1 / mse) with peak 1. Identical images give +infinity.
/// Throws ArgumentError on a size mismatch.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);
double mse(const Image& a, const Image& b);

/// Grayscale (0.299, 0.587, 0.114) SSIM with an 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1, averaged over valid windows.
/// Throws ArgumentError when the images differ in size or are smaller than the window.
double ssim(const Image& a, const Image& b);

/// JSON value for a metric; infinities become the strings "+inf" / "-inf".
nlohmann::json metric_json(double v);

struct ExposureGroup {
    double ev = 0.0;
    std::size_t count = 0;
    double mean = 0.0;      // mean learned log-exposure in the group
    double variance = 0.0;  // population variance
};

struct HistogramBin {
    double left = 0.0;
    std::size_t count = 0;
};

struct ExposureReport {
    std::vector<double> learned;
    std::optional<std::vector<double>> gt_ev;
    std::optional<double> mean_offset;
    std::optional<double> aligned_rmse;
    std::vector<ExposureGroup> groups;  // sorted by ev
    std::vector<HistogramBin> histogram;
    double bin_width = 0.0;

    /// Gaps between consecutive group means.
    std::vector<double> group_gaps() const;
    /// Mean of the within-group variances.
    double mean_group_variance() const;
};

/// Removes the mean of (learned - ev ln 2) before measuring the RMSE, groups the
/// learned values by ground-truth ev and bins them into `bins` equal-width bins.
/// Throws ArgumentError when the lists differ in length or are empty.
ExposureReport exposure_report(const std::vector<double>& learned, const std::optional<std::vector<double>>& gt_ev,
                               int bins = 50);

nlohmann::json to_json(const ExposureReport& r);
/// "bin_left,count" rows.
std::string histogram_csv(const ExposureReport& r);

}  // namespace hdrhex
