#include "hdrhex/metrics.hpp"

#include "hdrhex/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace hdrhex {

double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ArgumentError("image sizes differ");
    if (a.data.empty()) throw ArgumentError("empty image");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

double psnr_from_mse(double m) {
    if (m <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

namespace {

constexpr int kWin = 11;

Eigen::MatrixXd gray(const Image& img) {
    Eigen::MatrixXd g(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            g(y, x) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
        }
    }
    return g;
}

/// Valid-mode separable filtering with the normalized Gaussian.
Eigen::MatrixXd filter(const Eigen::MatrixXd& m, const std::array<double, kWin>& w) {
    const Eigen::Index rows = m.rows() - kWin + 1;
    const Eigen::Index cols = m.cols() - kWin + 1;
    Eigen::MatrixXd tmp = Eigen::MatrixXd::Zero(m.rows(), cols);
    for (int k = 0; k < kWin; ++k) tmp += w[k] * m.middleCols(k, cols);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
    for (int k = 0; k < kWin; ++k) out += w[k] * tmp.middleRows(k, rows);
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ArgumentError("image sizes differ");
    if (a.width < kWin || a.height < kWin) throw ArgumentError("image smaller than the 11x11 SSIM window");
    std::array<double, kWin> w{};
    double sum = 0.0;
    for (int k = 0; k < kWin; ++k) {
        const double d = k - (kWin - 1) / 2.0;
        w[k] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += w[k];
    }
    for (double& v : w) v /= sum;

    const Eigen::MatrixXd x = gray(a);
    const Eigen::MatrixXd y = gray(b);
    const Eigen::MatrixXd mx = filter(x, w);
    const Eigen::MatrixXd my = filter(y, w);
    const Eigen::MatrixXd sxx = filter(x.cwiseProduct(x), w) - mx.cwiseProduct(mx);
    const Eigen::MatrixXd syy = filter(y.cwiseProduct(y), w) - my.cwiseProduct(my);
    const Eigen::MatrixXd sxy = filter(x.cwiseProduct(y), w) - mx.cwiseProduct(my);
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const Eigen::ArrayXXd num = (2.0 * mx.cwiseProduct(my).array() + c1) * (2.0 * sxy.array() + c2);
    const Eigen::ArrayXXd den =
        (mx.cwiseProduct(mx).array() + my.cwiseProduct(my).array() + c1) * (sxx.array() + syy.array() + c2);
    return (num / den).mean();
}

nlohmann::json metric_json(double v) {
    if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
    if (std::isnan(v)) return nullptr;
    return v;
}

std::vector<double> ExposureReport::group_gaps() const {
    std::vector<double> gaps;
    for (std::size_t i = 1; i < groups.size(); ++i) gaps.push_back(groups[i].mean - groups[i - 1].mean);
    return gaps;
}

double ExposureReport::mean_group_variance() const {
    if (groups.empty()) return 0.0;
    double s = 0.0;
    for (const ExposureGroup& g : groups) s += g.variance;
    return s / static_cast<double>(groups.size());
}

ExposureReport exposure_report(const std::vector<double>& learned, const std::optional<std::vector<double>>& gt_ev,
                               int bins) {
    if (learned.empty()) throw ArgumentError("exposure_report: no exposures");
    if (bins < 1) throw ArgumentError("exposure_report: need at least one bin");
    if (gt_ev && gt_ev->size() != learned.size()) throw ArgumentError("exposure_report: list lengths differ");
    ExposureReport r;
    r.learned = learned;
    r.gt_ev = gt_ev;
    const std::size_t n = learned.size();

    if (gt_ev) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) off += learned[i] - (*gt_ev)[i] * std::numbers::ln2;
        off /= static_cast<double>(n);
        double se = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = learned[i] - off - (*gt_ev)[i] * std::numbers::ln2;
            se += d * d;
        }
        r.mean_offset = off;
        r.aligned_rmse = std::sqrt(se / static_cast<double>(n));

        std::map<double, std::vector<double>> by_ev;
        for (std::size_t i = 0; i < n; ++i) by_ev[(*gt_ev)[i]].push_back(learned[i]);
        for (const auto& [ev, vals] : by_ev) {
            ExposureGroup g;
            g.ev = ev;
            g.count = vals.size();
            for (double v : vals) g.mean += v;
            g.mean /= static_cast<double>(vals.size());
            for (double v : vals) g.variance += (v - g.mean) * (v - g.mean);
            g.variance /= static_cast<double>(vals.size());
            r.groups.push_back(g);
        }
    }

    const auto [lo_it, hi_it] = std::minmax_element(learned.begin(), learned.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    r.bin_width = (hi - lo) / bins;
    r.histogram.resize(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) r.histogram[b].left = lo + b * r.bin_width;
    for (double v : learned) {
        const int b = std::clamp(static_cast<int>((v - lo) / r.bin_width), 0, bins - 1);
        ++r.histogram[b].count;
    }
    return r;
}

nlohmann::json to_json(const ExposureReport& r) {
    nlohmann::json j;
    j["learned"] = r.learned;
    j["gt_ev"] = r.gt_ev ? nlohmann::json(*r.gt_ev) : nlohmann::json(nullptr);
    j["mean_offset"] = r.mean_offset ? nlohmann::json(*r.mean_offset) : nlohmann::json(nullptr);
    j["aligned_rmse"] = r.aligned_rmse ? nlohmann::json(*r.aligned_rmse) : nlohmann::json(nullptr);
    nlohmann::json groups = nlohmann::json::array();
    for (const ExposureGroup& g : r.groups) {
        groups.push_back({{"ev", g.ev}, {"count", g.count}, {"mean", g.mean}, {"variance", g.variance}});
    }
    j["groups"] = groups;
    j["group_gaps"] = r.group_gaps();
    nlohmann::json hist = nlohmann::json::array();
    for (const HistogramBin& b : r.histogram) hist.push_back({{"bin_left", b.left}, {"count", b.count}});
    j["histogram"] = hist;
    j["bin_width"] = r.bin_width;
    return j;
}

std::string histogram_csv(const ExposureReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "bin_left,count\n";
    for (const HistogramBin& b : r.histogram) os << b.left << ',' << b.count << '\n';
    return os.str();
}

}  // namespace hdrhex
