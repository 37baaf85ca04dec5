#include "hdrhex/error.hpp"
#include "hdrhex/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace hdrhex;

namespace {

Image noise(int w, int h, std::uint64_t seed) {
    Image img(w, h);
    std::uint64_t s = seed;
    for (double& v : img.data) {
        s = s * 6364136223846793005ULL + 1442695040888963407ULL;
        v = static_cast<double>(s >> 11) * 0x1.0p-53;
    }
    return img;
}

}  // namespace

TEST_CASE("psnr") {
    const Image a = noise(8, 8, 1);
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
    Image b = a;
    for (double& v : b.data) v += 0.1;
    CHECK(std::abs(mse(a, b) - 0.01) < 1e-15);
    CHECK(std::abs(psnr(a, b) - 20.0) < 1e-9);
    CHECK(psnr_from_mse(1.0) == 0.0);
    const Image c = noise(8, 8, 2);
    CHECK(psnr(a, c) == psnr(c, a));
    CHECK_THROWS_AS(psnr(a, noise(8, 7, 1)), ArgumentError);
}

TEST_CASE("ssim") {
    const Image a = noise(24, 20, 3);
    CHECK(std::abs(ssim(a, a) - 1.0) < 1e-12);
    Image inv = a;
    for (double& v : inv.data) v = 1.0 - v;
    CHECK(ssim(a, inv) < 1.0);
    const Image b = noise(24, 20, 4);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-15);
    const double s = ssim(a, b);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    const Image half(16, 16, 0.5);
    CHECK(std::abs(ssim(half, half) - 1.0) < 1e-15);
    CHECK_THROWS_AS(ssim(Image(10, 10), Image(10, 10)), ArgumentError);
    CHECK_THROWS_AS(ssim(a, noise(24, 21, 1)), ArgumentError);
}

TEST_CASE("ssim against a direct window evaluation") {
    const Image a = noise(13, 12, 7);
    const Image b = noise(13, 12, 8);
    // per-window SSIM with a 2D Gaussian, no separability shortcut
    double w[11][11], wsum = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) wsum += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
    auto gray = [](const Image& im, int x, int y) {
        return 0.299 * im.at(x, y, 0) + 0.587 * im.at(x, y, 1) + 0.114 * im.at(x, y, 2);
    };
    double total = 0;
    int count = 0;
    for (int y0 = 0; y0 + 11 <= 12; ++y0) {
        for (int x0 = 0; x0 + 11 <= 13; ++x0) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double g = w[i][j] / wsum, pa = gray(a, x0 + j, y0 + i), pb = gray(b, x0 + j, y0 + i);
                    ma += g * pa;
                    mb += g * pb;
                    saa += g * pa * pa;
                    sbb += g * pb * pb;
                    sab += g * pa * pb;
                }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cab = sab - ma * mb;
            const double c1 = 1e-4, c2 = 9e-4;
            total += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    CHECK(std::abs(ssim(a, b) - total / count) < 1e-12);
}

TEST_CASE("exposure report") {
    const std::vector<double> ev{-3, -1, 1, -3, -1, 1};
    std::vector<double> learned;
    for (double e : ev) learned.push_back(e * std::log(2.0) + 0.7);
    auto r = exposure_report(learned, ev);
    REQUIRE(r.aligned_rmse);
    CHECK(*r.aligned_rmse < 1e-12);
    CHECK(std::abs(*r.mean_offset - 0.7) < 1e-12);
    REQUIRE(r.groups.size() == 3);
    const auto gaps = r.group_gaps();
    REQUIRE(gaps.size() == 2);
    CHECK(std::abs(gaps[0] - 2 * std::log(2.0)) < 1e-12);
    CHECK(std::abs(gaps[1] - 2 * std::log(2.0)) < 1e-12);
    CHECK(r.mean_group_variance() < 1e-24);

    // one group pushed by 0.1 beyond the gauge
    std::vector<double> bent = learned;
    bent[0] += 0.1;
    bent[3] += 0.1;
    r = exposure_report(bent, ev);
    // residuals after removing the mean shift 0.1/3: two at 2/30, four at -1/30
    const double want = std::sqrt((2 * std::pow(0.2 / 3, 2) + 4 * std::pow(0.1 / 3, 2)) / 6);
    CHECK(std::abs(*r.aligned_rmse - want) < 1e-12);

    std::vector<double> moved = bent;
    for (double& v : moved) v -= 5.0;
    CHECK(std::abs(*exposure_report(moved, ev).aligned_rmse - *r.aligned_rmse) < 1e-12);

    std::size_t total = 0;
    for (const auto& b : r.histogram) total += b.count;
    CHECK(total == 6);
    CHECK(r.histogram.size() == 50);

    const auto blind = exposure_report(learned, std::nullopt, 10);
    CHECK(!blind.aligned_rmse);
    CHECK(blind.groups.empty());
    CHECK(blind.histogram.size() == 10);

    const auto same = exposure_report({0.2, 0.2}, std::nullopt, 4);
    std::size_t n = 0;
    for (const auto& b : same.histogram) n += b.count;
    CHECK(n == 2);

    CHECK_THROWS_AS(exposure_report({}, std::nullopt), ArgumentError);
    CHECK_THROWS_AS(exposure_report({0.1}, std::vector<double>{1, 2}), ArgumentError);
}

TEST_CASE("report serialization") {
    CHECK(metric_json(std::numeric_limits<double>::infinity()) == "+inf");
    CHECK(metric_json(-std::numeric_limits<double>::infinity()) == "-inf");
    CHECK(metric_json(1.5) == 1.5);
    const auto r = exposure_report({0.1, 0.5, 0.9}, std::vector<double>{0, 0, 1}, 3);
    const auto j = to_json(r);
    CHECK(j.contains("aligned_rmse"));
    CHECK(j.contains("groups"));
    CHECK(j.contains("histogram"));
    const std::string csv = histogram_csv(r);
    CHECK(csv.rfind("bin_left,count\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
