#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include "hdrhex/hexplane.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace testsupport {

using hdrhex::Aabb;
using hdrhex::AxisPair;
using hdrhex::HexPlaneField;
using hdrhex::PlaneGrid;
using hdrhex::Vec3;

// Node value of plane `p` at lattice indices (x, y, z, t), written out per pair.
inline double plane_node(const HexPlaneField& f, int p, int c, const int n[4]) {
    const PlaneGrid& g = f.planes()[p];
    switch (static_cast<AxisPair>(p)) {
        case AxisPair::XY: return g.at(c, n[0], n[1]);
        case AxisPair::ZT: return g.at(c, n[2], n[3]);
        case AxisPair::XZ: return g.at(c, n[0], n[2]);
        case AxisPair::TY: return g.at(c, n[3], n[1]);
        case AxisPair::YZ: return g.at(c, n[1], n[2]);
        case AxisPair::XT: return g.at(c, n[0], n[3]);
    }
    return 0.0;
}

// Materializes the full 4D feature tensor at every lattice node, then
// interpolates it quad-linearly.
struct DenseField {
    int S, T, F;
    std::vector<double> v;  // [x][y][z][t][f]
    Aabb box;

    explicit DenseField(const HexPlaneField& f)
        : S(f.spatial_res()), T(f.time_res()), F(f.channels()), box(f.aabb()) {
        v.assign(static_cast<std::size_t>(S) * S * S * T * F, 0.0);
        int n[4];
        for (n[0] = 0; n[0] < S; ++n[0])
            for (n[1] = 0; n[1] < S; ++n[1])
                for (n[2] = 0; n[2] < S; ++n[2])
                    for (n[3] = 0; n[3] < T; ++n[3])
                        for (int ff = 0; ff < F; ++ff) {
                            double d = 0;
                            for (int g = 0; g < 3; ++g) {
                                for (int r = 0; r < f.ranks()[g]; ++r) {
                                    const int c = r * F + ff;
                                    d += plane_node(f, 2 * g, c, n) * plane_node(f, 2 * g + 1, c, n) *
                                         f.vectors()[g].values[c];
                                }
                            }
                            v[idx(n[0], n[1], n[2], n[3], ff)] = d;
                        }
    }
    std::size_t idx(int x, int y, int z, int t, int f) const {
        return ((((static_cast<std::size_t>(x) * S + y) * S + z) * T + t) * F) + f;
    }
    std::vector<double> query(const Vec3& x, double t) const {
        double g[4];
        int res[4] = {S, S, S, T};
        for (int a = 0; a < 3; ++a) {
            double u = (x[a] - box.min[a]) / (box.max[a] - box.min[a]);
            g[a] = std::min(std::max(u, 0.0), 1.0);
        }
        g[3] = std::min(std::max(t, 0.0), 1.0);
        int i0[4];
        double fr[4];
        for (int a = 0; a < 4; ++a) {
            const double s = g[a] * (res[a] - 1);
            i0[a] = std::min(static_cast<int>(std::floor(s)), res[a] - 2);
            fr[a] = s - i0[a];
        }
        std::vector<double> out(F, 0.0);
        for (int corner = 0; corner < 16; ++corner) {
            double w = 1;
            int n[4];
            for (int a = 0; a < 4; ++a) {
                const int bit = (corner >> a) & 1;
                n[a] = i0[a] + bit;
                w *= bit ? fr[a] : 1 - fr[a];
            }
            for (int ff = 0; ff < F; ++ff) out[ff] += w * v[idx(n[0], n[1], n[2], n[3], ff)];
        }
        return out;
    }
};

// Straightforward front-to-back compositing, kept separate from the library.
struct OracleResult {
    Vec3 pixel = Vec3::Zero();
    std::vector<double> w;
    double opacity = 0;
    double survive = 1;  // prod (1 - alpha)
};

inline OracleResult composite_oracle(const std::vector<Vec3>& v, const std::vector<double>& s, const std::vector<double>& d) {
    OracleResult r;
    std::vector<double> alpha(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) alpha[i] = 1.0 - std::exp(-s[i] * d[i]);
    for (std::size_t i = 0; i < v.size(); ++i) {
        double T = 1;
        for (std::size_t k = 0; k < i; ++k) T *= 1 - alpha[k];
        r.w.push_back(T * alpha[i]);
        r.pixel += r.w.back() * v[i];
        r.opacity += r.w.back();
        r.survive *= 1 - alpha[i];
    }
    return r;
}

}  // namespace testsupport
