#pragma once

#include "hdrhex/diffcore.hpp"
#include "hdrhex/hexplane.hpp"
#include "hdrhex/model.hpp"

#include <filesystem>
#include <string>

namespace testsupport {

inline void randomize(hdrhex::HexPlaneField& f, hdrhex::SeededRng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto* p : f.parameters()) {
        for (double& v : p->values) v = rng.uniform(lo, hi);
    }
}

/// Small model for tests: tiny grid, narrow decoder.
inline hdrhex::ModelConfig tiny_config() {
    hdrhex::ModelConfig mc;
    mc.grid.spatial_res = 6;
    mc.grid.spatial_res_final = 8;
    mc.grid.time_res_init = 4;
    mc.grid.time_res_final = 5;
    mc.grid.ranks = {1, 2, 1};
    mc.grid.channels = 4;
    mc.decoder.density_hidden = {8, 8};
    mc.decoder.color_hidden = {8};
    mc.decoder.posenc = {2, 1, 1, true};
    mc.exposure.hidden = {4, 4};
    mc.crf_hidden = {4};
    return mc;
}

inline hdrhex::Aabb unit_box() {
    hdrhex::Aabb b;
    b.min = hdrhex::Vec3::Constant(-1.0);
    b.max = hdrhex::Vec3::Constant(1.0);
    return b;
}

/// Fresh scratch directory under the build tree, removed on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("hdrhex_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testsupport
