#pragma once

#include <cstdint>
#include <vector>

#include "mgimm/data.hpp"

namespace mgimm {

struct SyntheticData {
    std::vector<RegionSample> regions;    // 16: four boxes on each of four images
    std::vector<CaptionSample> captions;  // 8 distinct images, one caption each
};

/// Deterministic toy corpus: 32x32 RGB rasters standing for 800x800 scenes.
/// Region images carry a filled rectangle per quadrant whose colour and
/// extent match the attribute text; caption images are distinct blob scenes.
SyntheticData make_synthetic_data(std::uint64_t seed = 0);

}  // namespace mgimm
