#include "mgimm/synthetic.hpp"

#include <array>
#include <string>

namespace mgimm {
namespace {

constexpr std::size_t kRaster = 32;
constexpr double kFrame = 800.0;
constexpr double kScale = kFrame / static_cast<double>(kRaster);

struct Colour {
    const char* name;
    std::array<float, 3> rgb;
};

const std::array<Colour, 4> kColours{{
    {"red", {0.85f, 0.15f, 0.1f}},
    {"white", {0.95f, 0.95f, 0.95f}},
    {"gray", {0.5f, 0.5f, 0.5f}},
    {"blue", {0.1f, 0.25f, 0.85f}},
}};

const std::array<const char*, 4> kCategories{"vehicle", "airplane", "ship", "storage tank"};
const std::array<const char*, 4> kLocations{"top left", "top right", "bottom left", "bottom right"};

const std::array<const char*, 8> kCaptions{
    "an overpass crosses a wide road with several small vehicles driving on it.",
    "three white airplanes are parked beside the terminal of a busy airport.",
    "a large harbor holds many ships along the long gray dock.",
    "green trees surround a tennis court next to a small parking lot.",
    "round storage tanks stand in two rows at the edge of the field.",
    "a river runs from the top to the bottom under a narrow bridge.",
    "a baseball field sits in the middle of a quiet residential area.",
    "vehicles wait at a crossroad between tall buildings and a green park.",
};

Image blank_image(Rng& rng, std::array<float, 3> base) {
    Image im{kRaster, kRaster, 3, std::vector<float>(kRaster * kRaster * 3)};
    for (std::size_t i = 0; i < kRaster * kRaster; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            im.pixels[i * 3 + c] = base[c] + static_cast<float>(rng.uniform(-0.05, 0.05));
        }
    }
    return im;
}

void fill(Image& im, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h, std::array<float, 3> rgb) {
    for (std::size_t y = y0; y < y0 + h && y < im.height; ++y) {
        for (std::size_t x = x0; x < x0 + w && x < im.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) im.pixels[(y * im.width + x) * 3 + c] = rgb[c];
        }
    }
}

}  // namespace

SyntheticData make_synthetic_data(std::uint64_t seed) {
    Rng rng(seed);
    SyntheticData out;

    for (std::size_t img = 0; img < 4; ++img) {
        const std::array<float, 3> ground{0.25f + 0.1f * static_cast<float>(img), 0.4f, 0.2f};
        Image raster = blank_image(rng, ground);
        std::array<RegionSample, 4> boxes;
        for (std::size_t q = 0; q < 4; ++q) {
            const bool large = (img + q) % 2 == 0;
            const auto& colour = kColours[(img + 2 * q) % kColours.size()];
            const char* category = kCategories[(img + q) % kCategories.size()];
            const std::size_t side = large ? 12 : 5;
            const std::size_t x0 = (q % 2) * 16 + (16 - side) / 2;
            const std::size_t y0 = (q / 2) * 16 + (16 - side) / 2;
            fill(raster, x0, y0, side, side, colour.rgb);

            auto& s = boxes[q];
            s.image_id = "synthetic_region_" + std::to_string(img);
            s.bbox = BBox{static_cast<double>(x0) * kScale, static_cast<double>(y0) * kScale,
                          static_cast<double>(side) * kScale, static_cast<double>(side) * kScale, kFrame, kFrame};
            s.attribute = std::string("a ") + (large ? "large " : "small ") + colour.name + " " + category +
                          " in the " + kLocations[q] + " of the image";
            s.kind = AttributeKind::absolute_location;
        }
        for (auto& s : boxes) {
            s.visual.image = raster;
            out.regions.push_back(std::move(s));
        }
    }

    for (std::size_t img = 0; img < kCaptions.size(); ++img) {
        const std::array<float, 3> ground{0.1f * static_cast<float>(img % 4) + 0.2f,
                                          0.1f * static_cast<float>(img / 4) + 0.3f, 0.35f};
        Image raster = blank_image(rng, ground);
        for (int blob = 0; blob < 3; ++blob) {
            const auto w = static_cast<std::size_t>(4 + rng.below(10));
            const auto h = static_cast<std::size_t>(4 + rng.below(10));
            const auto x0 = static_cast<std::size_t>(rng.below(kRaster - w));
            const auto y0 = static_cast<std::size_t>(rng.below(kRaster - h));
            fill(raster, x0, y0, w, h, kColours[(img + static_cast<std::size_t>(blob)) % kColours.size()].rgb);
        }
        CaptionSample s;
        s.image_id = "synthetic_scene_" + std::to_string(img);
        s.image_w = kFrame;
        s.image_h = kFrame;
        s.caption = kCaptions[img];
        s.visual.image = std::move(raster);
        out.captions.push_back(std::move(s));
    }
    return out;
}

}  // namespace mgimm
