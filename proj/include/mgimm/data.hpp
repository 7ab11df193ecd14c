#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mgimm/multimodal.hpp"
#include "mgimm/rng.hpp"

namespace mgimm {

/// Closed taxonomy of region attributes. Metadata only, never supervision.
enum class AttributeKind {
    category,
    color,
    size,
    geometry,
    absolute_location,
    relative_location_relation,
    relative_size_relation,
};

inline constexpr std::size_t kAttributeKindCount = 7;

std::string attribute_kind_name(AttributeKind kind);
std::optional<AttributeKind> attribute_kind_from_name(std::string_view name);

struct RegionSample {
    std::string image_id;
    BBox bbox;  // carries the original image frame size
    std::string attribute;
    std::optional<AttributeKind> kind;
    VisualInput visual;

    /// Attribute length in tokens.
    std::size_t length() const;
};

struct CaptionSample {
    std::string image_id;
    double image_w = 0.0;
    double image_h = 0.0;
    std::string caption;
    VisualInput visual;

    std::size_t length() const;
};

/// Broken invariants; empty when the sample is valid. Never throws.
std::vector<std::string> validate_sample(const RegionSample& sample);
std::vector<std::string> validate_sample(const CaptionSample& sample);

struct DataIssue {
    std::size_t line = 0;  // 1-based
    std::string message;
};

/// Result of reading a JSON Lines file without stopping at the first
/// problem. Blank lines are skipped; samples keep file order.
template <typename Sample>
struct ScanResult {
    std::vector<Sample> samples;
    std::vector<DataIssue> issues;
};

/// Record schema (one object per line):
///   regions:  {image_id, image:{w,h}, bbox:[x,y,w,h], attribute, kind?, <visual>?}
///   captions: {image_id, image:{w,h}, caption, <visual>?}
/// where <visual> is one of
///   features:{rows, cols, data:[rows*cols*d_v floats]}
///   pixels:{height, width, channels, data:[h*w*c floats, HWC]}
///   image_path: binary PPM (P6), relative paths resolved against the file.
ScanResult<RegionSample> scan_region_file(const std::string& path);
ScanResult<CaptionSample> scan_caption_file(const std::string& path);

/// Strict loaders: any issue raises ValidationError naming its line.
/// An empty file yields an empty list and a warning.
std::vector<RegionSample> load_region_samples(const std::string& path);
std::vector<CaptionSample> load_caption_samples(const std::string& path);

RegionSample parse_region_record(std::string_view line, const std::string& base_dir = ".");
CaptionSample parse_caption_record(std::string_view line, const std::string& base_dir = ".");

std::string region_record_json(const RegionSample& sample);
std::string caption_record_json(const CaptionSample& sample);

Image read_ppm(const std::string& path);

/// Split index file: one 0-based sample index per line.
std::vector<std::size_t> load_split(const std::string& path, std::size_t dataset_size);

template <typename Sample>
std::vector<Sample> select_split(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
    std::vector<Sample> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(samples.at(i));
    return out;
}

// ---- instructions -----------------------------------------------------------

inline constexpr std::size_t kImageTemplateCount = 15;

struct InstructionSet {
    std::string region_template;
    std::vector<std::string> image_templates;

    /// The fixed region instruction and the fifteen image instructions.
    static const InstructionSet& standard();

    /// Exactly fifteen image templates, none empty.
    void validate() const;

    /// Template text with the placeholder token prepended.
    std::string region_text() const;
    std::string image_text(std::size_t index) const;
};

struct SampledInstruction {
    std::string text;     // placeholder + template
    std::size_t index = 0;  // template index; 0 in region mode
    PromptMode mode = PromptMode::image;
};

/// Region mode always returns the region template without consuming
/// randomness; image mode draws uniformly from the fifteen templates.
SampledInstruction sample_instruction(Rng& rng, const InstructionSet& set, PromptMode mode);

}  // namespace mgimm
