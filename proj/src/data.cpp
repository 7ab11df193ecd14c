#include "mgimm/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mgimm/error.hpp"
#include "mgimm/log.hpp"

namespace mgimm {

using json = nlohmann::json;

namespace {

const std::array<std::string, kAttributeKindCount> kKindNames{
    "category",          "color", "size", "geometry", "absolute location", "relative location relation",
    "relative size relation",
};

bool blank(std::string_view s) {
    for (unsigned char c : s) {
        if (!std::isspace(c)) return false;
    }
    return true;
}

const json& require(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(std::string("missing key '") + key + "'");
    return *it;
}

double require_number(const json& obj, const char* key) {
    const auto& v = require(obj, key);
    if (!v.is_number()) throw ValidationError(std::string("'") + key + "' must be a number");
    return v.get<double>();
}

std::size_t require_count(const json& obj, const char* key) {
    const auto& v = require(obj, key);
    if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) {
        throw ValidationError(std::string("'") + key + "' must be a positive integer");
    }
    return v.get<std::size_t>();
}

std::string require_string(const json& obj, const char* key) {
    const auto& v = require(obj, key);
    if (!v.is_string()) throw ValidationError(std::string("'") + key + "' must be a string");
    return v.get<std::string>();
}

std::vector<float> float_array(const json& obj, const char* key) {
    const auto& v = require(obj, key);
    if (!v.is_array()) throw ValidationError(std::string("'") + key + "' must be an array");
    std::vector<float> out;
    out.reserve(v.size());
    for (const auto& x : v) {
        if (!x.is_number()) throw ValidationError(std::string("'") + key + "' must contain only numbers");
        out.push_back(x.get<float>());
    }
    return out;
}

void read_frame(const json& rec, double& w, double& h) {
    const auto& image = require(rec, "image");
    if (!image.is_object()) throw ValidationError("'image' must be an object {w, h}");
    w = require_number(image, "w");
    h = require_number(image, "h");
}

VisualInput read_visual(const json& rec, const std::string& base_dir) {
    VisualInput visual;
    const int given = static_cast<int>(rec.contains("features")) + static_cast<int>(rec.contains("pixels")) +
                      static_cast<int>(rec.contains("image_path"));
    if (given > 1) throw ValidationError("record may carry only one of features, pixels, image_path");
    if (auto it = rec.find("features"); it != rec.end()) {
        const auto rows = require_count(*it, "rows"), cols = require_count(*it, "cols");
        auto data = float_array(*it, "data");
        if (data.empty() || data.size() % (rows * cols) != 0) {
            throw ValidationError("features.data length " + std::to_string(data.size()) +
                                  " is not a positive multiple of rows*cols");
        }
        const auto width = data.size() / (rows * cols);
        visual.features = Tensor<float>({rows * cols, width}, std::move(data));
        visual.grid_rows = rows;
        visual.grid_cols = cols;
    } else if (auto px = rec.find("pixels"); px != rec.end()) {
        Image image;
        image.height = require_count(*px, "height");
        image.width = require_count(*px, "width");
        image.channels = require_count(*px, "channels");
        image.pixels = float_array(*px, "data");
        image.validate();
        visual.image = std::move(image);
    } else if (auto path = rec.find("image_path"); path != rec.end()) {
        if (!path->is_string()) throw ValidationError("'image_path' must be a string");
        std::filesystem::path p = path->get<std::string>();
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        visual.image = read_ppm(p.string());
    }
    return visual;
}

json visual_json(const VisualInput& visual) {
    json out = json::object();
    if (visual.features) {
        out["features"] = {{"rows", visual.grid_rows},
                           {"cols", visual.grid_cols},
                           {"data", std::vector<float>(visual.features->vec())}};
    } else if (visual.image) {
        const auto& im = *visual.image;
        out["pixels"] = {
            {"height", im.height}, {"width", im.width}, {"channels", im.channels}, {"data", im.pixels}};
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

template <typename Sample, typename Parse>
ScanResult<Sample> scan_file(const std::string& path, Parse parse) {
    const std::string text = read_file(path);
    const std::string base_dir = std::filesystem::path(path).parent_path().string();
    ScanResult<Sample> result;
    std::istringstream lines(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(lines, line)) {
        ++number;
        if (blank(line)) continue;
        try {
            auto sample = parse(line, base_dir.empty() ? std::string(".") : base_dir);
            for (auto& v : validate_sample(sample)) result.issues.push_back({number, std::move(v)});
            result.samples.push_back(std::move(sample));
        } catch (const Error& e) {
            result.issues.push_back({number, e.what()});
        }
    }
    return result;
}

template <typename Sample>
std::vector<Sample> strict(const std::string& path, ScanResult<Sample> scan) {
    if (!scan.issues.empty()) {
        std::ostringstream msg;
        msg << path << ":" << scan.issues.front().line << ": " << scan.issues.front().message;
        if (scan.issues.size() > 1) msg << " (and " << scan.issues.size() - 1 << " more issues)";
        throw ValidationError(msg.str());
    }
    if (scan.samples.empty()) log::warn(path + " contains no records");
    return std::move(scan.samples);
}

}  // namespace

std::string attribute_kind_name(AttributeKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

std::optional<AttributeKind> attribute_kind_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (kKindNames[i] == name) return static_cast<AttributeKind>(i);
    }
    return std::nullopt;
}

std::size_t RegionSample::length() const { return tokenize(attribute).size(); }
std::size_t CaptionSample::length() const { return tokenize(caption).size(); }

std::vector<std::string> validate_sample(const RegionSample& sample) {
    std::vector<std::string> out;
    if (blank(sample.image_id)) out.emplace_back("image_id is empty");
    for (auto& v : sample.bbox.violations()) out.push_back(std::move(v));
    if (blank(sample.attribute)) out.emplace_back("attribute is empty");
    return out;
}

std::vector<std::string> validate_sample(const CaptionSample& sample) {
    std::vector<std::string> out;
    if (blank(sample.image_id)) out.emplace_back("image_id is empty");
    if (!(sample.image_w > 0.0) || !(sample.image_h > 0.0)) out.emplace_back("image size must be positive");
    if (blank(sample.caption)) out.emplace_back("caption is empty");
    return out;
}

RegionSample parse_region_record(std::string_view line, const std::string& base_dir) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object()) throw ValidationError("record must be a JSON object");
    RegionSample s;
    s.image_id = require_string(rec, "image_id");
    read_frame(rec, s.bbox.image_w, s.bbox.image_h);
    const auto& box = require(rec, "bbox");
    if (!box.is_array() || box.size() != 4 || !std::all_of(box.begin(), box.end(), [](const json& v) {
            return v.is_number();
        })) {
        throw ValidationError("'bbox' must be an array of 4 numbers [x, y, w, h]");
    }
    s.bbox.x_min = box[0].get<double>();
    s.bbox.y_min = box[1].get<double>();
    s.bbox.width = box[2].get<double>();
    s.bbox.height = box[3].get<double>();
    s.attribute = require_string(rec, "attribute");
    if (auto it = rec.find("kind"); it != rec.end()) {
        if (!it->is_string()) throw ValidationError("'kind' must be a string");
        s.kind = attribute_kind_from_name(it->get<std::string>());
        if (!s.kind) throw ValidationError("unknown attribute kind '" + it->get<std::string>() + "'");
    }
    s.visual = read_visual(rec, base_dir);
    return s;
}

CaptionSample parse_caption_record(std::string_view line, const std::string& base_dir) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object()) throw ValidationError("record must be a JSON object");
    CaptionSample s;
    s.image_id = require_string(rec, "image_id");
    read_frame(rec, s.image_w, s.image_h);
    s.caption = require_string(rec, "caption");
    s.visual = read_visual(rec, base_dir);
    return s;
}

std::string region_record_json(const RegionSample& s) {
    json rec = {{"image_id", s.image_id},
                {"image", {{"w", s.bbox.image_w}, {"h", s.bbox.image_h}}},
                {"bbox", {s.bbox.x_min, s.bbox.y_min, s.bbox.width, s.bbox.height}},
                {"attribute", s.attribute}};
    if (s.kind) rec["kind"] = attribute_kind_name(*s.kind);
    rec.update(visual_json(s.visual));
    return rec.dump();
}

std::string caption_record_json(const CaptionSample& s) {
    json rec = {{"image_id", s.image_id}, {"image", {{"w", s.image_w}, {"h", s.image_h}}}, {"caption", s.caption}};
    rec.update(visual_json(s.visual));
    return rec.dump();
}

ScanResult<RegionSample> scan_region_file(const std::string& path) {
    return scan_file<RegionSample>(path, parse_region_record);
}

ScanResult<CaptionSample> scan_caption_file(const std::string& path) {
    return scan_file<CaptionSample>(path, parse_caption_record);
}

std::vector<RegionSample> load_region_samples(const std::string& path) {
    return strict(path, scan_region_file(path));
}

std::vector<CaptionSample> load_caption_samples(const std::string& path) {
    return strict(path, scan_caption_file(path));
}

Image read_ppm(const std::string& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string magic;
    std::size_t width = 0, height = 0, maxval = 0;
    auto next_field = [&](std::size_t& out) {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
            in >> std::ws;
        }
        in >> out;
    };
    in >> magic;
    if (magic != "P6") throw IoError(path + ": only binary PPM (P6) images are supported");
    next_field(width);
    next_field(height);
    next_field(maxval);
    if (!in || width == 0 || height == 0 || maxval == 0 || maxval > 255) {
        throw IoError(path + ": malformed PPM header");
    }
    in.get();  // single whitespace byte before the raster
    const auto offset = static_cast<std::size_t>(in.tellg());
    const std::size_t count = width * height * 3;
    if (bytes.size() < offset + count) throw IoError(path + ": truncated PPM raster");
    Image image{height, width, 3, std::vector<float>(count)};
    for (std::size_t i = 0; i < count; ++i) {
        image.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[offset + i])) / static_cast<float>(maxval);
    }
    return image;
}

std::vector<std::size_t> load_split(const std::string& path, std::size_t dataset_size) {
    std::istringstream lines(read_file(path));
    std::vector<std::size_t> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(lines, line)) {
        ++number;
        if (blank(line)) continue;
        std::size_t consumed = 0;
        unsigned long long value = 0;
        try {
            value = std::stoull(line, &consumed);
        } catch (const std::exception&) {
            throw ValidationError(path + ":" + std::to_string(number) + ": not an index");
        }
        if (!blank(std::string_view(line).substr(consumed)) || line.find('-') != std::string::npos) {
            throw ValidationError(path + ":" + std::to_string(number) + ": not an index");
        }
        if (value >= dataset_size) {
            throw ValidationError(path + ":" + std::to_string(number) + ": index " + std::to_string(value) +
                                  " outside dataset of " + std::to_string(dataset_size));
        }
        out.push_back(static_cast<std::size_t>(value));
    }
    return out;
}

// ---- instructions -----------------------------------------------------------

const InstructionSet& InstructionSet::standard() {
    static const InstructionSet set = [] {
        InstructionSet s;
        s.region_template =
            "Based on the provided region of the remote sensing image, describe the basic attributes of the main "
            "objects in that region.";
        s.image_templates = {
            "Describe the following remote sensing image in detail.",
            "Provide a detailed description of the given remote sensing image.",
            "Elaborate on the remote sensing image you see.",
            "Share a comprehensive overview of the presented remote sensing image.",
            "Conduct a thorough analysis of the remote sensing image.",
            "Explain the various aspects of the remote sensing image before you.",
            "Clarify the contents of the displayed remote sensing image with great detail.",
            "Characterize the remote sensing image using a detailed description.",
            "Break down the elements of the remote sensing image in detail.",
            "Walk through the important details of the remote sensing image.",
            "Portray the remote sensing image with a rich, descriptive narrative.",
            "Narrate the contents of the remote sensing image with precision.",
            "Analyze the remote sensing image in a comprehensive and detailed manner.",
            "Illustrate the remote sensing image through a descriptive explanation.",
            "Write an exhaustive depiction of the given remote sensing image.",
        };
        s.validate();
        return s;
    }();
    return set;
}

void InstructionSet::validate() const {
    if (image_templates.size() != kImageTemplateCount) {
        throw ValidationError("instruction set must hold exactly 15 image templates, found " +
                              std::to_string(image_templates.size()));
    }
    if (blank(region_template)) throw ValidationError("region template is empty");
    for (const auto& t : image_templates) {
        if (blank(t)) throw ValidationError("image template is empty");
    }
}

std::string InstructionSet::region_text() const { return "<region> " + region_template; }

std::string InstructionSet::image_text(std::size_t index) const {
    if (index >= image_templates.size()) {
        throw ValidationError("instruction index " + std::to_string(index) + " outside [0, " +
                              std::to_string(image_templates.size()) + ")");
    }
    return "<image> " + image_templates[index];
}

SampledInstruction sample_instruction(Rng& rng, const InstructionSet& set, PromptMode mode) {
    if (mode == PromptMode::region) {
        return {set.region_text(), 0, mode};
    }
    const auto index = static_cast<std::size_t>(rng.below(set.image_templates.size()));
    return {set.image_text(index), index, mode};
}

}  // namespace mgimm
