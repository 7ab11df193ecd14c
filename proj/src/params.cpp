#include "mgimm/params.hpp"

namespace mgimm {

std::string_view section_name(Section section) {
    switch (section) {
        case Section::encoder: return "encoder";
        case Section::rim: return "rim";
        case Section::v2l: return "v2l";
        case Section::lm: return "lm";
        case Section::lora: return "lora";
    }
    return "unknown";
}

Section section_from_name(std::string_view name) {
    if (name == "encoder") return Section::encoder;
    if (name == "rim") return Section::rim;
    if (name == "v2l") return Section::v2l;
    if (name == "lm") return Section::lm;
    if (name == "lora") return Section::lora;
    throw ValidationError("unknown parameter section '" + std::string(name) + "'");
}

}  // namespace mgimm
