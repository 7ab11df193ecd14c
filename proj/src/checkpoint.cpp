#include "mgimm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mgimm/config.hpp"

namespace mgimm {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'G', 'I', 'M', 'M', 'C', 'K', '1'};
constexpr std::uint8_t kFlagTrainable = 1;
constexpr std::uint8_t kFlagBuffer = 2;

template <typename U>
void put(std::string& out, U value) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    out.append(buf, sizeof(U));
}

class Cursor {
public:
    explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return value;
    }

    std::string take(std::size_t n) {
        need(n);
        std::string out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IoError("checkpoint is truncated");
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    json header = {{"format_version", kCheckpointVersion},
                   {"stage", ck.stage},
                   {"seed", ck.seed},
                   {"vocab_hash", ck.vocab.hash()},
                   {"config", ck.config.empty() ? json::object() : json::parse(ck.config)},
                   {"model", json::parse(model_config_json(ck.model))},
                   {"vocab", ck.vocab.tokens()}};
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& [name, p] : ck.params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(p.section));
        std::uint8_t flags = 0;
        if (p.trainable) flags |= kFlagTrainable;
        if (p.buffer) flags |= kFlagBuffer;
        put<std::uint8_t>(out, flags);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
        const auto data = p.value.data();
        out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    Cursor cur(bytes);
    if (cur.take(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
        throw ValidationError("not a checkpoint file (bad magic)");
    }
    const auto version = cur.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint format_version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = cur.get<std::uint32_t>();
    json header;
    try {
        header = json::parse(cur.take(header_len));
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    Checkpoint ck;
    try {
        ck.stage = header.at("stage").get<int>();
        ck.seed = header.at("seed").get<std::uint64_t>();
        const auto& config = header.at("config");
        ck.config = config.empty() ? std::string() : config.dump();
        ck.model = model_config_from_json(header.at("model").dump());
        std::string vocab_text;
        for (const auto& tok : header.at("vocab")) vocab_text += tok.get<std::string>() + "\n";
        ck.vocab = Vocab::parse(vocab_text);
        if (ck.vocab.hash() != header.at("vocab_hash").get<std::string>()) {
            throw ValidationError("checkpoint vocabulary does not match its recorded hash");
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint header is incomplete: ") + e.what());
    }

    const auto count = cur.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = cur.take(cur.get<std::uint32_t>());
        const auto section = cur.get<std::uint8_t>();
        const auto flags = cur.get<std::uint8_t>();
        const auto ndims = cur.get<std::uint32_t>();
        if (section > static_cast<std::uint8_t>(Section::lora)) {
            throw ValidationError("checkpoint tensor '" + name + "' has an unknown section");
        }
        Shape shape;
        for (std::uint32_t d = 0; d < ndims; ++d) shape.push_back(static_cast<std::size_t>(cur.get<std::uint64_t>()));
        const auto n = shape_numel(shape);
        const auto raw = cur.take(n * sizeof(float));
        std::vector<float> data(n);
        std::memcpy(data.data(), raw.data(), raw.size());
        Tensor<float> value(shape, std::move(data));
        if (flags & kFlagBuffer) {
            ck.params.add_buffer(name, std::move(value), static_cast<Section>(section));
        } else {
            ck.params.add(name, std::move(value), static_cast<Section>(section), (flags & kFlagTrainable) != 0);
        }
    }
    if (!cur.done()) throw ValidationError("checkpoint has trailing bytes");
    return ck;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::filesystem::path target(path);
    const std::string tmp = path + ".tmp";
    try {
        if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write " + tmp);
            out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
            if (!out) throw IoError("write failed for " + tmp);
        }
        std::filesystem::rename(tmp, target);
    } catch (const std::filesystem::filesystem_error& e) {
        throw IoError("cannot write " + path + ": " + e.code().message());
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

}  // namespace mgimm
