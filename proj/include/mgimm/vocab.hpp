#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mgimm {

/// Lowercases, splits on whitespace and peels the punctuation marks
/// . , ; : ! ? ( ) [ ] { } " into their own tokens. Reserved tokens such as
/// `<region>` survive intact.
std::vector<std::string> tokenize(std::string_view text);

/// Inverse of tokenize up to case and whitespace: closing punctuation hugs
/// the previous word, opening brackets hug the next one.
std::string detokenize(const std::vector<std::string>& tokens);

/// Lowercase with runs of whitespace collapsed to one space and trimmed.
std::string normalize_text(std::string_view text);

/// Token <-> id table. Ids 0..5 are reserved and fixed:
/// <pad> <unk> <bos> <eos> <region> <image>.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kRegion = 4;
    static constexpr int kImage = 5;
    static constexpr int kReservedCount = 6;

    static const std::vector<std::string>& reserved_tokens();

    /// Reserved tokens only.
    Vocab();

    /// Reserved tokens followed by every distinct corpus token in sorted order.
    static Vocab build(const std::vector<std::string>& corpus);

    int id(std::string_view token) const;
    const std::string& token(int id) const;
    bool contains(std::string_view token) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// Unknown words map to <unk>.
    std::vector<int> encode(std::string_view text) const;

    /// Drops <pad>, <bos> and <eos>; stops at the first <eos>.
    std::string decode(const std::vector<int>& ids) const;

    /// One token per line, reserved header first.
    std::string serialize() const;
    static Vocab parse(std::string_view text);

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

    /// FNV-1a 64 of serialize(), as 16 lowercase hex digits.
    std::string hash() const;

private:
    void append(std::string token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

/// FNV-1a 64-bit hash.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace mgimm
