#include "mgimm/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mgimm/error.hpp"

namespace mgimm {
namespace {

bool is_split_punct(char c) {
    switch (c) {
        case '.': case ',': case ';': case ':': case '!': case '?':
        case '(': case ')': case '[': case ']': case '{': case '}': case '"':
            return true;
        default:
            return false;
    }
}

bool attaches_left(const std::string& tok) {
    return tok == "." || tok == "," || tok == ";" || tok == ":" || tok == "!" || tok == "?" || tok == ")" ||
           tok == "]" || tok == "}";
}

bool attaches_right(const std::string& tok) { return tok == "(" || tok == "[" || tok == "{"; }

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool is_reserved(std::string_view word) {
    const auto& r = Vocab::reserved_tokens();
    return std::find(r.begin(), r.end(), word) != r.end();
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream words{std::string(text)};
    std::string word;
    while (words >> word) {
        if (is_reserved(word)) {
            out.push_back(word);
            continue;
        }
        // a reserved token may be glued to punctuation, e.g. "<image>."
        std::string current;
        for (std::size_t i = 0; i < word.size(); ++i) {
            const char c = word[i];
            if (c == '<') {
                const auto close = word.find('>', i);
                if (close != std::string::npos && is_reserved(std::string_view(word).substr(i, close - i + 1))) {
                    if (!current.empty()) out.push_back(lower(current)), current.clear();
                    out.push_back(word.substr(i, close - i + 1));
                    i = close;
                    continue;
                }
            }
            if (is_split_punct(c)) {
                if (!current.empty()) out.push_back(lower(current)), current.clear();
                out.emplace_back(1, c);
            } else {
                current.push_back(c);
            }
        }
        if (!current.empty()) out.push_back(lower(current));
    }
    return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    bool glue_next = false;
    for (const auto& tok : tokens) {
        if (!out.empty() && !glue_next && !attaches_left(tok)) {
            out.push_back(' ');
        }
        out += tok;
        glue_next = attaches_right(tok);
    }
    return out;
}

std::string normalize_text(std::string_view text) {
    std::istringstream words{lower(text)};
    std::string word, out;
    while (words >> word) {
        if (!out.empty()) out.push_back(' ');
        out += word;
    }
    return out;
}

const std::vector<std::string>& Vocab::reserved_tokens() {
    static const std::vector<std::string> reserved{"<pad>", "<unk>", "<bos>", "<eos>", "<region>", "<image>"};
    return reserved;
}

Vocab::Vocab() {
    for (const auto& tok : reserved_tokens()) append(tok);
}

Vocab Vocab::build(const std::vector<std::string>& corpus) {
    std::set<std::string> seen;
    for (const auto& text : corpus) {
        for (auto& tok : tokenize(text)) seen.insert(std::move(tok));
    }
    Vocab vocab;
    for (const auto& tok : seen) {
        if (!vocab.contains(tok)) vocab.append(tok);
    }
    return vocab;
}

void Vocab::append(std::string token) {
    if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
        throw ValidationError("vocab token must be non-empty without whitespace: '" + token + "'");
    }
    if (ids_.count(token) != 0) {
        throw ValidationError("duplicate vocab token '" + token + "'");
    }
    ids_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(token));
}

int Vocab::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> out;
    for (const auto& tok : tokenize(text)) out.push_back(id(tok));
    return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int i : ids) {
        if (i == kEos) break;
        if (i == kPad || i == kBos) continue;
        words.push_back(token(i));
    }
    return detokenize(words);
}

std::string Vocab::serialize() const {
    std::string out;
    for (const auto& tok : tokens_) {
        out += tok;
        out.push_back('\n');
    }
    return out;
}

Vocab Vocab::parse(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string line(text.substr(start, end - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = end + 1;
    }
    const auto& reserved = reserved_tokens();
    if (lines.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), lines.begin())) {
        throw ValidationError("vocab file does not start with the reserved-token header");
    }
    Vocab vocab;
    for (std::size_t i = reserved.size(); i < lines.size(); ++i) {
        vocab.append(lines[i]);
    }
    return vocab;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocab file " + path);
    out << serialize();
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read vocab file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string Vocab::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(serialize())));
    return buf;
}

}  // namespace mgimm
