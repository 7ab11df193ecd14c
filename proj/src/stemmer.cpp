#include <string>
#include <string_view>
#include <utility>

#include "mgimm/metrics.hpp"

namespace mgimm {
namespace {

// Suffix stripping as published in 1980: no short-word guard and none of
// the later departures (bli, logi).

bool is_consonant(const std::string& w, std::size_t i) {
    switch (w[i]) {
        case 'a': case 'e': case 'i': case 'o': case 'u':
            return false;
        case 'y':
            return i == 0 ? true : !is_consonant(w, i - 1);
        default:
            return true;
    }
}

/// m in [C](VC)^m[V].
int measure(const std::string& stem) {
    int m = 0;
    bool prev_vowel = false;
    for (std::size_t i = 0; i < stem.size(); ++i) {
        const bool vowel = !is_consonant(stem, i);
        if (prev_vowel && !vowel) ++m;
        prev_vowel = vowel;
    }
    return m;
}

bool contains_vowel(const std::string& stem) {
    for (std::size_t i = 0; i < stem.size(); ++i) {
        if (!is_consonant(stem, i)) return true;
    }
    return false;
}

bool ends_double_consonant(const std::string& w) {
    const auto n = w.size();
    return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

/// *o: stem ends consonant-vowel-consonant and the last is not w, x or y.
bool ends_cvc(const std::string& w) {
    const auto n = w.size();
    return n >= 3 && is_consonant(w, n - 3) && !is_consonant(w, n - 2) && is_consonant(w, n - 1) &&
           w[n - 1] != 'w' && w[n - 1] != 'x' && w[n - 1] != 'y';
}

bool ends_with(const std::string& w, std::string_view suffix) { return w.ends_with(suffix); }

std::string strip(const std::string& w, std::string_view suffix) { return w.substr(0, w.size() - suffix.size()); }

using Condition = bool (*)(const std::string&);

struct Rule {
    std::string_view suffix;
    std::string_view replacement;
    Condition condition;
};

bool m_gt_0(const std::string& s) { return measure(s) > 0; }
bool m_gt_1(const std::string& s) { return measure(s) > 1; }
bool m_gt_1_st(const std::string& s) { return measure(s) > 1 && !s.empty() && (s.back() == 's' || s.back() == 't'); }

/// The first rule whose suffix matches decides; a failed condition stops
/// the step.
template <std::size_t N>
std::string apply_rules(const std::string& w, const Rule (&rules)[N]) {
    for (const auto& r : rules) {
        if (ends_with(w, r.suffix)) {
            const auto stem = strip(w, r.suffix);
            if (r.condition == nullptr || r.condition(stem)) return stem + std::string(r.replacement);
            return w;
        }
    }
    return w;
}

std::string step1a(const std::string& w) {
    static const Rule rules[] = {{"sses", "ss", nullptr}, {"ies", "i", nullptr}, {"ss", "ss", nullptr},
                                 {"s", "", nullptr}};
    return apply_rules(w, rules);
}

std::string step1b(const std::string& w) {
    if (ends_with(w, "eed")) {
        const auto stem = strip(w, "eed");
        return measure(stem) > 0 ? stem + "ee" : w;
    }
    std::string stem;
    if (ends_with(w, "ed") && contains_vowel(strip(w, "ed"))) {
        stem = strip(w, "ed");
    } else if (ends_with(w, "ing") && contains_vowel(strip(w, "ing"))) {
        stem = strip(w, "ing");
    } else {
        return w;
    }
    if (ends_with(stem, "at")) return strip(stem, "at") + "ate";
    if (ends_with(stem, "bl")) return strip(stem, "bl") + "ble";
    if (ends_with(stem, "iz")) return strip(stem, "iz") + "ize";
    if (ends_double_consonant(stem)) {
        const char last = stem.back();
        if (last != 'l' && last != 's' && last != 'z') return stem.substr(0, stem.size() - 1);
        return stem;
    }
    if (measure(stem) == 1 && ends_cvc(stem)) return stem + "e";
    return stem;
}

std::string step1c(const std::string& w) {
    if (ends_with(w, "y") && contains_vowel(strip(w, "y"))) return strip(w, "y") + "i";
    return w;
}

std::string step2(const std::string& w) {
    static const Rule rules[] = {
        {"ational", "ate", m_gt_0}, {"tional", "tion", m_gt_0}, {"enci", "ence", m_gt_0},
        {"anci", "ance", m_gt_0},   {"izer", "ize", m_gt_0},    {"abli", "able", m_gt_0},
        {"alli", "al", m_gt_0},     {"entli", "ent", m_gt_0},   {"eli", "e", m_gt_0},
        {"ousli", "ous", m_gt_0},   {"ization", "ize", m_gt_0}, {"ation", "ate", m_gt_0},
        {"ator", "ate", m_gt_0},    {"alism", "al", m_gt_0},    {"iveness", "ive", m_gt_0},
        {"fulness", "ful", m_gt_0}, {"ousness", "ous", m_gt_0}, {"aliti", "al", m_gt_0},
        {"iviti", "ive", m_gt_0},   {"biliti", "ble", m_gt_0},
    };
    return apply_rules(w, rules);
}

std::string step3(const std::string& w) {
    static const Rule rules[] = {
        {"icate", "ic", m_gt_0}, {"ative", "", m_gt_0}, {"alize", "al", m_gt_0}, {"iciti", "ic", m_gt_0},
        {"ical", "ic", m_gt_0},  {"ful", "", m_gt_0},   {"ness", "", m_gt_0},
    };
    return apply_rules(w, rules);
}

std::string step4(const std::string& w) {
    static const Rule rules[] = {
        {"al", "", m_gt_1},    {"ance", "", m_gt_1}, {"ence", "", m_gt_1},  {"er", "", m_gt_1},
        {"ic", "", m_gt_1},    {"able", "", m_gt_1}, {"ible", "", m_gt_1},  {"ant", "", m_gt_1},
        {"ement", "", m_gt_1}, {"ment", "", m_gt_1}, {"ent", "", m_gt_1},   {"ion", "", m_gt_1_st},
        {"ou", "", m_gt_1},    {"ism", "", m_gt_1},  {"ate", "", m_gt_1},   {"iti", "", m_gt_1},
        {"ous", "", m_gt_1},   {"ive", "", m_gt_1},  {"ize", "", m_gt_1},
    };
    return apply_rules(w, rules);
}

std::string step5a(const std::string& w) {
    if (!ends_with(w, "e")) return w;
    const auto stem = strip(w, "e");
    const int m = measure(stem);
    if (m > 1 || (m == 1 && !ends_cvc(stem))) return stem;
    return w;
}

std::string step5b(const std::string& w) {
    if (ends_with(w, "ll") && measure(w.substr(0, w.size() - 1)) > 1) return w.substr(0, w.size() - 1);
    return w;
}

}  // namespace

std::string porter_stem(std::string_view word) {
    std::string w(word);
    if (w.empty()) return w;
    w = step1a(w);
    w = step1b(w);
    w = step1c(w);
    w = step2(w);
    w = step3(w);
    w = step4(w);
    w = step5a(w);
    return step5b(w);
}

}  // namespace mgimm
