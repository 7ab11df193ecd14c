#include "mgimm/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mgimm/error.hpp"
#include "mgimm/log.hpp"

namespace mgimm {

using json = nlohmann::json;

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts out;
    if (tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return out;
}

std::size_t closest_ref_length(std::size_t cand, const std::vector<std::vector<std::string>>& refs) {
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
        const auto d = [&](std::size_t len) { return len > cand ? len - cand : cand - len; };
        if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    return best;
}

void require_references(const ScoredPair& pair) {
    if (pair.references.empty()) throw ValidationError("every candidate needs at least one reference");
}

double brevity_penalty(std::size_t c, std::size_t r) {
    if (c == 0) return 0.0;
    if (c > r) return 1.0;
    return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

}  // namespace

std::vector<std::string> metric_tokens(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text) {
        if (std::ispunct(c)) {
            cleaned.push_back(' ');
        } else {
            cleaned.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    std::istringstream in(cleaned);
    std::vector<std::string> out;
    std::string word;
    while (in >> word) out.push_back(word);
    return out;
}

// ---- BLEU -------------------------------------------------------------------

BleuStats bleu_stats(const std::vector<ScoredPair>& corpus) {
    BleuStats stats;
    for (const auto& pair : corpus) {
        require_references(pair);
        stats.candidate_length += pair.candidate.size();
        stats.reference_length += closest_ref_length(pair.candidate.size(), pair.references);
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto cand = ngrams(pair.candidate, n);
            NgramCounts max_ref;
            for (const auto& ref : pair.references) {
                for (const auto& [g, c] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], c);
            }
            for (const auto& [g, c] : cand) {
                auto it = max_ref.find(g);
                stats.matches[n - 1] += std::min(c, it == max_ref.end() ? std::size_t{0} : it->second);
                stats.totals[n - 1] += c;
            }
        }
    }
    return stats;
}

double bleu4(const std::vector<ScoredPair>& corpus) {
    if (corpus.empty()) throw ValidationError("bleu4: empty candidate set");
    const auto s = bleu_stats(corpus);
    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        if (s.matches[n] == 0 || s.totals[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
    }
    return brevity_penalty(s.candidate_length, s.reference_length) * std::exp(log_sum / 4.0);
}

double sentence_bleu4_smoothed(const ScoredPair& pair) {
    const auto s = bleu_stats({pair});
    if (s.matches[0] == 0) return 0.0;
    double log_sum = std::log(static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]));
    for (std::size_t n = 1; n < 4; ++n) {
        log_sum += std::log(static_cast<double>(s.matches[n] + 1) / static_cast<double>(s.totals[n] + 1));
    }
    return brevity_penalty(s.candidate_length, s.reference_length) * std::exp(log_sum / 4.0);
}

// ---- ROUGE-L ----------------------------------------------------------------

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l_pair(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
    if (candidate.empty() || reference.empty()) {
        log::warn("rouge_l: empty text scores 0");
        return 0.0;
    }
    const auto lcs = static_cast<double>(lcs_length(candidate, reference));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    constexpr double beta2 = 1.2 * 1.2;
    return (1.0 + beta2) * p * r / (r + beta2 * p);
}

double rouge_l(const ScoredPair& pair) {
    require_references(pair);
    double best = 0.0;
    for (const auto& ref : pair.references) best = std::max(best, rouge_l_pair(pair.candidate, ref));
    return best;
}

// ---- CIDEr-D ----------------------------------------------------------------

std::vector<double> cider_d(const std::vector<ScoredPair>& corpus) {
    if (corpus.empty()) throw ValidationError("cider: empty candidate set");
    constexpr double sigma = 6.0;

    // document frequency: number of images whose references contain the n-gram
    std::map<std::vector<std::string>, double> df;
    for (const auto& pair : corpus) {
        require_references(pair);
        std::set<std::vector<std::string>> seen;
        for (const auto& ref : pair.references) {
            for (std::size_t n = 1; n <= 4; ++n) {
                for (const auto& [g, c] : ngrams(ref, n)) seen.insert(g);
            }
        }
        for (const auto& g : seen) df[g] += 1.0;
    }
    const double log_images = std::log(static_cast<double>(corpus.size()));

    struct Vec {
        std::array<std::map<std::vector<std::string>, double>, 4> weights;
        std::array<double, 4> norms{};
        double length = 0.0;
    };
    auto vectorise = [&](const std::vector<std::string>& tokens) {
        Vec v;
        v.length = static_cast<double>(tokens.size());
        for (std::size_t n = 1; n <= 4; ++n) {
            for (const auto& [g, c] : ngrams(tokens, n)) {
                auto it = df.find(g);
                const double idf = log_images - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
                const double w = static_cast<double>(c) * idf;
                v.weights[n - 1][g] = w;
                v.norms[n - 1] += w * w;
            }
        }
        for (auto& nrm : v.norms) nrm = std::sqrt(nrm);
        return v;
    };
    auto similarity = [&](const Vec& hyp, const Vec& ref) {
        const double delta = hyp.length - ref.length;
        std::array<double, 4> val{};
        for (std::size_t n = 0; n < 4; ++n) {
            for (const auto& [g, w] : hyp.weights[n]) {
                auto it = ref.weights[n].find(g);
                if (it != ref.weights[n].end()) val[n] += std::min(w, it->second) * it->second;
            }
            if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) val[n] /= hyp.norms[n] * ref.norms[n];
            val[n] *= std::exp(-(delta * delta) / (2.0 * sigma * sigma));
        }
        return val;
    };

    std::vector<double> scores;
    for (const auto& pair : corpus) {
        const auto hyp = vectorise(pair.candidate);
        double total = 0.0;
        for (const auto& ref_tokens : pair.references) {
            const auto val = similarity(hyp, vectorise(ref_tokens));
            total += (val[0] + val[1] + val[2] + val[3]) / 4.0;
        }
        scores.push_back(10.0 * total / static_cast<double>(pair.references.size()));
    }
    return scores;
}

// ---- METEOR-lite ------------------------------------------------------------

MeteorDetail meteor_lite_pair(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
    MeteorDetail d;
    if (candidate.empty() || reference.empty()) return d;
    std::vector<long> align(candidate.size(), -1);
    std::vector<bool> used(reference.size(), false);
    auto stage = [&](auto&& key) {
        std::vector<std::string> ref_keys;
        for (const auto& r : reference) ref_keys.push_back(key(r));
        for (std::size_t i = 0; i < candidate.size(); ++i) {
            if (align[i] >= 0) continue;
            const auto k = key(candidate[i]);
            for (std::size_t j = 0; j < reference.size(); ++j) {
                if (!used[j] && ref_keys[j] == k) {
                    used[j] = true;
                    align[i] = static_cast<long>(j);
                    break;
                }
            }
        }
    };
    stage([](const std::string& w) { return w; });
    stage([](const std::string& w) { return porter_stem(w); });

    long prev_ref = -2;
    bool prev_matched = false;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        if (align[i] < 0) {
            prev_matched = false;
            continue;
        }
        ++d.matches;
        if (!prev_matched || align[i] != prev_ref + 1) ++d.chunks;
        prev_ref = align[i];
        prev_matched = true;
    }
    if (d.matches == 0) return d;
    const double m = static_cast<double>(d.matches);
    d.precision = m / static_cast<double>(candidate.size());
    d.recall = m / static_cast<double>(reference.size());
    d.fmean = d.precision * d.recall / (0.9 * d.precision + 0.1 * d.recall);
    d.penalty = 0.5 * std::pow(static_cast<double>(d.chunks) / m, 3.0);
    d.score = d.fmean * (1.0 - d.penalty);
    return d;
}

double meteor_lite(const ScoredPair& pair) {
    require_references(pair);
    double best = 0.0;
    for (const auto& ref : pair.references) best = std::max(best, meteor_lite_pair(pair.candidate, ref).score);
    return best;
}

// ---- report -----------------------------------------------------------------

std::string MetricReport::to_json() const {
    json samples = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        samples.push_back({{"image_id", ids[i]},
                           {"bleu4_smoothed", sample_bleu4[i]},
                           {"meteor", sample_meteor[i]},
                           {"rouge_l", sample_rouge_l[i]},
                           {"cider", sample_cider[i]}});
    }
    json doc = {
        {"scale",
         {{"bleu4", "x100"},
          {"meteor", "x100"},
          {"rouge_l", "x100"},
          {"cider", "x10 on the x10 CIDEr-D value"},
          {"tokenization", "lowercase, punctuation to spaces, whitespace split"}}},
        {"scores", {{"bleu4", bleu4}, {"meteor", meteor}, {"rouge_l", rouge_l}, {"cider", cider}}},
        {"counts", {{"candidates", candidate_count}, {"references", reference_count}}},
        {"samples", samples},
    };
    return doc.dump(2) + "\n";
}

MetricReport evaluate(const CandidateList& candidates, const ReferenceMap& references) {
    if (candidates.empty()) throw ValidationError("evaluate: empty candidate set");
    std::vector<std::string> missing;
    std::set<std::string> seen;
    for (const auto& [id, text] : candidates) {
        if (references.count(id) == 0 || references.at(id).empty()) missing.push_back(id);
        if (!seen.insert(id).second) throw ValidationError("evaluate: duplicate candidate id '" + id + "'");
    }
    if (!missing.empty()) {
        std::string msg = "candidates without references:";
        for (const auto& id : missing) msg += " " + id;
        throw ValidationError(msg);
    }

    std::vector<ScoredPair> corpus;
    MetricReport report;
    for (const auto& [id, text] : candidates) {
        ScoredPair pair{metric_tokens(text), {}};
        for (const auto& ref : references.at(id)) pair.references.push_back(metric_tokens(ref));
        report.reference_count += pair.references.size();
        report.ids.push_back(id);
        corpus.push_back(std::move(pair));
    }
    report.candidate_count = corpus.size();
    report.bleu4 = 100.0 * bleu4(corpus);
    const auto cider_scores = cider_d(corpus);
    double meteor_sum = 0.0, rouge_sum = 0.0, cider_sum = 0.0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        report.sample_bleu4.push_back(100.0 * sentence_bleu4_smoothed(corpus[i]));
        report.sample_meteor.push_back(100.0 * meteor_lite(corpus[i]));
        report.sample_rouge_l.push_back(100.0 * rouge_l(corpus[i]));
        report.sample_cider.push_back(10.0 * cider_scores[i]);
        meteor_sum += report.sample_meteor.back();
        rouge_sum += report.sample_rouge_l.back();
        cider_sum += report.sample_cider.back();
    }
    const double n = static_cast<double>(corpus.size());
    report.meteor = meteor_sum / n;
    report.rouge_l = rouge_sum / n;
    report.cider = cider_sum / n;
    return report;
}

namespace {

template <typename Fn>
void each_record(const std::string& path, Fn fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto rec = json::parse(line);
            if (!rec.is_object() || !rec.contains("image_id") || !rec["image_id"].is_string()) {
                throw ValidationError("record needs a string image_id");
            }
            fn(rec);
        } catch (const json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(number) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(number) + ": " + e.what());
        }
    }
}

}  // namespace

ReferenceMap load_references(const std::string& path) {
    ReferenceMap refs;
    each_record(path, [&](const json& rec) {
        auto& list = refs[rec["image_id"].get<std::string>()];
        if (rec.contains("captions")) {
            for (const auto& c : rec["captions"]) list.push_back(c.get<std::string>());
        }
        if (rec.contains("caption")) list.push_back(rec["caption"].get<std::string>());
    });
    return refs;
}

CandidateList load_candidates(const std::string& path) {
    CandidateList out;
    each_record(path, [&](const json& rec) {
        if (!rec.contains("caption")) throw ValidationError("prediction record needs a caption");
        out.emplace_back(rec["image_id"].get<std::string>(), rec["caption"].get<std::string>());
    });
    return out;
}

MetricReport evaluate_corpus(const std::string& pred_file, const std::string& ref_file) {
    return evaluate(load_candidates(pred_file), load_references(ref_file));
}

}  // namespace mgimm
