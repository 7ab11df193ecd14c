#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mgimm {

/// Lowercase, ASCII punctuation to spaces, split on whitespace.
std::vector<std::string> metric_tokens(std::string_view text);

/// Porter (1980) suffix-stripping stemmer on a lowercase word.
std::string porter_stem(std::string_view word);

/// One candidate and its references, already tokenised.
struct ScoredPair {
    std::vector<std::string> candidate;
    std::vector<std::vector<std::string>> references;
};

// All raw scores below are on the unit scale; MetricReport applies the
// reporting scale.

/// Corpus BLEU-4: clipped n-gram precisions summed over the corpus,
/// uniform geometric mean, brevity penalty against the closest reference
/// length (ties go to the shorter one). Zero if any precision is zero.
double bleu4(const std::vector<ScoredPair>& corpus);

/// Sentence BLEU-4 with add-one smoothing on the 2..4-gram precisions.
double sentence_bleu4_smoothed(const ScoredPair& pair);

struct BleuStats {
    std::array<std::size_t, 4> matches{};
    std::array<std::size_t, 4> totals{};
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;
};
BleuStats bleu_stats(const std::vector<ScoredPair>& corpus);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// LCS F-measure with beta = 1.2: (1 + b^2) P R / (R + b^2 P).
double rouge_l_pair(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

/// Best F over references.
double rouge_l(const ScoredPair& pair);

/// CIDEr-D per sample, unit scale x10 (so the maximum is 10): tf-idf over
/// 1..4-grams with idf from the references of the whole corpus, clipped
/// cosine, Gaussian length penalty (sigma 6), averaged over n and
/// references.
std::vector<double> cider_d(const std::vector<ScoredPair>& corpus);

struct MeteorDetail {
    double precision = 0.0;
    double recall = 0.0;
    double fmean = 0.0;
    double penalty = 0.0;
    std::size_t matches = 0;
    std::size_t chunks = 0;
    double score = 0.0;
};

/// Exact then Porter-stem matching, each reference token used once and
/// candidate tokens matched left to right to the earliest free reference
/// token. Fmean = PR / (0.9 P + 0.1 R), penalty = 0.5 (chunks / m)^3.
MeteorDetail meteor_lite_pair(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

/// Best score over references.
double meteor_lite(const ScoredPair& pair);

/// Corpus scores on the reporting scale: BLEU-4, METEOR and ROUGE-L x100,
/// CIDEr x10 on top of its own x10 (maximum 100).
struct MetricReport {
    double bleu4 = 0.0;
    double meteor = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    std::vector<std::string> ids;
    std::vector<double> sample_bleu4;
    std::vector<double> sample_meteor;
    std::vector<double> sample_rouge_l;
    std::vector<double> sample_cider;
    std::size_t candidate_count = 0;
    std::size_t reference_count = 0;

    std::string to_json() const;
};

/// image_id -> references.
using ReferenceMap = std::map<std::string, std::vector<std::string>>;
/// image_id -> candidate, in evaluation order.
using CandidateList = std::vector<std::pair<std::string, std::string>>;

/// Throws ValidationError listing every candidate id without references.
MetricReport evaluate(const CandidateList& candidates, const ReferenceMap& references);

/// JSON Lines with {image_id, caption} or {image_id, captions:[...]};
/// repeated ids accumulate references.
ReferenceMap load_references(const std::string& path);
/// JSON Lines with {image_id, caption}; one candidate per id.
CandidateList load_candidates(const std::string& path);

MetricReport evaluate_corpus(const std::string& pred_file, const std::string& ref_file);

}  // namespace mgimm
