#!/usr/bin/env python3
"""Independent reference values for the C++ tests.

Writes JSON files into tests/data. The C++ suite only reads the frozen
outputs; rerun this script after changing an input and review the diff.

Sources:
  BLEU-4           nltk.translate.bleu_score (corpus, and sentence with method2)
                   cross-checked by a brute-force clipped n-gram count below
  CIDEr-D          pycocoevalcap CiderScorer (sigma 6, clipped, idf over refs)
  ROUGE-L          memoised recursive LCS, beta 1.2, best F over references
  METEOR-lite      staged exact/stem alignment with nltk's Porter stemmer
                   in ORIGINAL_ALGORITHM mode
  AdamW            torch.optim.AdamW in float64
"""

import json
import math
import string
import sys
from collections import Counter
from functools import lru_cache
from pathlib import Path

from nltk.stem.porter import PorterStemmer
from nltk.translate.bleu_score import SmoothingFunction, corpus_bleu, sentence_bleu
from pycocoevalcap.cider.cider_scorer import CiderScorer

DATA = Path(__file__).resolve().parent.parent / "data"
STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


def tokens(text):
    table = {ord(c): " " for c in string.punctuation}
    return text.lower().translate(table).split()


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def load_corpus():
    refs = {}
    for rec in read_jsonl(DATA / "mini_refs.jsonl"):
        texts = rec["captions"] if "captions" in rec else [rec["caption"]]
        refs.setdefault(rec["image_id"], []).extend(texts)
    preds = [(rec["image_id"], rec["caption"]) for rec in read_jsonl(DATA / "mini_pred.jsonl")]
    return preds, refs


# ---- BLEU -------------------------------------------------------------------

def ngrams(toks, n):
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def brute_bleu4(pairs):
    """Corpus BLEU-4 by explicit clipped counting."""
    matches = [0] * 4
    totals = [0] * 4
    cand_len = ref_len = 0
    for cand, refs in pairs:
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            c = ngrams(cand, n)
            best = Counter()
            for r in refs:
                best |= ngrams(r, n)
            matches[n - 1] += sum(min(k, best[g]) for g, k in c.items())
            totals[n - 1] += max(0, len(cand) - n + 1)
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / 4
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)


def nltk_bleu4(pairs):
    return corpus_bleu([r for _, r in pairs], [c for c, _ in pairs])


def nltk_sentence_bleu(cand, refs):
    return sentence_bleu(refs, cand, smoothing_function=SmoothingFunction().method2)


# ---- ROUGE-L ------------------------------------------------------------------

def lcs(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_pair(cand, ref, beta=1.2):
    l = lcs(cand, ref)
    if l == 0:
        return 0.0
    p, r = l / len(cand), l / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge(cand, refs):
    return max(rouge_pair(cand, r) for r in refs)


# ---- CIDEr-D ------------------------------------------------------------------

def cider(pairs):
    scorer = CiderScorer(n=4, sigma=6.0)
    for cand, refs in pairs:
        scorer.cook_append(" ".join(cand), [" ".join(r) for r in refs])
    _, scores = scorer.compute_score()
    return [float(s) for s in scores]


# ---- METEOR-lite --------------------------------------------------------------

def align(cand, ref):
    """(cand_index, ref_index) pairs: exact stage, then stem stage; each
    stage scans the candidate left to right and takes the earliest free
    reference position."""
    used_c, used_r, pairs = set(), set(), []
    for key in (lambda w: w, STEMMER.stem):
        for i, w in enumerate(cand):
            if i in used_c:
                continue
            for j, v in enumerate(ref):
                if j not in used_r and key(w) == key(v):
                    used_c.add(i)
                    used_r.add(j)
                    pairs.append((i, j))
                    break
    return sorted(pairs)


def meteor_pair(cand, ref):
    pairs = align(cand, ref)
    m = len(pairs)
    if m == 0:
        return {"score": 0.0, "matches": 0, "chunks": 0}
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (0.9 * p + 0.1 * r)
    penalty = 0.5 * (chunks / m) ** 3
    return {"score": fmean * (1 - penalty), "matches": m, "chunks": chunks, "precision": p, "recall": r,
            "fmean": fmean, "penalty": penalty}


def meteor(cand, refs):
    return max(meteor_pair(cand, r)["score"] for r in refs)


# ---- outputs ------------------------------------------------------------------

def metric_oracle():
    preds, refs = load_corpus()
    pairs = [(tokens(c), [tokens(r) for r in refs[i]]) for i, c in preds]
    b_nltk, b_brute = nltk_bleu4(pairs), brute_bleu4(pairs)
    assert abs(b_nltk - b_brute) < 1e-12, (b_nltk, b_brute)

    out = {
        "ids": [i for i, _ in preds],
        "bleu4": b_nltk,
        "sample_bleu4": [nltk_sentence_bleu(c, r) for c, r in pairs],
        "sample_rouge_l": [rouge(c, r) for c, r in pairs],
        "sample_cider": cider(pairs),
        "sample_meteor": [meteor(c, r) for c, r in pairs],
    }

    # targeted cases
    abcd = rouge_pair("a b c d".split(), "a c b d".split())
    single = cider([(tokens("a river runs under a narrow bridge"), [tokens("a river runs under a narrow bridge")])])
    disjoint = cider([
        ("a red roof on a house".split(), ["a red roof on a house".split()]),
        ("two ships at the dock".split(), ["two ships at the dock".split()]),
    ])
    stem = meteor_pair("the dog runs".split(), "the dog running".split())
    miss = meteor_pair("the dog walks".split(), "the dog running".split())
    five = [
        ("the cat sat on the mat".split(), ["the cat is on the mat".split(), "there is a cat on the mat".split()]),
        ("a ship in the harbor".split(), ["a large ship in the harbor".split()]),
        ("two planes near the terminal".split(), ["two planes parked near the terminal".split()]),
        ("trees line the road".split(), ["trees line both sides of the road".split()]),
        ("a bridge over the river".split(), ["a bridge over the river".split()]),
    ]
    out["cases"] = {
        "rouge_abcd": abcd,
        "cider_single_image": single[0],
        "cider_disjoint_two_images": disjoint,
        "meteor_stem_running_runs": stem,
        "meteor_exact_mismatch": miss,
        "bleu4_five_pairs": brute_bleu4(five),
        "bleu4_five_pairs_nltk": nltk_bleu4(five),
    }
    return out


PORTER_WORDS = """
caresses ponies ties caress cats feed agreed plastered bled motoring sing conflated troubled sized hopping
tanned falling hissing fizzed failing filing happy sky relational conditional rational valenci hesitanci
digitizer conformabli radicalli differentli vileli analogousli vietnamization predication operator
feudalism decisiveness hopefulness callousness formaliti sensitiviti sensibiliti triplicate formative
formalize electriciti electrical hopeful goodness revival allowance inference airliner gyroscopic
adjustable defensible irritant replacement adjustment dependent adoption homologou communism activate
angulariti homologous effective bowdlerize probate rate cease controll roll generalizations oscillators
running runs docking docked parked parking airplanes is as a dying lying logically archaeology
possibly ably surrounding residential vehicles buildings crossroad storage harbor terminal
""".split()


def porter_oracle():
    return {w: STEMMER.stem(w, to_lowercase=False) for w in PORTER_WORDS}


def adamw_oracle():
    import torch

    torch.set_default_dtype(torch.float64)
    w0 = [0.5, -1.2, 2.0]
    curv = [1.0, 3.0, 0.5]
    target = [0.1, 0.4, -0.3]
    hyper = {"lr": 0.1, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "weight_decay": 0.01}
    w = torch.tensor(w0, requires_grad=True)
    opt = torch.optim.AdamW([w], lr=hyper["lr"], betas=(hyper["beta1"], hyper["beta2"]), eps=hyper["eps"],
                            weight_decay=hyper["weight_decay"])
    c, t = torch.tensor(curv), torch.tensor(target)
    traj = []
    for _ in range(3):
        opt.zero_grad()
        loss = 0.5 * (c * (w - t) ** 2).sum()
        loss.backward()
        opt.step()
        traj.append(w.detach().tolist())
    return {"w0": w0, "curvature": curv, "target": target, "hyper": hyper, "trajectory": traj}


def main():
    outputs = {
        "metric_oracle.json": metric_oracle(),
        "porter_oracle.json": porter_oracle(),
        "adamw_oracle.json": adamw_oracle(),
    }
    for name, value in outputs.items():
        (DATA / name).write_text(json.dumps(value, indent=2, sort_keys=True) + "\n")
        print("wrote", DATA / name, file=sys.stderr)


if __name__ == "__main__":
    main()
