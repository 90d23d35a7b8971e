"""Corpus-level translation metrics computed from scratch.

BLEU uses the classic language-independent punctuation-splitting tokenizer
(the "13a" scheme) and corpus-summed clipped n-gram counts. chrF++ mixes
character n-grams of order 1..6 with word n-grams of order 1..2 at beta=2.
ROUGE-L is an LCS F1 over Unicode-aware word tokens, averaged per pair.
All scores are on a 0..100 scale and a perfect match is exactly 100.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ToolError


class LengthMismatch(ToolError):
    pass


class EmptyCorpus(ToolError):
    pass


# --------------------------------------------------------------------------
# 13a tokenization
# --------------------------------------------------------------------------

_PUNCT = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_PERIOD_AFTER_NONDIGIT = re.compile(r"([^0-9])([\.,])")
_PERIOD_BEFORE_NONDIGIT = re.compile(r"([\.,])([^0-9])")
_DASH_AFTER_DIGIT = re.compile(r"([0-9])(-)")


def tokenize_13a(text: str) -> list[str]:
    """Tokenize a segment: normalize entities and linebreaks, then surround
    punctuation with spaces (periods and commas only next to non-digits, a
    hyphen only after a digit) and split on whitespace."""
    norm = text.replace("<skipped>", "")
    norm = norm.replace("-\n", "")
    norm = norm.replace("\n", " ")
    norm = norm.replace("&quot;", '"')
    norm = norm.replace("&amp;", "&")
    norm = norm.replace("&lt;", "<")
    norm = norm.replace("&gt;", ">")

    norm = f" {norm} "
    norm = _PUNCT.sub(r" \1 ", norm)
    norm = _PERIOD_AFTER_NONDIGIT.sub(r"\1 \2 ", norm)
    norm = _PERIOD_BEFORE_NONDIGIT.sub(r" \1 \2", norm)
    norm = _DASH_AFTER_DIGIT.sub(r"\1 \2 ", norm)
    return norm.split()


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BleuOptions:
    max_order: int = 4
    smoothing: str = "exp"  # "exp" or "none"

    def __post_init__(self) -> None:
        if not 1 <= self.max_order <= 9:
            raise ValueError(f"max_order must be in 1..9, got {self.max_order}")
        if self.smoothing not in ("exp", "none"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(
    hyps: Sequence[str], refs: Sequence[str], opts: BleuOptions = BleuOptions()
) -> float:
    """Corpus BLEU x100 with 13a tokenization.

    Modified precisions come from clipped counts summed over segments. The
    brevity penalty is exp(1 - ref_len / hyp_len) when the hypothesis corpus
    is not longer than the reference corpus, else 1. With exp smoothing the
    k-th zero-numerator order uses 1 / (2**k * denominator); an order with no
    hypothesis n-grams at all makes the score 0.
    """
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise EmptyCorpus("BLEU needs at least one segment pair")

    correct = [0] * opts.max_order
    total = [0] * opts.max_order
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_tokens = tokenize_13a(hyp)
        ref_tokens = tokenize_13a(ref)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, opts.max_order + 1):
            hyp_counts = _ngram_counts(hyp_tokens, n)
            ref_counts = _ngram_counts(ref_tokens, n)
            total[n - 1] += sum(hyp_counts.values())
            correct[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )

    log_sum = 0.0
    smooth = 1.0
    for n in range(1, opts.max_order + 1):
        if total[n - 1] == 0:
            return 0.0
        if correct[n - 1] == 0:
            if opts.smoothing == "none":
                return 0.0
            smooth *= 2.0
            precision = 1.0 / (smooth * total[n - 1])
        else:
            precision = correct[n - 1] / total[n - 1]
        log_sum += math.log(precision)

    if hyp_len == 0:
        return 0.0
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_sum / opts.max_order)


# --------------------------------------------------------------------------
# chrF++
# --------------------------------------------------------------------------

CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
CHRF_BETA = 2.0

_WHITESPACE = re.compile(r"\s+")


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def chrf_pp(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """chrF++ x100: mean F(beta=2) over 6 character orders (whitespace
    removed) plus 2 word orders, from corpus-summed clipped counts. Orders
    with no n-grams on either side are skipped; orders empty on one side
    only contribute F=0."""
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise EmptyCorpus("chrF++ needs at least one segment pair")

    n_orders = CHRF_CHAR_ORDER + CHRF_WORD_ORDER
    hyp_total = [0] * n_orders
    ref_total = [0] * n_orders
    matched = [0] * n_orders
    for hyp, ref in zip(hyps, refs):
        hyp_chars = _WHITESPACE.sub("", hyp)
        ref_chars = _WHITESPACE.sub("", ref)
        hyp_words = hyp.split()
        ref_words = ref.split()
        for i in range(n_orders):
            if i < CHRF_CHAR_ORDER:
                h = _char_ngrams(hyp_chars, i + 1)
                r = _char_ngrams(ref_chars, i + 1)
            else:
                n = i - CHRF_CHAR_ORDER + 1
                h = _ngram_counts(hyp_words, n)
                r = _ngram_counts(ref_words, n)
            hyp_total[i] += sum(h.values())
            ref_total[i] += sum(r.values())
            matched[i] += sum((h & r).values())

    beta_sq = CHRF_BETA * CHRF_BETA
    f_scores = []
    for i in range(n_orders):
        if hyp_total[i] == 0 and ref_total[i] == 0:
            continue
        precision = matched[i] / hyp_total[i] if hyp_total[i] else 0.0
        recall = matched[i] / ref_total[i] if ref_total[i] else 0.0
        denom = beta_sq * precision + recall
        f_scores.append((1 + beta_sq) * precision * recall / denom if denom > 0 else 0.0)
    if not f_scores:
        return 0.0
    return 100.0 * sum(f_scores) / len(f_scores)


# --------------------------------------------------------------------------
# ROUGE-L
# --------------------------------------------------------------------------


def rouge_tokens(text: str) -> list[str]:
    """Unicode-aware word tokens: maximal letter/digit runs in any script,
    lowercased where the script has case."""
    tokens: list[str] = []
    run: list[str] = []
    for ch in text:
        if ch.isalnum():
            run.append(ch)
        elif run:
            tokens.append("".join(run).lower())
            run.clear()
    if run:
        tokens.append("".join(run).lower())
    return tokens


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for item in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if item == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l_f1(hyp: str, ref: str) -> float:
    """LCS-based F1 x100 for one pair; 0 when either side has no tokens."""
    hyp_tokens = rouge_tokens(hyp)
    ref_tokens = rouge_tokens(ref)
    if not hyp_tokens or not ref_tokens:
        return 0.0
    lcs = lcs_length(hyp_tokens, ref_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp_tokens)
    recall = lcs / len(ref_tokens)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def rouge_l_corpus(hyps: Sequence[str], refs: Sequence[str]) -> float:
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise EmptyCorpus("ROUGE-L needs at least one segment pair")
    return sum(rouge_l_f1(h, r) for h, r in zip(hyps, refs)) / len(hyps)


# --------------------------------------------------------------------------
# Combined report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    bleu: float
    rouge_l: float
    chrf_pp: float
    n_pairs: int

    def __post_init__(self) -> None:
        for label, score in (
            ("bleu", self.bleu),
            ("rouge_l", self.rouge_l),
            ("chrf_pp", self.chrf_pp),
        ):
            if not 0.0 <= score <= 100.0:
                raise ValueError(f"{label} out of [0, 100]: {score}")


def evaluate_pairs(pairs: Iterable[tuple[str, str]]) -> MetricReport:
    """Score (hypothesis, reference) pairs with all three corpus metrics."""
    pair_list = list(pairs)
    if not pair_list:
        raise EmptyCorpus("cannot evaluate an empty pair list")
    hyps = [h for h, _ in pair_list]
    refs = [r for _, r in pair_list]
    return MetricReport(
        bleu=bleu_corpus(hyps, refs),
        rouge_l=rouge_l_corpus(hyps, refs),
        chrf_pp=chrf_pp(hyps, refs),
        n_pairs=len(pair_list),
    )
