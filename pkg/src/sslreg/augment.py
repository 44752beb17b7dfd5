"""Sentence augmentation operators and augmentation-type prediction instances.

Four operators corrupt a sentence while keeping it mostly intelligible:
synonym replacement (SR), random insertion (RI), random swap (RS), and
random deletion (RD). The auxiliary task is to predict which operator
produced a given augmented sentence.

All operators are pure functions of (input, rng); fixed rng seed replays
the exact output. Parallel generation needs one independent rng per worker.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .text import Sentence, StopwordSet, SynonymLexicon


class AugOp(Enum):
    SR = 0
    RI = 1
    RS = 2
    RD = 3


ALL_OPS = (AugOp.SR, AugOp.RI, AugOp.RS, AugOp.RD)


@dataclass(frozen=True)
class AugmentedInstance:
    tokens: tuple[str, ...]
    op_label: int  # dense index into the active operator subset


def op_count(rate: float, n: int) -> int:
    """How many times an operator fires on an n-token sentence: max(1, round(rate*n))."""
    return max(1, round(rate * n))


def _eligible_words(tokens: Sequence[str], lexicon: SynonymLexicon, stopwords: StopwordSet):
    return [w for w in tokens if w not in stopwords and lexicon.has_synonym(w)]


def synonym_replacement(
    tokens: Sequence[str],
    lexicon: SynonymLexicon,
    stopwords: StopwordSet,
    rate: float,
    rng: np.random.Generator,
) -> tuple[Sentence, bool]:
    """Replace ~rate of the synonym-bearing non-stop tokens with synonyms.

    Each chosen word is replaced at all of its occurrences by one uniformly
    chosen synonym. Returns (sentence, applied); applied is False when no
    token is eligible, in which case the input is returned unchanged.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"synonym_replacement: rate must be in (0, 1], got {rate}")
    occurrences = _eligible_words(tokens, lexicon, stopwords)
    if not occurrences:
        return list(tokens), False
    distinct = sorted(set(occurrences))
    k = min(len(distinct), op_count(rate, len(occurrences)))
    chosen = rng.choice(len(distinct), size=k, replace=False)
    out = list(tokens)
    for idx in chosen:
        word = distinct[int(idx)]
        synonyms = lexicon.synonyms_of(word)
        replacement = synonyms[int(rng.integers(len(synonyms)))]
        out = [replacement if w == word else w for w in out]
    return out, True


def random_insertion(
    tokens: Sequence[str],
    lexicon: SynonymLexicon,
    stopwords: StopwordSet,
    rate: float,
    rng: np.random.Generator,
) -> tuple[Sentence, bool]:
    """Insert synonyms of random non-stop tokens at random positions.

    Performs max(1, round(rate*len)) insertions, so output length is always
    input length + k. Returns unchanged + False if no token has a synonym.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"random_insertion: rate must be in (0, 1], got {rate}")
    if not _eligible_words(tokens, lexicon, stopwords):
        return list(tokens), False
    out = list(tokens)
    for _ in range(op_count(rate, len(tokens))):
        candidates = _eligible_words(out, lexicon, stopwords)
        word = candidates[int(rng.integers(len(candidates)))]
        synonyms = lexicon.synonyms_of(word)
        inserted = synonyms[int(rng.integers(len(synonyms)))]
        position = int(rng.integers(len(out) + 1))
        out.insert(position, inserted)
    return out, True


def random_swap(tokens: Sequence[str], rate: float, rng: np.random.Generator) -> tuple[Sentence, bool]:
    """Exchange max(1, round(rate*len)) uniformly chosen pairs of positions.

    The output is a permutation of the input. Sentences shorter than two
    tokens come back unchanged with applied=False.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"random_swap: rate must be in (0, 1], got {rate}")
    if len(tokens) < 2:
        return list(tokens), False
    out = list(tokens)
    for _ in range(op_count(rate, len(tokens))):
        i = int(rng.integers(len(out)))
        j = int(rng.integers(len(out) - 1))
        if j >= i:  # uniform over distinct pairs
            j += 1
        out[i], out[j] = out[j], out[i]
    return out, True


def random_deletion(tokens: Sequence[str], p: float, rng: np.random.Generator) -> tuple[Sentence, bool]:
    """Delete each token independently with probability p.

    If every token is deleted, one uniformly chosen original token is kept,
    so the output is never empty.
    """
    if not 0 <= p < 1:
        raise ValueError(f"random_deletion: p must be in [0, 1), got {p}")
    if not tokens:
        raise ValueError("random_deletion: empty sentence")
    keep = rng.random(len(tokens)) >= p
    out = [w for w, k in zip(tokens, keep) if k]
    if not out:
        out = [tokens[int(rng.integers(len(tokens)))]]
    return out, True


def normalize_ops(ops: Sequence[AugOp | str]) -> tuple[AugOp, ...]:
    """Canonicalize an operator subset: dedupe and order as SR, RI, RS, RD."""
    resolved = set()
    for op in ops:
        resolved.add(AugOp[op.upper()] if isinstance(op, str) else op)
    if not resolved:
        raise ValueError("active operator set must be non-empty")
    return tuple(sorted(resolved, key=lambda o: o.value))


def op_applicable(
    op: AugOp, tokens: Sequence[str], lexicon: SynonymLexicon | None, stopwords: StopwordSet
) -> bool:
    if op in (AugOp.SR, AugOp.RI):
        return lexicon is not None and bool(_eligible_words(tokens, lexicon, stopwords))
    return len(tokens) >= 2  # RS and RD both need a second token to do anything


def apply_op(
    op: AugOp,
    tokens: Sequence[str],
    lexicon: SynonymLexicon | None,
    stopwords: StopwordSet,
    rate: float,
    rng: np.random.Generator,
) -> tuple[Sentence, bool]:
    if op is AugOp.SR:
        if lexicon is None:
            return list(tokens), False
        return synonym_replacement(tokens, lexicon, stopwords, rate, rng)
    if op is AugOp.RI:
        if lexicon is None:
            return list(tokens), False
        return random_insertion(tokens, lexicon, stopwords, rate, rng)
    if op is AugOp.RS:
        return random_swap(tokens, rate, rng)
    return random_deletion(tokens, rate, rng)


def make_satp_instance(
    tokens: Sequence[str],
    active_ops: Sequence[AugOp | str],
    lexicon: SynonymLexicon | None,
    stopwords: StopwordSet,
    rate: float,
    rng: np.random.Generator,
) -> AugmentedInstance | None:
    """Augment a sentence with one uniformly chosen active operator.

    The label is the operator's dense index within the active subset. If the
    chosen operator cannot act (e.g. SR with no synonym-bearing token), one
    is resampled among the operators that can; returns None when none can,
    signalling the caller to skip this instance.
    """
    ops = normalize_ops(active_ops)
    chosen = ops[int(rng.integers(len(ops)))]
    if not op_applicable(chosen, tokens, lexicon, stopwords):
        usable = [op for op in ops if op_applicable(op, tokens, lexicon, stopwords)]
        if not usable:
            return None
        chosen = usable[int(rng.integers(len(usable)))]
    out, applied = apply_op(chosen, tokens, lexicon, stopwords, rate, rng)
    assert applied, f"{chosen} was judged applicable but did not act"
    return AugmentedInstance(tuple(out), ops.index(chosen))
