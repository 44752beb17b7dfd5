"""Word-level text pipeline: tokenization, vocabulary, corpus and lexicon loading.

Everything here is immutable after construction; instances can be shared
freely across threads.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

# Reserved ids 0..4, in this order.
PAD, UNK, CLS, MASK, SEP = "[PAD]", "[UNK]", "[CLS]", "[MASK]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, MASK, SEP)
NUM_SPECIALS = len(SPECIAL_TOKENS)

# ASCII punctuation plus common typographic variants, stripped from token edges.
_EDGE_PUNCT = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~‘’“”–—…«»"

Sentence = list[str]


class CorpusError(ValueError):
    """Malformed corpus, lexicon, or stopword file."""


def tokenize(text: str) -> Sentence:
    """Lowercase, split on whitespace, strip punctuation from token edges.

    Tokens that are pure punctuation are dropped. Raises ValueError if
    nothing survives.
    """
    tokens = []
    for raw in text.lower().split():
        word = raw.strip(_EDGE_PUNCT)
        if word:
            tokens.append(word)
    if not tokens:
        raise ValueError("tokenize: no tokens left after cleaning %r" % text)
    return tokens


@dataclass(frozen=True)
class Vocab:
    """Bidirectional token<->id mapping with five reserved special tokens."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int]

    pad_id = 0
    unk_id = 1
    cls_id = 2
    mask_id = 3
    sep_id = 4

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def num_words(self) -> int:
        return len(self.id_to_token) - NUM_SPECIALS

    def is_special(self, token_id: int) -> bool:
        return 0 <= token_id < NUM_SPECIALS

    def id_of(self, token: str) -> int:
        """Id of ``token``, falling back to the UNK id."""
        return self.token_to_id.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        return self.id_to_token[token_id]


def build_vocab(corpus: Sequence[Sequence[str]], min_freq: int = 1) -> Vocab:
    """Build a vocabulary over tokenized sentences.

    Ids are deterministic: the five specials take 0..4, then corpus words
    with frequency >= min_freq, ordered by descending frequency with
    lexicographic tie-breaking.
    """
    if not corpus:
        raise ValueError("build_vocab: corpus is empty")
    if min_freq < 1:
        raise ValueError(f"build_vocab: min_freq must be >= 1, got {min_freq}")
    counts = Counter(word for sentence in corpus for word in sentence)
    kept = sorted(
        (w for w, c in counts.items() if c >= min_freq),
        key=lambda w: (-counts[w], w),
    )
    id_to_token = SPECIAL_TOKENS + tuple(kept)
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocab(id_to_token, token_to_id)


def encode(tokens: Sequence[str], vocab: Vocab, max_len: int) -> list[int]:
    """Encode a sentence as [CLS] followed by word ids, truncated to max_len.

    Out-of-vocabulary words map to UNK; augmentation may synthesize words
    the vocabulary has never seen.
    """
    if max_len < 2:
        raise ValueError(f"encode: max_len must be >= 2, got {max_len}")
    ids = [vocab.cls_id]
    for word in tokens[: max_len - 1]:
        ids.append(vocab.token_to_id.get(word, vocab.unk_id))
    return ids


@dataclass(frozen=True)
class LabeledExample:
    tokens: tuple[str, ...]
    label: int


@dataclass(frozen=True)
class SynonymLexicon:
    """Groups of mutually synonymous words, plus a word -> group index map."""

    synsets: tuple[tuple[str, ...], ...]
    word_to_synsets: dict[str, tuple[int, ...]]

    def has_synonym(self, word: str) -> bool:
        return word in self.word_to_synsets

    def synonyms_of(self, word: str) -> list[str]:
        """All words sharing a group with ``word``, excluding the word itself.

        Sorted so downstream random choices are reproducible.
        """
        groups = self.word_to_synsets.get(word)
        if not groups:
            return []
        out = set()
        for g in groups:
            out.update(self.synsets[g])
        out.discard(word)
        return sorted(out)


def make_lexicon(synsets: Iterable[Sequence[str]]) -> SynonymLexicon:
    """Build a SynonymLexicon, validating that every group has >= 2 distinct words."""
    groups: list[tuple[str, ...]] = []
    word_to_synsets: dict[str, list[int]] = {}
    for raw in synsets:
        group = tuple(dict.fromkeys(raw))  # dedupe, keep order
        if len(group) < 2:
            raise ValueError(f"synset needs >= 2 distinct words, got {raw!r}")
        idx = len(groups)
        groups.append(group)
        for word in group:
            word_to_synsets.setdefault(word, []).append(idx)
    return SynonymLexicon(tuple(groups), {w: tuple(g) for w, g in word_to_synsets.items()})


@dataclass(frozen=True)
class StopwordSet:
    words: frozenset[str]

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.words


def load_corpus(path: str | Path) -> list[LabeledExample]:
    """Read a corpus file: one ``<label-int>\\t<raw text>`` example per line."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label_str, sep, text = line.partition("\t")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: expected '<label>\\t<text>'")
            try:
                label = int(label_str)
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: label {label_str!r} is not an integer") from None
            if label < 0:
                raise CorpusError(f"{path}:{lineno}: label must be >= 0, got {label}")
            try:
                tokens = tokenize(text)
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: text has no tokens") from None
            examples.append(LabeledExample(tuple(tokens), label))
    if not examples:
        raise CorpusError(f"{path}: no examples found")
    return examples


def load_lexicon(path: str | Path) -> SynonymLexicon:
    """Read a synonym lexicon: one space-separated synset per line."""
    synsets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            words = line.strip().lower().split()
            if not words:
                continue
            if len(set(words)) < 2:
                raise CorpusError(f"{path}:{lineno}: synset needs >= 2 distinct words")
            synsets.append(words)
    if not synsets:
        raise CorpusError(f"{path}: no synsets found")
    return make_lexicon(synsets)


def load_stopwords(path: str | Path) -> StopwordSet:
    """Read a stopword file: one word per line."""
    with open(path, encoding="utf-8") as fh:
        words = frozenset(line.strip().lower() for line in fh if line.strip())
    if not words:
        raise CorpusError(f"{path}: no stopwords found")
    return StopwordSet(words)


def default_stopwords() -> StopwordSet:
    """The packaged list of ~150 common English function words."""
    data = resources.files("sslreg.data").joinpath("stopwords.txt").read_text("utf-8")
    return StopwordSet(frozenset(w for w in data.split() if w))
