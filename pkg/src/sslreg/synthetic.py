"""Synthetic classification corpora with controllable difficulty.

Each class owns a pool of signature words; every token of an example is a
shared filler word with probability ``noise`` and a signature word of the
example's class otherwise. noise=0 is perfectly separable by bag-of-words;
noise=1 makes labels independent of the text. Filler words are grouped
into synsets so synonym replacement and random insertion have material to
work with (and, usefully, never touch the class signal).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .text import LabeledExample, SynonymLexicon, make_lexicon

_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]


def _word(i: int) -> str:
    """Deterministic pronounceable pseudo-word for index i."""
    a, b = divmod(i, len(_SYLLABLES))
    if a >= len(_SYLLABLES):
        raise ValueError(f"word index {i} exceeds the pseudo-word space")
    return _SYLLABLES[a] + _SYLLABLES[b]


@dataclass(frozen=True)
class SyntheticTask:
    signature_words: tuple[tuple[str, ...], ...]  # per class
    filler_words: tuple[str, ...]
    lexicon: SynonymLexicon
    num_classes: int


def make_task(num_classes: int, vocab_size: int, synset_size: int = 4) -> SyntheticTask:
    """Fix the word pools and the filler-word lexicon for a task."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    per_class = max(2, (vocab_size // 2) // num_classes)
    num_filler = vocab_size - per_class * num_classes
    if num_filler < synset_size:
        raise ValueError(
            f"vocab_size {vocab_size} too small for {num_classes} classes; "
            f"need at least {2 * per_class * num_classes} words"
        )
    words = [_word(i) for i in range(per_class * num_classes + num_filler)]
    signature = tuple(
        tuple(words[c * per_class:(c + 1) * per_class]) for c in range(num_classes)
    )
    filler = tuple(words[per_class * num_classes:])
    groups = [filler[i:i + synset_size] for i in range(0, len(filler), synset_size)]
    if len(groups[-1]) < 2:
        groups = groups[:-1]
    return SyntheticTask(signature, filler, make_lexicon(groups), num_classes)


def sample_examples(task: SyntheticTask, num_examples: int, noise: float,
                    rng: np.random.Generator, min_len: int = 8,
                    max_len: int = 18) -> list[LabeledExample]:
    if num_examples < 1:
        raise ValueError(f"num_examples must be >= 1, got {num_examples}")
    if not 0 <= noise <= 1:
        raise ValueError(f"noise must be in [0, 1], got {noise}")
    examples = []
    for _ in range(num_examples):
        label = int(rng.integers(task.num_classes))
        length = int(rng.integers(min_len, max_len + 1))
        pool = task.signature_words[label]
        tokens = []
        for _ in range(length):
            if rng.random() < noise:
                tokens.append(task.filler_words[int(rng.integers(len(task.filler_words)))])
            else:
                tokens.append(pool[int(rng.integers(len(pool)))])
        examples.append(LabeledExample(tuple(tokens), label))
    return examples


def write_corpus(path: str | Path, examples: list[LabeledExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(f"{e.label}\t{' '.join(e.tokens)}\n")


def write_lexicon(path: str | Path, lexicon: SynonymLexicon) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for group in lexicon.synsets:
            fh.write(" ".join(group) + "\n")


def gen_synthetic(
    out_dir: str | Path,
    num_train: int,
    num_dev: int,
    num_test: int,
    num_classes: int,
    vocab_size: int,
    noise: float,
    seed: int,
) -> dict[str, Path]:
    """Generate train/dev/test corpora plus the filler-word lexicon.

    The splits are independent draws from the same task distribution,
    deterministically derived from the seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    task = make_task(num_classes, vocab_size)
    train_ss, dev_ss, test_ss = np.random.SeedSequence(seed).spawn(3)
    paths = {
        "train": out_dir / "train.tsv",
        "dev": out_dir / "dev.tsv",
        "test": out_dir / "test.tsv",
        "lexicon": out_dir / "lexicon.txt",
    }
    write_corpus(paths["train"], sample_examples(task, num_train, noise,
                                                 np.random.default_rng(train_ss)))
    write_corpus(paths["dev"], sample_examples(task, num_dev, noise,
                                               np.random.default_rng(dev_ss)))
    write_corpus(paths["test"], sample_examples(task, num_test, noise,
                                                np.random.default_rng(test_ss)))
    write_lexicon(paths["lexicon"], task.lexicon)
    return paths
