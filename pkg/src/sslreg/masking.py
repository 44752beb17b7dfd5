"""BERT-style token corruption for the masked-token-prediction task."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .text import NUM_SPECIALS, Vocab


@dataclass(frozen=True)
class MaskedInstance:
    """A corrupted id sequence plus the originals at the corrupted positions.

    target_ids is the full original sequence; only the entries at
    mask_positions carry loss. Position 0 (the CLS slot) is never masked.
    """

    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    mask_positions: tuple[int, ...]


def mask_tokens(
    ids: Sequence[int], p_mask: float, vocab: Vocab, rng: np.random.Generator
) -> MaskedInstance | None:
    """Corrupt a [CLS]-prefixed id sequence for masked-token prediction.

    Each maskable position (everything but CLS and PAD) is selected
    independently with probability p_mask; if the draw selects nothing,
    one uniformly chosen maskable position is forced so the loss is always
    defined. A selected position is replaced by the MASK id 80% of the
    time, by a uniform random non-special vocabulary id 10% of the time,
    and kept unchanged the remaining 10% -- selected-but-kept positions
    still carry loss.

    Returns None (skip signal) when the sequence has no maskable position.
    """
    if not ids or ids[0] != vocab.cls_id:
        raise ValueError("mask_tokens: sequence must start with the CLS id")
    if not 0 < p_mask < 1:
        raise ValueError(f"mask_tokens: p_mask must be in (0, 1), got {p_mask}")
    if len(vocab) <= NUM_SPECIALS:
        raise ValueError("mask_tokens: vocabulary has no non-special words")

    maskable = [p for p in range(1, len(ids)) if ids[p] != vocab.pad_id]
    if not maskable:
        return None

    draws = rng.random(len(maskable))
    selected = [p for p, u in zip(maskable, draws) if u < p_mask]
    if not selected:
        selected = [maskable[int(rng.integers(len(maskable)))]]

    input_ids = list(ids)
    for p in selected:
        u = rng.random()
        if u < 0.8:
            input_ids[p] = vocab.mask_id
        elif u < 0.9:
            input_ids[p] = int(rng.integers(NUM_SPECIALS, len(vocab)))
        # else: keep the original token
    return MaskedInstance(tuple(input_ids), tuple(ids), tuple(selected))
