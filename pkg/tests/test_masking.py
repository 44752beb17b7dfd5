import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslreg.masking import mask_tokens
from sslreg.text import NUM_SPECIALS, build_vocab, encode


@pytest.fixture(scope="module")
def vocab():
    words = [f"w{i}" for i in range(40)]
    return build_vocab([words], min_freq=1)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_requires_cls_prefix(vocab):
    with pytest.raises(ValueError, match="CLS"):
        mask_tokens([7, 8], 0.15, vocab, rng())


def test_p_mask_validated(vocab):
    with pytest.raises(ValueError):
        mask_tokens([vocab.cls_id, 7], 0.0, vocab, rng())


def test_cls_only_sequence_is_skipped(vocab):
    assert mask_tokens([vocab.cls_id], 0.15, vocab, rng()) is None


def test_forced_selection_on_short_sequence(vocab):
    word_id = vocab.token_to_id["w3"]
    inst = mask_tokens([vocab.cls_id, word_id], 0.15, vocab, rng(1))
    assert inst is not None
    assert inst.mask_positions == (1,)
    assert inst.target_ids[1] == word_id


def test_cls_position_never_masked(vocab):
    r = rng(2)
    ids = encode([f"w{i}" for i in range(20)], vocab, 30)
    for _ in range(200):
        inst = mask_tokens(ids, 0.15, vocab, r)
        assert 0 not in inst.mask_positions
        assert inst.input_ids[0] == vocab.cls_id


def test_targets_hold_originals_and_rest_untouched(vocab):
    r = rng(3)
    ids = encode([f"w{i}" for i in range(25)], vocab, 30)
    inst = mask_tokens(ids, 0.3, vocab, r)
    masked = set(inst.mask_positions)
    for p, original in enumerate(ids):
        assert inst.target_ids[p] == original
        if p not in masked:
            assert inst.input_ids[p] == original


@given(st.integers(min_value=0, max_value=2**31),
       st.integers(min_value=1, max_value=25))
@settings(max_examples=80, deadline=None)
def test_reconstructability(seed, n_words):
    words = [f"w{i}" for i in range(40)]
    vocab = build_vocab([words], min_freq=1)
    ids = encode([f"w{i % 40}" for i in range(n_words)], vocab, 30)
    inst = mask_tokens(ids, 0.15, vocab, rng(seed))
    rebuilt = list(inst.input_ids)
    for p in inst.mask_positions:
        rebuilt[p] = inst.target_ids[p]
    assert rebuilt == list(ids)


def test_deterministic_under_fixed_seed(vocab):
    ids = encode([f"w{i}" for i in range(15)], vocab, 30)
    a = mask_tokens(ids, 0.15, vocab, rng(42))
    b = mask_tokens(ids, 0.15, vocab, rng(42))
    assert a == b


def test_random_branch_draws_non_special_ids(vocab):
    r = rng(4)
    ids = encode([f"w{i % 40}" for i in range(25)], vocab, 30)
    seen_random = 0
    for _ in range(300):
        inst = mask_tokens(ids, 0.5, vocab, r)
        for p in inst.mask_positions:
            got = inst.input_ids[p]
            if got != vocab.mask_id and got != inst.target_ids[p]:
                seen_random += 1
                assert got >= NUM_SPECIALS
    assert seen_random > 50


def test_selection_and_branch_statistics(vocab):
    # coarse version of the acceptance-scale statistical check
    r = rng(5)
    ids = encode([f"w{i % 40}" for i in range(40)], vocab, 64)
    maskable = len(ids) - 1
    total_maskable = 0
    selected = 0
    branch = {"mask": 0, "random": 0, "keep": 0}
    while total_maskable < 30_000:
        inst = mask_tokens(ids, 0.15, vocab, r)
        total_maskable += maskable
        selected += len(inst.mask_positions)
        for p in inst.mask_positions:
            got = inst.input_ids[p]
            if got == vocab.mask_id:
                branch["mask"] += 1
            elif got == inst.target_ids[p]:
                branch["keep"] += 1
            else:
                branch["random"] += 1
    frac = selected / total_maskable
    assert 0.14 <= frac <= 0.16
    assert abs(branch["mask"] / selected - 0.8) < 0.02
    assert abs(branch["random"] / selected - 0.1) < 0.02
    assert abs(branch["keep"] / selected - 0.1) < 0.02
