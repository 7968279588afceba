"""Pairing losses against brute-force enumeration oracles."""

import numpy as np
import pytest

from robustslu import pairing
from robustslu import tensor as T
from robustslu.corpus import Annotation, LabeledExample, SlotSpan, Utterance
from robustslu.pairing import (PairGroup, PairingConfig, PairingItem, adv_pair_loss,
                               align_slots, clean_pair_loss, group_by_annotation, sample_pairs)


def example(text, intent, spans):
    return LabeledExample(Utterance.make(text, text), Annotation(intent, tuple(spans)))


def item(rng, n_int, labels, n_tags=7):
    """A PairingItem over fresh random numpy logits; returns (item, raw arrays).

    float64 inputs so the implementation/oracle comparison checks the
    algorithm, not float32 accumulation noise.
    """
    intent = rng.normal(size=(1, n_int))
    entities = [(lab, rng.normal(size=(1, n_tags))) for lab in labels]
    pi = PairingItem(T.tensor(intent), [(lab, T.tensor(arr)) for lab, arr in entities])
    return pi, (intent, entities)


def oracle_mse(a, b):
    return float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))


def oracle_pair_term(raw_a, raw_b):
    int_a, ents_a = raw_a
    int_b, ents_b = raw_b
    total = oracle_mse(int_a, int_b)
    remaining = {}
    for j, (lab, _) in enumerate(ents_b):
        remaining.setdefault(lab, []).append(j)
    used = {lab: 0 for lab in remaining}
    for i, (lab, arr_a) in enumerate(ents_a):
        queue = remaining.get(lab, [])
        if used.get(lab, 0) < len(queue):
            total += oracle_mse(arr_a, ents_b[queue[used[lab]]][1])
            used[lab] += 1
    return total


def oracle_clean(raws, keys, lam):
    """Enumerate every same-key pair (assumes cap >= all pairs)."""
    total, pairs = 0.0, 0
    for i in range(len(raws)):
        for j in range(i + 1, len(raws)):
            if keys[i] == keys[j]:
                total += oracle_pair_term(raws[i], raws[j])
                pairs += 1
    return lam / pairs * total if pairs else 0.0


def oracle_adv(sets_raw, lam, include_pp):
    total, pairs = 0.0, 0
    for orig, paras in sets_raw:
        for p in paras:
            total += oracle_pair_term(orig, p)
            pairs += 1
        if include_pp:
            for a in range(len(paras)):
                for b in range(a + 1, len(paras)):
                    total += oracle_pair_term(paras[a], paras[b])
                    pairs += 1
    return lam / pairs * total if pairs else 0.0


def test_group_by_annotation_basic():
    batch = [example("a b", "A", []), example("c d", "A", []), example("e f", "B", [])]
    groups = {g.key: g.members for g in group_by_annotation(batch)}
    assert groups[("A", ())] == [0, 1]
    assert groups[("B", ())] == [2]


def test_grouping_uses_slot_labels_not_values():
    a = example("alarm at 9am", "alarm/set", [SlotSpan(2, 2, "datetime")])
    b = example("alarm at noon", "alarm/set", [SlotSpan(2, 2, "datetime")])
    groups = group_by_annotation([a, b])
    assert len(groups) == 1 and groups[0].members == [0, 1]


def test_group_empty_batch():
    assert group_by_annotation([]) == []


def test_sample_pairs_all_when_under_cap():
    group = PairGroup(("A", ()), [0, 1, 2, 3])
    pairs = sample_pairs(group, cap=6, rng=np.random.default_rng(0))
    assert len(pairs) == 6
    assert len(set(pairs)) == 6


def test_sample_pairs_capped_and_deterministic():
    group = PairGroup(("A", ()), [0, 1, 2])
    a = sample_pairs(group, cap=2, rng=np.random.default_rng(5))
    b = sample_pairs(group, cap=2, rng=np.random.default_rng(5))
    assert a == b and len(a) == 2 and len(set(a)) == 2


def test_sample_pairs_singleton_group():
    assert sample_pairs(PairGroup(("A", ()), [7]), 4, np.random.default_rng(0)) == []


def test_align_slots_rules():
    assert align_slots(["location", "datetime"], ["datetime"]) == [(1, 0, "datetime")]
    assert align_slots(["datetime", "datetime"], ["datetime"]) == [(0, 0, "datetime")]
    assert align_slots(["location"], ["datetime"]) == []


def test_clean_pair_loss_zero_for_identical_logits():
    rng = np.random.default_rng(0)
    a, raw = item(rng, 3, ["x"])
    b = PairingItem(T.tensor(raw[0].copy()),
                    [(lab, T.tensor(arr.copy())) for lab, arr in raw[1]])
    groups = [PairGroup(("A", ("x",)), [0, 1])]
    cfg = PairingConfig(lambda_sf=1.0, pair_cap=100)
    assert clean_pair_loss([a, b], groups, cfg).item() == 0.0


def test_clean_pair_loss_hand_value():
    a = PairingItem(T.tensor(np.array([[1.0, 0.0]], dtype=np.float32)), [])
    b = PairingItem(T.tensor(np.array([[0.0, 1.0]], dtype=np.float32)), [])
    groups = [PairGroup(("A", ()), [0, 1])]
    cfg = PairingConfig(lambda_sf=1.0, pair_cap=10)
    assert abs(clean_pair_loss([a, b], groups, cfg).item() - 1.0) < 1e-7


def test_clean_pair_loss_no_pairs_contributes_zero():
    rng = np.random.default_rng(0)
    a, _ = item(rng, 3, [])
    cfg = PairingConfig(lambda_sf=1.0)
    assert clean_pair_loss([a], [PairGroup(("A", ()), [0])], cfg).item() == 0.0


def test_clean_pair_loss_matches_enumeration_oracle():
    rng = np.random.default_rng(42)
    label_pool = ["loc", "dt", "name"]
    intent_pool = ["i1", "i2", "i3"]
    for _ in range(200):
        n = int(rng.integers(2, 9))
        items, raws, keys, batch = [], [], [], []
        for _i in range(n):
            intent = intent_pool[rng.integers(len(intent_pool))]
            labels = sorted(label_pool[rng.integers(len(label_pool))]
                            for _ in range(rng.integers(0, 3)))
            pi, raw = item(rng, 4, labels)
            items.append(pi)
            raws.append(raw)
            keys.append((intent, tuple(labels)))
            spans = [SlotSpan(k * 2, k * 2, lab) for k, lab in enumerate(labels)]
            batch.append(example("w " * 8, intent, spans))
        lam = float(rng.uniform(0.1, 2.0))
        cfg = PairingConfig(lambda_sf=lam, pair_cap=100)
        got = clean_pair_loss(items, group_by_annotation(batch), cfg).item()
        want = oracle_clean(raws, keys, lam)
        assert abs(got - want) <= 1e-6


def test_adv_pair_loss_zero_when_identical():
    rng = np.random.default_rng(1)
    orig, raw = item(rng, 3, ["x"])
    para = PairingItem(T.tensor(raw[0].copy()),
                       [(lab, T.tensor(arr.copy())) for lab, arr in raw[1]])
    cfg = PairingConfig(lambda_a=0.01)
    assert adv_pair_loss([(orig, [para])], cfg).item() == 0.0


def test_adv_pair_loss_paper_weight():
    orig = PairingItem(T.tensor(np.array([[1.0, 0.0]], dtype=np.float32)), [])
    para = PairingItem(T.tensor(np.array([[0.0, 1.0]], dtype=np.float32)), [])
    cfg = PairingConfig(lambda_a=0.01, include_para_para=False)
    got = adv_pair_loss([(orig, [para])], cfg).item()
    assert abs(got - 0.01) < 1e-8  # intent mse 1.0, one pair, lambda 0.01


def test_adv_pair_loss_empty_is_zero():
    cfg = PairingConfig(lambda_a=0.01)
    assert adv_pair_loss([], cfg).item() == 0.0


def test_adv_pair_loss_matches_enumeration_oracle():
    rng = np.random.default_rng(7)
    label_pool = ["loc", "dt"]
    for _ in range(200):
        n_orig = int(rng.integers(1, 4))
        sets, sets_raw = [], []
        for _o in range(n_orig):
            labels_o = sorted(label_pool[rng.integers(2)] for _ in range(rng.integers(0, 3)))
            orig, raw_o = item(rng, 5, labels_o)
            paras, raws_p = [], []
            for _p in range(int(rng.integers(0, 4))):
                labels_p = sorted(label_pool[rng.integers(2)] for _ in range(rng.integers(0, 3)))
                p, raw_p = item(rng, 5, labels_p)
                paras.append(p)
                raws_p.append(raw_p)
            sets.append((orig, paras))
            sets_raw.append((raw_o, raws_p))
        include_pp = bool(rng.integers(2))
        lam = float(rng.uniform(0.005, 1.0))
        cfg = PairingConfig(lambda_a=lam, include_para_para=include_pp)
        got = adv_pair_loss(sets, cfg).item()
        want = oracle_adv(sets_raw, lam, include_pp)
        assert abs(got - want) <= 1e-6


def test_losses_scale_linearly_in_lambda():
    rng = np.random.default_rng(3)
    a, _ = item(rng, 3, ["x"])
    b, _ = item(rng, 3, ["x"])
    groups = [PairGroup(("A", ("x",)), [0, 1])]
    one = clean_pair_loss([a, b], groups, PairingConfig(lambda_sf=0.5, pair_cap=10)).item()
    two = clean_pair_loss([a, b], groups, PairingConfig(lambda_sf=1.0, pair_cap=10)).item()
    assert abs(two - 2 * one) < 1e-6
    adv_one = adv_pair_loss([(a, [b])], PairingConfig(lambda_a=0.5)).item()
    adv_two = adv_pair_loss([(a, [b])], PairingConfig(lambda_a=1.0)).item()
    assert abs(adv_two - 2 * adv_one) < 1e-6


def test_pairs_never_cross_groups_under_permutation():
    rng = np.random.default_rng(9)
    batch = [example(f"s{i} t", "A" if i % 2 == 0 else "B", []) for i in range(6)]
    def pair_sets(order):
        groups = group_by_annotation([batch[i] for i in order])
        pairs = set()
        for g in groups:
            for i, j in sample_pairs(g, cap=100, rng=np.random.default_rng(0)):
                pairs.add(frozenset((order[i], order[j])))
        return pairs
    base = pair_sets(list(range(6)))
    perm = pair_sets(list(rng.permutation(6)))
    assert base == perm


def test_pairing_config_validation():
    with pytest.raises(ValueError):
        PairingConfig(lambda_sf=-1.0).validate()
    with pytest.raises(ValueError):
        PairingConfig(pair_cap=0).validate()
