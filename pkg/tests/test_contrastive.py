import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiercl.contrastive import (
    BHCL, BHCL_NO_PROTO, HCL, EmbeddingBatch, LossConfig, balanced_denominator_terms, balanced_pair_loss,
    bhcl_gradient, bhcl_loss, contrastive_terms, hcl_gradient, hcl_loss, normalize_backward, pair_loss,
    project_and_normalize, scl_loss,
)
from hiercl.errors import DegenerateBatch, EmptyLevel, ZeroVector
from hiercl.hierarchy import build_tree, penalty_weights
from hiercl.oracles import bhcl_oracle, finite_difference_gradient, hcl_oracle, scl_oracle
from hiercl.prototypes import PrototypeBank, init_bank

from conftest import random_labels, unit_rows


def flat_batch(F, classes):
    return EmbeddingBatch(F, [(c,) for c in classes])


# -- pair loss and SCL --------------------------------------------------------

def test_pair_loss_two_identical_rows():
    b = flat_batch(np.array([[1.0, 0.0], [1.0, 0.0]]), [1, 1])
    assert pair_loss(b, 0, 1, 1.0) == 0.0


def test_pair_loss_hand_value():
    b = flat_batch(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [1, 1, 2])
    assert pair_loss(b, 0, 1, 1.0) == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert pair_loss(b, 0, 1, 1.0) == pytest.approx(0.31326, abs=1e-5)


def test_pair_loss_saturates():
    b = flat_batch(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [1, 1, 2])
    assert pair_loss(b, 0, 1, 1e-3) < 1e-12


def test_pair_loss_uniform_limit():
    rng = np.random.default_rng(1)
    F = unit_rows(rng, 7, 5)
    b = flat_batch(F, range(7))
    for i in range(7):
        assert pair_loss(b, i, (i + 1) % 7, 1e6) == pytest.approx(math.log(6), abs=1e-6)


def test_pair_loss_needs_two_rows():
    with pytest.raises(DegenerateBatch):
        pair_loss(flat_batch(np.array([[1.0, 0.0]]), [1]), 0, 0, 1.0)
    with pytest.raises(DegenerateBatch):
        scl_loss(flat_batch(np.array([[1.0, 0.0]]), [1]), 1.0)


def test_scl_identical_rows():
    v = np.array([[0.6, 0.8]])
    assert scl_loss(flat_batch(np.repeat(v, 2, axis=0), [3, 3]), 0.1) == 0.0
    # with more rows the softmax is uniform over N-1 equal terms
    assert scl_loss(flat_batch(np.repeat(v, 4, axis=0), [3] * 4), 0.1) == pytest.approx(math.log(3), abs=1e-12)


def test_scl_four_rows_oracle():
    F = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    classes = [1, 1, 2, 2]
    assert scl_loss(flat_batch(F, classes), 0.5) == pytest.approx(scl_oracle(F, classes, 0.5), abs=1e-12)


def test_scl_row_permutation():
    rng = np.random.default_rng(2)
    F = unit_rows(rng, 9, 4)
    classes = rng.integers(1, 4, 9).tolist()
    perm = rng.permutation(9)
    a = scl_loss(flat_batch(F, classes), 0.2)
    b = scl_loss(flat_batch(F[perm], [classes[k] for k in perm]), 0.2)
    assert a == pytest.approx(b, abs=1e-12)


def test_singleton_class_rows_contribute_zero():
    F = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert scl_loss(flat_batch(F, [1, 2]), 1.0) == 0.0


# -- HCL ----------------------------------------------------------------------

def test_hcl_single_level_equals_scl(ship_star):
    rng = np.random.default_rng(3)
    F = unit_rows(rng, 6, 3)
    labels = [(int(rng.choice([1, 2])),) for _ in range(6)]
    b = EmbeddingBatch(F, labels, ship_star)
    assert hcl_loss(b, ship_star, LossConfig(0.3)) == pytest.approx(scl_loss(b, 0.3), abs=1e-14)


def test_hcl_toy_oracle(toy):
    rng = np.random.default_rng(4)
    F = unit_rows(rng, 6, 8)
    labels = random_labels(rng, toy, 6, n_classes=3)
    b = EmbeddingBatch(F, labels, toy)
    ref = hcl_oracle(F, labels, penalty_weights(3), 0.1)
    assert hcl_loss(b, toy, LossConfig(0.1)) == pytest.approx(ref, abs=1e-10)


def test_hcl_level1_term_is_coarse_scl(toy):
    rng = np.random.default_rng(5)
    F = unit_rows(rng, 6, 4)
    leaves = ["A1a", "A1b", "A2a", "A2b", "A1a", "A2b"]
    labels = [toy.path(toy.id_of(n)) for n in leaves]
    terms = contrastive_terms(F, toy.label_matrix(labels), np.array([1.0, 0, 0]), 0.1, HCL)
    assert terms.per_level[0] == pytest.approx(scl_oracle(F, [1] * 6, 0.1), abs=1e-12)


def test_hcl_denominator_keeps_truncated_rows(toy):
    # a row labeled only at level 1 is not a level-3 anchor but stays in every denominator
    F = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    labels = [toy.path(toy.id_of("A1a")), toy.path(toy.id_of("A1a")), (toy.id_of("B"),)]
    ref = hcl_oracle(F, labels, [0, 0, 1.0], 1.0)
    got = contrastive_terms(F, toy.label_matrix(labels), np.array([0, 0, 1.0]), 1.0, HCL).loss
    assert got == pytest.approx(ref, abs=1e-14)
    assert got == pytest.approx(2 / 3 * -math.log(math.e / (math.e + 1)), abs=1e-14)


# -- balanced pair loss and BHCL ---------------------------------------------

def test_balanced_single_row_prototype_positive(ship_star):
    v = np.array([[0.0, 1.0]])
    M = np.array([[1.0, 0.0], [0.0, 1.0]])  # Merchant, Warship
    bank = PrototypeBank(M, ship_star)
    b = EmbeddingBatch(v, [(2,)], ship_star)
    terms = balanced_denominator_terms(b, bank, ship_star, 1, 0, 1.0)
    # own class: i excluded, only the prototype remains, divided by |I'_c| = 2
    assert terms[2] == pytest.approx(math.e / 2, abs=1e-15)
    # empty class: its prototype alone
    assert terms[1] == pytest.approx(1.0, abs=1e-15)
    got = balanced_pair_loss(b, bank, ship_star, 1, 0, None, 1.0)
    assert got == pytest.approx(math.log(math.e / 2 + 1.0) - 1.0, abs=1e-14)
    ref = bhcl_oracle(v, [(2,)], [1.0], 1.0, {1: M[0], 2: M[1]}, ship_star.level_nodes)
    assert bhcl_loss(b, bank, ship_star, LossConfig(1.0)) == pytest.approx(ref, abs=1e-14)


def test_balanced_duplicate_row_same_term(toy):
    rng = np.random.default_rng(6)
    bank = init_bank(toy, 5, seed=1)
    F = unit_rows(rng, 4, 5)
    labels = random_labels(rng, toy, 4)
    b1 = EmbeddingBatch(F, labels, toy)
    b2 = EmbeddingBatch(np.vstack([F, F[1:2], F[1:2]]), labels + [labels[1]] * 2, toy)
    c = labels[1][2]
    for i in (0, 2, 3):
        if labels[i][2] == c:
            continue
        # row 1 is the only class-c member: the mean over {row, row, row, prototype} shifts,
        # but appending copies equal to the prototype would not (see test below)
        t1 = balanced_denominator_terms(b1, bank, toy, 3, i, 0.1)
        t2 = balanced_denominator_terms(b2, bank, toy, 3, i, 0.1)
        assert all(t1[k] == t2[k] for k in t1 if k != c)


def test_replication_balance_exact(toy):
    rng = np.random.default_rng(7)
    bank = init_bank(toy, 6, seed=2)
    head = toy.id_of("A1a")
    v = bank.row(head).copy()
    others = ["B1a", "A2b", "B2a", "A1b"]
    F0 = unit_rows(rng, len(others), 6)
    lab0 = [toy.path(toy.id_of(n)) for n in others]
    base = EmbeddingBatch(np.vstack([F0, v]), lab0 + [toy.path(head)], toy)
    grown = EmbeddingBatch(np.vstack([F0, np.tile(v, (6, 1))]), lab0 + [toy.path(head)] * 6, toy)
    for i in range(len(others)):
        t1 = balanced_denominator_terms(base, bank, toy, 3, i, 0.1)
        t2 = balanced_denominator_terms(grown, bank, toy, 3, i, 0.1)
        assert t1 == t2
        # the unbalanced denominator grows with every copy
        d1 = sum(math.exp(base.vectors[a] @ base.vectors[i] / 0.1) for a in range(len(base)) if a != i)
        d2 = sum(math.exp(grown.vectors[a] @ grown.vectors[i] / 0.1) for a in range(len(grown)) if a != i)
        assert d2 > d1


def test_empty_class_contributes_prototype_alone(toy):
    bank = init_bank(toy, 3, seed=0)
    F = unit_rows(np.random.default_rng(8), 2, 3)
    labels = [toy.path(toy.id_of("A1a"))] * 2
    b = EmbeddingBatch(F, labels, toy)
    terms = balanced_denominator_terms(b, bank, toy, 3, 0, 0.5)
    for c in toy.level_nodes[3]:
        if c != toy.id_of("A1a"):
            assert terms[c] == pytest.approx(math.exp(bank.row(c) @ F[0] / 0.5), rel=1e-15)


def test_empty_level_raises():
    t = build_tree([("a", "r")])
    object.__setattr__(t, "level_nodes", [[0], []])
    b = EmbeddingBatch(np.array([[1.0, 0.0]]), [(1,)])
    with pytest.raises(EmptyLevel):
        balanced_denominator_terms(b, None, t, 1, 0, 1.0)


@pytest.mark.parametrize("use_protos", [True, False])
@pytest.mark.parametrize("seed", range(6))
def test_bhcl_matches_oracle(toy, seed, use_protos):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    F = unit_rows(rng, n, 4)
    labels = random_labels(rng, toy, n, n_classes=4, truncate=0.25)
    bank = init_bank(toy, 4, seed=seed)
    b = EmbeddingBatch(F, labels, toy)
    cfg = LossConfig(0.2, include_prototypes=use_protos)
    protos = {c: bank.row(c) for c in toy.category_ids()}
    ref = bhcl_oracle(F, labels, penalty_weights(3), 0.2, protos, toy.level_nodes, use_protos)
    assert bhcl_loss(b, bank if use_protos else None, toy, cfg) == pytest.approx(ref, abs=1e-10)


def test_bhcl_empty_batch(toy):
    b = EmbeddingBatch(np.zeros((0, 3)), [], toy)
    bank = init_bank(toy, 3)
    assert bhcl_loss(b, bank, toy, LossConfig()) == 0.0
    assert bhcl_gradient(b, bank, toy, LossConfig()).shape == (0, 3)


def test_bhcl_without_bank_rejected(toy):
    b = EmbeddingBatch(np.array([[1.0, 0.0]]), [toy.path(7)], toy)
    with pytest.raises(ValueError):
        bhcl_loss(b, None, toy, LossConfig())


def test_bhcl_identical_rows_symmetric_gradient(toy):
    leaf = toy.id_of("B2b")
    bank = init_bank(toy, 4, seed=3)
    v = bank.row(leaf)
    b = EmbeddingBatch(np.tile(v, (4, 1)), [toy.path(leaf)] * 4, toy)
    g = bhcl_gradient(b, bank, toy, LossConfig(0.1))
    assert np.all(g == g[0])


def test_bhcl_permutation_invariant(toy):
    rng = np.random.default_rng(9)
    F = unit_rows(rng, 10, 6)
    labels = random_labels(rng, toy, 10, truncate=0.2)
    bank = init_bank(toy, 6)
    perm = rng.permutation(10)
    a = bhcl_loss(EmbeddingBatch(F, labels, toy), bank, toy, LossConfig())
    b = bhcl_loss(EmbeddingBatch(F[perm], [labels[k] for k in perm], toy), bank, toy, LossConfig())
    assert a == pytest.approx(b, abs=1e-12)


def test_bhcl_label_automorphism(toy):
    # swapping the A and B subtrees (and their prototypes) is a tree automorphism
    swap = {toy.id_of(a): toy.id_of(b) for a, b in [
        ("A", "B"), ("A1", "B1"), ("A2", "B2"), ("A1a", "B1a"), ("A1b", "B1b"), ("A2a", "B2a"), ("A2b", "B2b")]}
    swap.update({v: k for k, v in list(swap.items())})
    rng = np.random.default_rng(10)
    F = unit_rows(rng, 8, 5)
    labels = random_labels(rng, toy, 8)
    bank = init_bank(toy, 5, seed=4)
    M2 = bank.M.copy()
    for k, v in swap.items():
        M2[v - 1] = bank.M[k - 1]
    swapped = [tuple(swap[x] for x in lab) for lab in labels]
    a = bhcl_loss(EmbeddingBatch(F, labels, toy), bank, toy, LossConfig())
    b = bhcl_loss(EmbeddingBatch(F, swapped, toy), PrototypeBank(M2, toy), toy, LossConfig())
    assert a == pytest.approx(b, abs=1e-12)


def test_reduction_one_instance_per_class(toy):
    rng = np.random.default_rng(11)
    leaves = toy.leaves()
    F = unit_rows(rng, len(leaves), 5)
    labels = [toy.path(c) for c in leaves]
    anc = toy.label_matrix(labels)
    for i in range(len(leaves)):
        terms = balanced_denominator_terms(EmbeddingBatch(F, labels, toy), None, toy, 3, i, 0.1,
                                           include_prototypes=False)
        full_sum = sum(math.exp(F[a] @ F[i] / 0.1) for a in range(len(F)) if a != i)
        assert sum(terms.values()) == pytest.approx(full_sum, rel=1e-12)
    noproto = contrastive_terms(F, anc, np.array([0, 0, 1.0]), 0.1, BHCL_NO_PROTO,
                                level_nodes=toy.level_nodes)
    hcl = contrastive_terms(F, anc, np.array([0, 0, 1.0]), 0.1, HCL)
    assert noproto.loss == hcl.loss == 0.0  # no positives anywhere


# -- gradients ----------------------------------------------------------------

@pytest.mark.parametrize("mode", [HCL, BHCL, BHCL_NO_PROTO])
def test_gradient_finite_difference(toy, mode):
    rng = np.random.default_rng(12)
    F = unit_rows(rng, 7, 4)
    labels = random_labels(rng, toy, 7, n_classes=3, truncate=0.2)
    anc = toy.label_matrix(labels)
    bank = init_bank(toy, 4, seed=5)
    lam = penalty_weights(3)

    def fn(X):
        return contrastive_terms(X, anc, lam, 0.1, mode, bank.M, toy.level_nodes, with_grad=False).loss

    g = contrastive_terms(F, anc, lam, 0.1, mode, bank.M, toy.level_nodes).grad
    np.testing.assert_allclose(g, finite_difference_gradient(fn, F), atol=1e-6, rtol=1e-6)


def test_public_gradients_agree_with_engine(toy):
    rng = np.random.default_rng(13)
    F = unit_rows(rng, 5, 3)
    labels = random_labels(rng, toy, 5, n_classes=2)
    b = EmbeddingBatch(F, labels, toy)
    bank = init_bank(toy, 3)
    lam = penalty_weights(3)
    anc = toy.label_matrix(labels)
    assert np.array_equal(hcl_gradient(b, toy, LossConfig()),
                          contrastive_terms(F, anc, lam, 0.1, HCL).grad)
    assert np.array_equal(bhcl_gradient(b, bank, toy, LossConfig()),
                          contrastive_terms(F, anc, lam, 0.1, BHCL, bank.M, toy.level_nodes).grad)


def test_single_row_gradient(ship_star):
    bank = init_bank(ship_star, 3, seed=9)
    F = bank.row(2)[None, :].copy()
    anc = ship_star.label_matrix([(2,)])

    def fn(X):
        return contrastive_terms(X, anc, np.ones(1), 0.1, BHCL, bank.M, ship_star.level_nodes,
                                 with_grad=False).loss

    g = contrastive_terms(F, anc, np.ones(1), 0.1, BHCL, bank.M, ship_star.level_nodes).grad
    np.testing.assert_allclose(g, finite_difference_gradient(fn, F), atol=1e-6)


# -- projection ---------------------------------------------------------------

def test_project_examples():
    assert np.array_equal(project_and_normalize(np.array([[0.6, 0.8]]), np.eye(2)), [[0.6, 0.8]])
    np.testing.assert_allclose(project_and_normalize(np.array([[3.0, 4.0]]), np.eye(2)), [[0.6, 0.8]])
    with pytest.raises(ZeroVector):
        project_and_normalize(np.array([[0.0, 0.0]]), np.eye(2))


def test_normalize_backward_chain_rule():
    rng = np.random.default_rng(14)
    X, W = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    C = rng.standard_normal((4, 3))
    f, norms = project_and_normalize(X, W, return_norms=True)
    g = X.T @ normalize_backward(f, norms, C)
    fd = finite_difference_gradient(lambda V: float(np.sum(C * project_and_normalize(X, V))), W)
    np.testing.assert_allclose(g, fd, atol=1e-8)


def test_batch_rejects_non_unit_rows(toy):
    with pytest.raises(ValueError):
        EmbeddingBatch(np.array([[1.0, 1.0]]), [toy.path(7)], toy)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_losses_finite(toy, seed, tau):
    rng = np.random.default_rng(seed)
    F = unit_rows(rng, 6, 3)
    labels = random_labels(rng, toy, 6, n_classes=3)
    anc = toy.label_matrix(labels)
    bank = init_bank(toy, 3, seed=seed)
    for mode in (HCL, BHCL, BHCL_NO_PROTO):
        t = contrastive_terms(F, anc, penalty_weights(3), tau, mode, bank.M, toy.level_nodes)
        assert np.isfinite(t.loss) and np.all(np.isfinite(t.grad))
        if mode == HCL:
            assert t.loss >= -1e-12
