import itertools
import math

import numpy as np
import pytest

from hiercl.errors import InfeasibleShape
from hiercl.geometry import RotatedBox, l1_cost, rotated_iou
from hiercl.matching import CostWeights, Prediction, cost_matrix, focal_cost, hungarian, match_cost
from hiercl.oracles import brute_force_assignment


def test_focal_examples():
    assert focal_cost(np.array([0.0, 1.0]), 1) == 0.0
    assert focal_cost(np.array([0.5, 0.5]), 0) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-15)
    assert focal_cost(np.array([0.5, 0.5]), 0) == pytest.approx(0.043322, abs=1e-6)
    big = focal_cost(np.array([1.0, 0.0]), 1)
    assert math.isfinite(big) and big == pytest.approx(0.25 * -math.log(1e-12))


def test_prediction_validates():
    with pytest.raises(ValueError):
        Prediction(np.array([0.7, 0.7]), RotatedBox(0, 0, 1, 1))


def test_weights_validate():
    with pytest.raises(ValueError):
        CostWeights(0, 0, 0)
    with pytest.raises(ValueError):
        CostWeights(cls=-1)


def test_match_cost_examples():
    box = RotatedBox(0.3, 0.4, 0.2, 0.1, 0.5)
    perfect = Prediction(np.array([0.0, 1.0, 0.0]), box)
    assert match_cost(perfect, (1, box)) == 0.0
    p = Prediction(np.array([0.2, 0.3, 0.5]), RotatedBox(0.35, 0.4, 0.2, 0.15, 0.1))
    assert match_cost(p, (2, box), CostWeights(1, 0, 0)) == focal_cost(p.class_probs, 2)


def test_match_cost_recomputed():
    rng = np.random.default_rng(0)
    w = CostWeights()
    for _ in range(20):
        probs = rng.dirichlet(np.ones(4))
        a = RotatedBox(*rng.uniform(0, 1, 2), *rng.uniform(0.05, 0.3, 2), rng.uniform(-1.5, 1.5))
        b = RotatedBox(*rng.uniform(0, 1, 2), *rng.uniform(0.05, 0.3, 2), rng.uniform(-1.5, 1.5))
        label = int(rng.integers(4))
        pt = probs[label]
        ref = (2 * 0.25 * (1 - pt) ** 2 * -math.log(pt) + 5 * (1 - rotated_iou(a, b)) + 2 * l1_cost(a, b))
        assert match_cost(Prediction(probs, a), (label, b), w) == pytest.approx(ref, abs=1e-12)


def test_cost_matrix_matches_pairwise():
    rng = np.random.default_rng(1)
    preds = [Prediction(rng.dirichlet(np.ones(3)),
                        RotatedBox(*rng.uniform(0, 1, 2), *rng.uniform(0.05, 0.3, 2), rng.uniform(-2, 2)))
             for _ in range(6)]
    gts = [(int(rng.integers(3)), RotatedBox(*rng.uniform(0, 1, 2), *rng.uniform(0.05, 0.3, 2), 0.3))
           for _ in range(4)]
    C = cost_matrix(preds, gts)
    assert C.shape == (4, 6)
    for g, gt in enumerate(gts):
        for q, p in enumerate(preds):
            assert C[g, q] == pytest.approx(match_cost(p, gt), abs=1e-12)
    assert cost_matrix(preds, []).shape == (0, 6)


def test_hungarian_diagonal():
    C = np.full((4, 4), 10.0) - 9 * np.eye(4)
    pairs, bg = hungarian(C)
    assert pairs == [(0, 0), (1, 1), (2, 2), (3, 3)] and bg == []


def test_hungarian_empty_and_infeasible():
    assert hungarian(np.zeros((0, 3))) == ([], [0, 1, 2])
    with pytest.raises(InfeasibleShape):
        hungarian(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf, 0.0]]))


@pytest.mark.parametrize("seed", range(60))
def test_hungarian_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = int(rng.integers(1, 7))
    n = int(rng.integers(g, 7))
    C = rng.uniform(0, 10, (g, n))
    pairs, bg = hungarian(C)
    total = math.fsum(C[k, q] for k, q in pairs)
    best, _ = brute_force_assignment(C)
    assert total == best
    assert sorted(bg + [q for _, q in pairs]) == list(range(n))


def _lex_smallest_optimum(C):
    g, n = C.shape
    best = min(sum(C[k, q] for k, q in enumerate(p)) for p in itertools.permutations(range(n), g))
    for p in itertools.permutations(range(n), g):  # lexicographic order
        if sum(C[k, q] for k, q in enumerate(p)) == best:
            return [(k, q) for k, q in enumerate(p)]


@pytest.mark.parametrize("seed", range(60))
def test_hungarian_tie_break(seed):
    rng = np.random.default_rng(1000 + seed)
    g = int(rng.integers(1, 6))
    n = int(rng.integers(g, 6))
    C = rng.integers(0, 3, (g, n)).astype(float)
    assert hungarian(C)[0] == _lex_smallest_optimum(C)


def test_all_zero_is_lexicographic():
    assert hungarian(np.zeros((2, 4)))[0] == [(0, 0), (1, 1)]


def test_constant_shift_invariance():
    rng = np.random.default_rng(5)
    for _ in range(30):
        C = rng.uniform(0, 1, (4, 6))
        assert hungarian(C)[0] == hungarian(C + 7.25)[0]
