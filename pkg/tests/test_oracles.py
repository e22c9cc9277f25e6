import ast
import math
from pathlib import Path

import numpy as np
import pytest

import omh.oracles as oracles
from omh.oracles import (OracleReport, append_reports, assignment_bruteforce,
                         assignment_bruteforce_all, entropic_objective, finite_difference_grad,
                         ot_bruteforce_2x2, ot_polytope_search, relative_error)


def test_oracles_do_not_import_production_code():
    tree = ast.parse(Path(oracles.__file__).read_text())
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            assert node.level == 0 and not (node.module or "").startswith("omh")
        if isinstance(node, ast.Import):
            assert all(not a.name.startswith("omh") for a in node.names)


def test_2x2_examples():
    plan, _ = ot_bruteforce_2x2([[0, 1], [1, 0]], 0.02)
    assert plan[0][0] == pytest.approx(0.5, abs=1e-7)
    plan, obj = ot_bruteforce_2x2([[0, 0], [0, 0]], 0.3)
    assert plan[0][0] == pytest.approx(0.25, abs=1e-7)
    assert obj == pytest.approx(-0.3 * math.log(4), abs=1e-12)
    plan, _ = ot_bruteforce_2x2([[0, 1], [1, 0]], 1e4)
    assert plan[0][0] == pytest.approx(0.25, abs=1e-4)


def test_2x2_closed_form():
    # stationarity: a / (0.5 - a) = exp(-(c00 + c11 - c01 - c10) / (2 lam))
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = rng.random((2, 2))
        lam = rng.uniform(0.05, 1)
        r = math.exp(-(c[0, 0] + c[1, 1] - c[0, 1] - c[1, 0]) / (2 * lam))
        plan, _ = ot_bruteforce_2x2(c, lam)
        assert plan[0][0] == pytest.approx(0.5 * r / (1 + r), abs=1e-7)


def test_polytope_search_agrees_with_2x2():
    rng = np.random.default_rng(1)
    for _ in range(5):
        c = rng.random((2, 2))
        _, a = ot_bruteforce_2x2(c, 0.1)
        _, b = ot_polytope_search(c, 0.1)
        assert b == pytest.approx(a, abs=1e-9)


def test_polytope_search_keeps_marginals():
    p, obj = ot_polytope_search(np.random.default_rng(2).random((3, 4)), 0.2)
    np.testing.assert_allclose(p.sum(axis=1), 1 / 3, atol=1e-12)
    np.testing.assert_allclose(p.sum(axis=0), 1 / 4, atol=1e-12)
    assert obj == pytest.approx(entropic_objective(p.tolist(), np.random.default_rng(2).random((3, 4)).tolist(), 0.2))


def test_assignment_ties_are_lexicographic():
    a, s = assignment_bruteforce([[1, 1], [1, 1]])
    assert a == {0: 0, 1: 1} and s == 2
    a, s = assignment_bruteforce([[0, 5, 5]])
    assert a == {0: 1} and s == 5
    winners, s = assignment_bruteforce_all([[1, 1], [1, 1]])
    assert s == 2 and {0: 1, 1: 0} in winners and len(winners) == 2


def test_fd_exact_on_quadratic():
    a = np.array([[1.0, -2.0], [0.5, 3.0]])
    grads, ex = finite_difference_grad(lambda p: float(np.sum(p["x"] ** 2)), {"x": a})
    np.testing.assert_allclose(grads["x"], 2 * a, atol=1e-8)
    assert not ex["x"].any()


def test_fd_flags_kinks():
    x = np.array([0.0, 2e-6, 1.0])
    _, ex = finite_difference_grad(lambda p: float(np.abs(p["x"]).sum()), {"x": x})
    assert ex["x"].tolist() == [True, True, False]
    _, ex = finite_difference_grad(lambda p: float(np.abs(p["x"]).sum()), {"x": np.array([5e-4])},
                                   kink_fn=lambda p: {"x": np.abs(p["x"])})
    assert ex["x"].tolist() == [True]


def test_relative_error():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.2 / 2.2)
    assert relative_error([1.0, 5.0], [1.0, 0.0], mask=np.array([True, False])) == 0.0
    assert relative_error([0.0], [0.0]) == 0.0


def test_report_rows(tmp_path):
    r = OracleReport("c1", 1.5, 1.0)
    assert r.abs_dev == 0.5 and r.rel_dev == 0.5
    append_reports(tmp_path / "a.csv", [r])
    append_reports(tmp_path / "a.csv", [OracleReport("c2", 2.0, 2.0)])
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0].startswith("case_id") and len(lines) == 3
