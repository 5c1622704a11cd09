import json
from types import SimpleNamespace

import numpy as np
import pytest

import tgcmpc
from tgcmpc import model


def test_bundled_system_is_valid(problem):
    assert model.validate_system(problem.system) == []
    assert problem.system.n_x == 3
    assert problem.system.n_u == 2
    assert problem.system.structure.s == 2


def test_validate_reports_block_mismatch(problem):
    s = problem.system
    bad = SimpleNamespace(A=s.A, Bu=s.Bu, Bw=np.zeros((3, 3)), Cy=s.Cy, Dyu=s.Dyu,
                          structure=s.structure)
    msgs = model.validate_system(bad)
    assert len(msgs) == 1 and "Bw" in msgs[0]


def test_validate_reports_nonfinite(problem):
    s = problem.system
    Cy = s.Cy.copy()
    Cy[0, 0] = np.nan
    bad = SimpleNamespace(A=s.A, Bu=s.Bu, Bw=s.Bw, Cy=Cy, Dyu=s.Dyu,
                          structure=s.structure)
    msgs = model.validate_system(bad)
    assert len(msgs) == 1 and "Cy" in msgs[0] and "non-finite" in msgs[0]


def test_structure_rejects_empty_blocks():
    with pytest.raises(ValueError):
        model.UncertaintyStructure(())
    with pytest.raises(ValueError):
        model.UncertaintyStructure(((0, 1),))


def test_factorize_cost_identity():
    Cc, Dcu = model.factorize_cost(np.eye(3), np.eye(2), np.zeros((3, 2)))
    F = np.hstack([Cc, Dcu])
    assert np.allclose(F.T @ F, np.eye(5), atol=1e-12)


def test_factorize_cost_singular_state_weight():
    Cc, Dcu = model.factorize_cost(np.zeros((2, 2)), np.eye(1), np.zeros((2, 1)))
    assert np.allclose(Cc, 0.0)
    assert np.allclose(Dcu.T @ Dcu, np.eye(1))


def test_factorize_cost_random_reconstruction():
    rng = np.random.default_rng(11)
    for _ in range(20):
        G = rng.standard_normal((3, 3))
        S = G @ G.T
        Q, N, R = S[:2, :2], S[:2, 2:], S[2:, 2:]
        Cc, Dcu = model.factorize_cost(Q, R, N)
        F = np.hstack([Cc, Dcu])
        assert np.linalg.norm(F.T @ F - S) <= 1e-8 * (1 + np.linalg.norm(S))


def test_factorize_cost_rejects_indefinite():
    with pytest.raises(ValueError, match="eigenvalue"):
        model.factorize_cost(np.diag([1.0, -1.0]), np.eye(1), np.zeros((2, 1)))


def test_evaluate_uncertainty_zero_delta(problem):
    s = problem.system
    x = np.array([0.3, -0.2, 0.5])
    u = np.array([0.1, -0.4])
    w, x_next = model.evaluate_uncertainty(s, np.zeros((2, 2)), x, u)
    assert np.allclose(w, 0.0)
    assert np.allclose(x_next, s.A @ x + s.Bu @ u)


def test_evaluate_uncertainty_hand_case(problem):
    # delta = I, x = e1, u = 0: y = (Cy e1), w = y, x+ = A e1 + Bw y
    s = problem.system
    w, x_next = model.evaluate_uncertainty(s, np.eye(2), np.array([1.0, 0, 0]),
                                           np.zeros(2))
    assert np.allclose(w, [0.41, 0.0], atol=1e-15)
    expected = np.array([1.1 + 0.17 * 0.41, 0.12 * 0.41, -1.0 - 0.17 * 0.41])
    assert np.allclose(x_next, expected, atol=1e-15)


def test_uncertainty_forms_agree(problem):
    from tgcmpc.acceptance import check_uncertainty_equivalence
    ok, detail = check_uncertainty_equivalence(problem.system)
    assert ok, detail


def test_evaluate_uncertainty_rejects_large_block(problem):
    with pytest.raises(ValueError, match="spectral norm"):
        model.evaluate_uncertainty(problem.system, np.diag([1.1, 0.0]),
                                   np.zeros(3), np.zeros(2))


def test_evaluate_uncertainty_rejects_off_block(problem):
    delta = np.array([[0.0, 0.5], [0.0, 0.0]])
    with pytest.raises(ValueError, match="outside"):
        model.evaluate_uncertainty(problem.system, delta, np.zeros(3), np.zeros(2))


def test_evaluate_uncertainty_rejects_bad_shape(problem):
    with pytest.raises(ValueError, match="shape"):
        model.evaluate_uncertainty(problem.system, np.zeros((3, 2)),
                                   np.zeros(3), np.zeros(2))


def test_constraints_require_interior_origin():
    with pytest.raises(ValueError, match="origin"):
        model.PolytopeConstraints(Hx=np.eye(2), Hu=np.zeros((2, 1)),
                                  g=np.array([1.0, 0.0]))


def test_loader_round_trip(tmp_path, problem):
    doc = json.loads(tgcmpc.bundled_problem_path().read_text())
    path = tmp_path / "prob.json"
    path.write_text(json.dumps(doc))
    loaded = model.load_problem(path)
    assert np.array_equal(loaded.system.A, problem.system.A)
    assert loaded.horizon == problem.horizon
    assert np.array_equal(loaded.x0, problem.x0)


def test_loader_rejects_unknown_key(tmp_path):
    doc = json.loads(tgcmpc.bundled_problem_path().read_text())
    doc["horizzon"] = 7
    path = tmp_path / "prob.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError) as err:
        model.load_problem(path)
    assert "horizzon" in str(err.value) and "horizon" in str(err.value)


def test_loader_rejects_missing_key(tmp_path):
    doc = json.loads(tgcmpc.bundled_problem_path().read_text())
    del doc["cost"]
    path = tmp_path / "prob.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="cost"):
        model.load_problem(path)


def test_loader_rejects_dimension_mismatch(tmp_path):
    doc = json.loads(tgcmpc.bundled_problem_path().read_text())
    doc["x0"] = [0.1, 0.2]
    path = tmp_path / "prob.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="x0"):
        model.load_problem(path)
