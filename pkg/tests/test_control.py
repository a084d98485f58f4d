"""control: filters, balanced truncation, H∞ synthesis, settling check,
loop closure, controller documents and the sequential procedure."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import random_stable
from dpibr.analysis import LinearModel, frequency_response, hinf_norm_grid
from dpibr.control import (BalancedTruncation, Controller, FilterSpec, HinfDamper,
                           SynthesisProblem, bandpass_weight, close_loop, hankel_singular_values,
                           hinf_synthesize, identity_filter, paper_weight, schur_balanced_truncation,
                           sequential_design, settling_time_check, split_stable, truncation_bound,
                           washout_filter)
from dpibr.errors import (AlgebraicLoop, AssumptionViolated, ConfigError, GammaInfeasible,
                          MissingChannel, UnstableClosedLoop, UnstablePlant)


def hinf_norm_hamiltonian(lm, tol=1e-6):
    """Independent oracle: ‖G‖∞ for strictly proper G by bisection on the
    imaginary-axis eigenvalues of the Hamiltonian (Boyd-Balakrishnan test)."""
    A, B, C = lm.A, lm.B, lm.C

    def below(g):
        H = np.block([[A, B @ B.T / g ** 2], [-C.T @ C, -A.T]])
        ev = np.linalg.eigvals(H)
        return np.min(np.abs(ev.real)) > 1e-9 * max(1.0, np.abs(ev).max())

    lo, hi = 0.0, 1.0
    while not below(hi):
        hi *= 2
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if below(mid) else (mid, hi)
    return hi


# -- filters --------------------------------------------------------------------

def test_paper_weight_coefficients_and_peak():
    W = paper_weight()
    assert W.num == (25.13, 0.0) and W.den == (1.0, 25.13, 1593.0)
    w0 = np.sqrt(1593.0)
    assert abs(W(1j * w0)) == pytest.approx(1.0, rel=1e-12)  # unit peak at ≈ 6.35 Hz
    assert W.is_stable()


def test_washout_filter():
    F = washout_filter(2.0)
    assert F(0) == 0 and abs(F(1e6j)) == pytest.approx(1.0, rel=1e-5)
    with pytest.raises(ValueError):
        washout_filter(0.0)


def test_identity_filter_state_space():
    I = identity_filter()
    assert I.is_identity and I.to_ss().n_states == 0


def test_filter_state_space_matches_transfer_function():
    F = bandpass_weight(5.0, 2.0)
    ss = F.to_ss()
    w = np.array([1.0, 31.4, 100.0])
    assert np.allclose(frequency_response(ss, w)[:, 0, 0], F(1j * w), rtol=1e-12)


def test_improper_filter_rejected():
    with pytest.raises(ValueError):
        FilterSpec((1.0, 0.0, 0.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        FilterSpec((1.0,), (0.0,))


# -- balanced truncation (criterion 5 property) ---------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(4, 12), st.integers(1, 2), st.integers(1, 2))
def test_truncation_error_within_twice_discarded_hsv(seed, n, m, p):
    rng = np.random.default_rng(seed)
    lm = random_stable(rng, n, m, p)
    r = int(rng.integers(1, n))
    try:
        red, hsv = schur_balanced_truncation(lm, r)
    except UnstablePlant:
        return  # tied HSVs at the cut: the order is not well defined
    err = LinearModel(np.block([[lm.A, np.zeros((n, r))], [np.zeros((r, n)), red.A]]),
                      np.vstack([lm.B, red.B]), np.hstack([lm.C, -red.C]), lm.D - red.D)
    w = np.logspace(-3, 3, 400)
    bound = truncation_bound(hsv, r)
    # HSVs are sqrt(eig(PQ)): each carries an absolute error ~ sqrt(eps)·σ1,
    # which matters only when the discarded tail is itself at that floor
    floor = 2 * (n - r) * np.sqrt(np.finfo(float).eps) * hsv[0]
    assert hinf_norm_grid(err, w) <= bound * (1 + 1e-8) + floor
    assert np.max(np.linalg.eigvals(red.A).real) < 0


def test_hsv_are_sorted_and_invariant_under_similarity(rng):
    lm = random_stable(rng, 6, 1, 1)
    T = rng.normal(size=(6, 6)) + 3 * np.eye(6)
    Ti = np.linalg.inv(T)
    lm2 = LinearModel(Ti @ lm.A @ T, Ti @ lm.B, lm.C @ T, lm.D)
    h1, h2 = hankel_singular_values(lm), hankel_singular_values(lm2)
    assert np.all(np.diff(h1) <= 0)
    assert np.allclose(h1, h2, rtol=1e-6)


def test_truncation_requires_stable_plant():
    lm = LinearModel(np.array([[0.5]]), np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))
    with pytest.raises(UnstablePlant):
        schur_balanced_truncation(lm, 0)


def test_truncation_order_validation(rng):
    with pytest.raises(ValueError):
        schur_balanced_truncation(random_stable(rng, 4), 5)


def test_split_stable_removes_marginal_part_exactly(rng):
    st_ = random_stable(rng, 5, 1, 1)
    A = np.zeros((7, 7))
    A[:5, :5] = st_.A
    A[5:, 5:] = [[0.0, 2.0], [-2.0, 0.0]]     # undamped ±j2, uncontrollable from B
    lm = LinearModel(A, np.vstack([st_.B, np.zeros((2, 1))]), np.hstack([st_.C, np.ones((1, 2))]),
                     np.zeros((1, 1)))
    sp = split_stable(lm)
    assert sp.stable.n_states == 5 and sp.marginal_gain == 0
    assert np.allclose(np.sort(np.abs(sp.marginal_eigenvalues.imag)), [2, 2])
    w = np.linspace(0.1, 10, 37)
    w = w[np.abs(w - 2) > 0.05]
    assert np.allclose(frequency_response(sp.stable, w), frequency_response(st_, w), atol=1e-10)


def test_balanced_truncation_estimator(lm20):
    est = BalancedTruncation(order=15)
    assert clone(est).get_params() == est.get_params()
    local = lm20.select(["u_q:IBR2"], ["vmag:IBR2"])
    est.fit(local)
    assert est.reduced_.n_states == 15 and est.marginal_.size == 9
    assert est.bound_ == pytest.approx(2 * est.hsv_[15:].sum())


# -- H∞ synthesis ---------------------------------------------------------------

def toy_problem():
    """G = 1/(s+1); z = [G(u + w1); u]; y = G(u + w1) + w2."""
    A = np.array([[-1.0]])
    B = np.array([[1.0, 0.0, 1.0]])
    C = np.array([[1.0], [0.0], [1.0]])
    D = np.array([[0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]])
    return SynthesisProblem(LinearModel(A, B, C, D), n_w=2, n_z=2)


def test_hinf_toy_norm_verified_by_hamiltonian_oracle():
    res = hinf_synthesize(toy_problem())
    true_norm = hinf_norm_hamiltonian(res.closed_loop)
    assert true_norm <= res.gamma * (1 + 1e-6)
    assert res.peak_on_grid <= true_norm * (1 + 1e-6)
    assert res.gamma_lower < res.gamma <= 1.02 * res.gamma_lower / (1 - 1e-3)
    assert np.max(np.linalg.eigvals(res.closed_loop.A).real) < 0


def test_hinf_below_optimum_is_infeasible():
    res = hinf_synthesize(toy_problem())
    with pytest.raises(GammaInfeasible) as exc:
        hinf_synthesize(toy_problem(), gamma=0.5 * res.gamma_lower)
    assert exc.value.lower_bound == pytest.approx(res.gamma_lower, rel=1e-2)


def test_hinf_at_fixed_feasible_gamma():
    res = hinf_synthesize(toy_problem(), gamma=2.0)
    assert res.gamma == 2.0 and hinf_norm_hamiltonian(res.closed_loop) < 2.0


def test_hinf_rejects_nonzero_D11():
    prob = toy_problem()
    prob.plant.D[0, 0] = 0.5
    with pytest.raises(AssumptionViolated):
        hinf_synthesize(prob)


def test_hinf_rejects_undetectable_unstable_mode():
    A = np.diag([-1.0, 1.0])                  # unstable mode 2 unseen by y
    B = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    C = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    D = np.array([[0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]])
    with pytest.raises(AssumptionViolated, match="detectable"):
        hinf_synthesize(SynthesisProblem(LinearModel(A, B, C, D), 2, 2))


# -- settling time -------------------------------------------------------------

def test_settling_formula_example():
    A = np.array([[-0.1, 40.0], [-40.0, -0.1]])
    rep = settling_time_check(A, 45.0)
    assert rep.worst_settling == pytest.approx(40.0)
    assert rep.passed and "PASS" in str(rep)
    assert not settling_time_check(A, 15.0).passed


def test_settling_skips_marginal_and_rejects_unstable():
    A = np.diag([0.0, -1.0])
    assert settling_time_check(A, 1.0).n_checked == 0
    with pytest.raises(UnstableClosedLoop):
        settling_time_check(np.array([[0.1]]), 1.0)


def test_settling_band_filter():
    A = np.block([[np.array([[-0.1, 40.0], [-40.0, -0.1]]), np.zeros((2, 2))],
                  [np.zeros((2, 2)), np.array([[-1.0, 2.0], [-2.0, -1.0]])]])
    rep = settling_time_check(A, 10.0, band=(0.1, 1.0))
    assert rep.passed and rep.n_checked == 1


# -- loop closure and controller documents ------------------------------------

def plant_for_loop():
    A = np.array([[-1.0, 0.0], [0.0, -2.0]])
    B = np.array([[1.0, 0.0], [0.0, 1.0]])
    C = np.array([[1.0, 1.0]])
    return LinearModel(A, B, C, np.zeros((1, 2)), ["a", "b"], ["u_q:IBR1", "p_dc:DC7"],
                       ["vmag:IBR1"])


def test_close_loop_with_zero_controller_preserves_plant():
    P = plant_for_loop()
    K = Controller(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[0.0]], ibr="IBR1")
    cl = close_loop(P, K, washout=False)
    assert np.array_equal(cl.A, P.A) and np.array_equal(cl.C, P.C)


def test_close_loop_static_gain_matches_formula():
    P = plant_for_loop()
    K = Controller(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[-3.0]], ibr="IBR1")
    cl = close_loop(P, K, washout=False)
    assert np.allclose(cl.A, P.A + P.B[:, [0]] * -3.0 @ P.C)


def test_close_loop_algebraic_loop_and_channels():
    P = plant_for_loop()
    P.D[0, 0] = 1.0
    K = Controller(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[1.0]], ibr="IBR1")
    with pytest.raises(AlgebraicLoop):
        close_loop(P, K, washout=False)
    with pytest.raises(MissingChannel):
        close_loop(P, Controller(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[1.0]],
                                 ibr="IBR9"))


def test_close_loop_adds_washout_and_controller_states():
    P = plant_for_loop()
    K = Controller([[-5.0]], [[1.0]], [[2.0]], [[0.0]], ibr="IBR1")
    cl = close_loop(P, K)
    assert cl.state_names[-2:] == ["washout[vmag:IBR1]", "K[IBR1][0]"]
    assert cl.input_names == P.input_names


def test_controller_round_trip(tmp_path, rng):
    K = Controller(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)), rng.normal(size=(1, 3)),
                   [[0.0]], ibr="IBR2", gamma=0.25, meta={"reduced_order": 15})
    path = tmp_path / "K.yaml"
    K.save(path)
    K2 = Controller.load(path)
    for a in "ABCD":
        assert np.array_equal(getattr(K, a), getattr(K2, a))
    assert K2.ibr == "IBR2" and K2.gamma == 0.25 and K2.meta == {"reduced_order": 15}


def test_controller_document_validation(tmp_path):
    with pytest.raises(ConfigError):
        Controller.from_dict({"kind": "something-else"})
    with pytest.raises(ConfigError):
        Controller.from_dict({"kind": "dpibr-controller", "A": [[1.0]]})


# -- sequential design --------------------------------------------------------

def test_schedule_validation(lm20):
    with pytest.raises(ValueError):
        sequential_design(lm20, ["IBR2", "IBR1"], [45.0])
    with pytest.raises(ValueError):
        sequential_design(lm20, ["IBR2", "IBR1"], [15.0, 45.0])


def test_hinf_damper_estimator(lm20, sso20):
    est = HinfDamper(ibrs=("IBR2",), ts_schedule=(45.0,))
    assert clone(est).get_params() == est.get_params()
    est.fit(lm20)
    rep = est.reports_[0]
    assert rep.reduced_order == 15 and rep.settling.passed
    assert rep.tzw_peak <= rep.gamma
    assert est.predict().damping > sso20.damping
