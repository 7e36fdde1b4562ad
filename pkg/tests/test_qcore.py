import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from mixgate import acceptance, gatesim, qcore
from conftest import random_cptp, random_unitary

seeds = st.integers(0, 2**31 - 1)
ZZ = np.kron(qcore._Z2, qcore._Z2)


def direct_ptm(u):
    """R_ij = Tr(P_i U P_j U†)/4 evaluated entry by entry."""
    return np.array([[np.trace(pi @ u @ pj @ u.conj().T).real / 4 for pj in qcore.PAULIS] for pi in qcore.PAULIS])


def zz_rotation(theta):
    return math.cos(theta / 2) * np.eye(4) - 1j * math.sin(theta / 2) * ZZ


# --- representations -------------------------------------------------------

def test_identity_unitary_gives_identity_ptm():
    assert np.array_equal(qcore.ptm_from_unitary(np.eye(4)), np.eye(16))


def test_zz_quarter_turn_matches_direct_evaluation():
    u = zz_rotation(math.pi / 2)
    r = qcore.ptm_from_unitary(u)
    assert np.allclose(r, direct_ptm(u), atol=1e-14)
    assert set(np.unique(np.round(np.abs(r), 12))) == {0.0, 1.0}


def test_x_on_first_qubit_is_sign_pattern():
    u = np.kron(qcore._X2, np.eye(2))
    r = qcore.ptm_from_unitary(u)
    # conjugation by X flips Y and Z on the first qubit
    expected = np.diag([1.0 if a in "IX" else -1.0 for a, _ in qcore.PAULI_LABELS])
    assert np.allclose(r, expected, atol=1e-14)


def test_non_unitary_rejected():
    with pytest.raises(qcore.ChannelError):
        qcore.ptm_from_unitary(np.diag([1, 1, 1, 0.5]))


@given(seeds, seeds)
def test_unitary_ptm_is_orthogonal_homomorphism(a, b):
    u, v = random_unitary(a), random_unitary(b)
    ru, rv = qcore.ptm_from_unitary(u), qcore.ptm_from_unitary(v)
    assert np.allclose(ru @ ru.T, np.eye(16), atol=1e-10)
    assert qcore.is_tp(ru)
    assert np.allclose(qcore.ptm_from_unitary(u @ v), ru @ rv, atol=1e-10)


def test_identity_ptm_choi_is_maximally_entangled():
    omega = np.eye(4).reshape(16) / 2
    assert np.allclose(qcore.ptm_to_choi(np.eye(16)), np.outer(omega, omega), atol=1e-14)


def test_fully_depolarizing_choi_is_maximally_mixed():
    assert np.allclose(qcore.ptm_to_choi(qcore.depolarizing_ptm(1.0)), np.eye(16) / 16, atol=1e-14)


@given(seeds)
def test_choi_round_trip_and_predicates(seed):
    r = random_cptp(seed)
    choi = qcore.ptm_to_choi(r)
    assert np.linalg.norm(qcore.choi_to_ptm(choi) - r) < 1e-12
    assert abs(np.trace(choi) - 1) < 1e-12
    assert qcore.is_cptp(r)
    assert qcore.choi_is_tp(choi)
    assert np.allclose(qcore.partial_trace_output(choi), np.eye(4) / 4, atol=1e-12)


def test_cp_and_tp_predicates_agree_across_representations():
    rng = np.random.default_rng(3)
    for k in range(1000):
        r = random_cptp(k, rank=1 + k % 3)
        if k % 2:
            r = r + rng.normal(scale=0.05, size=(16, 16)) * (rng.random((16, 16)) < 0.1)
        choi = qcore.ptm_to_choi(r)
        choi_psd = np.linalg.eigvalsh(0.5 * (choi + choi.conj().T))[0] >= -1e-10
        assert qcore.is_cp(r) == choi_psd
        assert qcore.is_tp(r) == qcore.choi_is_tp(choi)


# --- algebra ---------------------------------------------------------------

def test_compose_with_inverse_unitary_is_identity():
    u = random_unitary(9)
    assert np.allclose(qcore.compose(qcore.ptm_from_unitary(u), qcore.ptm_from_unitary(u.conj().T)),
                       np.eye(16), atol=1e-12)


def test_full_depolarizing_outputs_maximally_mixed():
    rho = qcore.density_matrix(random_unitary(4)[:, 0])
    assert np.allclose(qcore.apply(qcore.depolarizing_ptm(1.0), rho), np.eye(4) / 4, atol=1e-14)


@given(seeds, seeds, seeds)
def test_compose_associative(a, b, c):
    x, y, z = random_cptp(a), random_cptp(b), random_cptp(c)
    assert np.allclose(qcore.compose(qcore.compose(x, y), z), qcore.compose(x, qcore.compose(y, z)), atol=1e-12)


@given(seeds)
def test_apply_preserves_trace(seed):
    rho = qcore.density_matrix(random_unitary(seed + 1)[:, 0])
    out = qcore.apply(random_cptp(seed), rho)
    assert abs(np.trace(out) - 1) < 1e-12
    assert qcore.is_density_matrix(out)


# --- fidelities ------------------------------------------------------------

def test_fidelity_of_ideal_is_one():
    g = gatesim.ideal_gate()
    assert qcore.fidelities(g, g) == pytest.approx((1.0, 1.0), abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 0.003, 0.1, 1.0])
def test_depolarizing_process_fidelity(p):
    f_pro, f_avg = qcore.fidelities(qcore.depolarizing_ptm(p), np.eye(16))
    assert f_pro == pytest.approx(1 - p * 15 / 16, abs=1e-14)
    assert f_avg == pytest.approx((4 * f_pro + 1) / 5, abs=1e-14)


def test_average_fidelity_matches_haar_monte_carlo():
    g = random_cptp(17, rank=2)
    g0 = np.eye(16)
    rng = np.random.default_rng(1)
    psi = rng.normal(size=(40000, 4)) + 1j * rng.normal(size=(40000, 4))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    vals = []
    for v in psi:
        rho = np.outer(v, v.conj())
        vals.append(np.vdot(v, qcore.apply(g, rho) @ v).real)
    assert np.mean(vals) == pytest.approx(qcore.fidelities(g, g0)[1], abs=1e-3)


def test_non_unitary_reference_rejected():
    with pytest.raises(qcore.ChannelError):
        qcore.fidelities(np.eye(16), qcore.depolarizing_ptm(0.1))


# --- error generators ------------------------------------------------------

def test_generator_of_ideal_is_zero():
    g = gatesim.ideal_gate()
    assert np.allclose(qcore.error_generator(g, g), 0, atol=1e-12)


def test_generator_recovers_constructed_zz_term():
    gen = 0.01 * qcore.hamiltonian_generators()[qcore.PAULI_LABELS.index("ZZ") - 1]
    g0 = gatesim.ideal_gate()
    recovered = qcore.error_generator(expm(gen) @ g0, g0)
    assert np.allclose(recovered, gen, atol=1e-8)


def test_generator_of_depolarizing_is_log_diagonal():
    gen = qcore.error_generator(qcore.depolarizing_ptm(0.01), np.eye(16))
    assert np.allclose(gen, np.diag([0.0] + [math.log(0.99)] * 15), atol=1e-12)


@given(seeds, st.floats(0.05, 1.0))
def test_generator_round_trip(seed, norm):
    rng = np.random.default_rng(seed)
    gen = rng.normal(size=(16, 16))
    gen[0] = 0
    gen *= norm / np.linalg.norm(gen)
    g0 = gatesim.ideal_gate()
    g = expm(gen) @ g0
    assert np.linalg.norm(expm(qcore.error_generator(g, g0)) @ g0 - g) < 1e-9


def test_branch_cut_reported():
    # a pi rotation about ZZ has eigenvalues -1 relative to the identity
    g = qcore.ptm_from_unitary(zz_rotation(math.pi / 2) @ zz_rotation(math.pi / 2) @ np.kron(qcore._X2, np.eye(2)))
    with pytest.raises(qcore.LogarithmBranchError):
        qcore.error_generator(g, np.eye(16))


def test_coherent_split_of_pure_rotation_and_pure_depolarizing():
    g0 = gatesim.ideal_gate()
    assert qcore.coherent_fraction(qcore.error_generator(acceptance.coherent_overrotation(0.05), g0)) > 0.999
    assert qcore.coherent_fraction(qcore.error_generator(qcore.depolarizing_ptm(0.01) @ g0, g0)) < 1e-12


# --- diamond distance ------------------------------------------------------

def test_diamond_zero_for_identical_channels():
    g = gatesim.ideal_gate()
    assert qcore.diamond_distance(g, g) < 1e-6


@pytest.mark.parametrize("p", [0.01, 0.05])
def test_diamond_depolarizing_against_brute_force(p):
    oracle = acceptance.brute_force_diamond(qcore.depolarizing_ptm(p), np.eye(16), np.random.default_rng(1), 4)
    assert qcore.diamond_distance(qcore.depolarizing_ptm(p), np.eye(16)) == pytest.approx(oracle, abs=1e-3)
    # frozen closed form: (d^2 - 1)/d^2 * p
    assert oracle == pytest.approx(p * 15 / 16, abs=1e-3)


@pytest.mark.parametrize("theta", [0.1, 0.6])
def test_diamond_unitary_rotation_against_brute_force(theta):
    g = qcore.ptm_from_unitary(zz_rotation(theta))
    oracle = acceptance.brute_force_diamond(g, np.eye(16), np.random.default_rng(2), 4)
    assert qcore.diamond_distance(g, np.eye(16)) == pytest.approx(oracle, abs=1e-3)
    # eigenphase spread theta -> sin(theta/2)
    assert oracle == pytest.approx(math.sin(theta / 2), abs=1e-3)


def test_diamond_bounds_bracket_and_agree():
    res = qcore.diamond_bounds(random_cptp(5), random_cptp(6))
    assert res.lower <= res.value <= res.upper
    assert res.upper - res.lower < 1e-4


def test_diamond_matches_sdp_oracle():
    cp = pytest.importorskip("cvxpy")
    g, g0 = random_cptp(11), random_cptp(12)
    j = qcore.ptm_to_choi(g - g0) * 4  # unnormalised Choi on input ⊗ output
    # Watrous' SDP for the diamond norm of a Hermiticity-preserving map
    w = cp.Variable((16, 16), hermitian=True)
    rho = cp.Variable((4, 4), hermitian=True)
    prob = cp.Problem(cp.Maximize(cp.real(cp.trace(j @ w))),
                      [w >> 0, cp.kron(rho, np.eye(4)) - w >> 0, cp.trace(rho) == 1])
    prob.solve(solver="CLARABEL")
    assert qcore.diamond_distance(g, g0) == pytest.approx(prob.value, abs=1e-4)


@given(seeds)
def test_diamond_dominates_choi_trace_distance(seed):
    g, g0 = random_cptp(seed), random_cptp(seed + 1)
    choi_dist = 0.5 * np.abs(np.linalg.eigvalsh(qcore.ptm_to_choi(g - g0))).sum()
    assert qcore.diamond_distance(g, g0) >= choi_dist - 1e-5


# --- CPTP projection -------------------------------------------------------

def test_projection_leaves_cptp_unchanged():
    r = random_cptp(21)
    assert np.allclose(qcore.project_cptp(r), r, atol=1e-10)
    assert np.allclose(qcore.project_cptp(qcore.depolarizing_ptm(1.0)), qcore.depolarizing_ptm(1.0), atol=1e-12)


def test_projection_repairs_negative_eigenvalue():
    choi = qcore.ptm_to_choi(random_cptp(22, rank=2))
    v = np.linalg.eigh(choi)[1][:, 0]  # null vector of the rank-2 Choi
    dent = np.outer(v, v.conj())
    # subtract along v and add back a term with equal partial trace, so TP survives
    bad = choi - 0.01 * dent + 0.01 * np.kron(qcore.partial_trace_output(dent), np.eye(4) / 4)
    assert np.linalg.eigvalsh(bad)[0] < -0.005
    assert qcore.choi_is_tp(bad)
    out = qcore.project_cptp(qcore.choi_to_ptm(bad))
    assert qcore.is_cptp(out, atol=1e-9)
    assert np.abs(np.linalg.eigvalsh(qcore.ptm_to_choi(out) - bad)).sum() <= 0.02
    assert np.allclose(qcore.project_cptp(out), out, atol=1e-9)
