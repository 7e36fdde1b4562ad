import math

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import unitary_group

from mixgate import backend as bk, circuits, gatesim, gst, qcore
from mixgate.circuits import Op

SINGLE_GERMS = tuple((op,) for op in gst.GATE_OPS)


@pytest.fixture(scope="module")
def small_plan():
    return gst.build_design(germs=SINGLE_GERMS, lengths=(1,))


@pytest.fixture(scope="module")
def pair_plan():
    return gst.build_design(germs=gst.default_germs()[:15], lengths=(1, 2, 4))


def noisy_truth(p=0.05, spam=0.03):
    t = gst.target_gateset()
    for k in t.gates:
        t.gates[k] = qcore.depolarizing_ptm(p) @ t.gates[k]
    t.rho = qcore.depolarizing_ptm(spam) @ t.rho
    t.effects = bk.confusion_matrix(spam, spam) @ t.effects
    return t


def exact_counts(truth, plan, shots=1e6):
    return np.array([gst.predict(truth, plan.design.ops(c)) for c in plan.circuits]) * shots


def sampled_counts(truth, plan, shots, seed):
    rng = np.random.default_rng(seed)
    probs = exact_counts(truth, plan, 1.0)
    return np.array([rng.multinomial(shots, p / p.sum()) for p in probs], dtype=float)


# --- design ----------------------------------------------------------------

def test_single_op_germ_at_unit_length(small_plan):
    assert {c.reps for c in small_plan.circuits} == {1}
    d = small_plan.design
    assert d.reps(0, 1) == 1


def test_repetitions_floor_length_over_germ_length():
    d = gst.build_design(lengths=(1, 8)).design
    k = gst.DEFAULT_GERM_TEXT.index("Gxp:1 Gxp:2 Gzz")
    assert d.reps(k, 8) == 2 and d.reps(k, 1) == 1
    k5 = gst.DEFAULT_GERM_TEXT.index("Gxp:1 Gzz Gzp:2 Gxp:2 Gzz")
    assert d.reps(k5, 4) == 1


def test_design_deduplicated_and_deterministic():
    a = gst.build_design(lengths=(1, 2, 4))
    b = gst.build_design(lengths=(1, 2, 4))
    assert a.texts == b.texts
    assert len(set(a.texts)) == len(a.texts)
    full = len(a.design.germs) * 16 * 10 * 3
    assert len(a.texts) < full


def test_default_design_size():
    plan = gst.build_design()
    # at least enough outcomes for the model, and of the order of a few hundred per length
    assert 3 * len(plan.texts) > gst.parameter_counts()["gauge_reduced"]
    assert len(plan.texts) == 17801
    assert [len(plan.upto(i)) for i in range(7)][-1] == len(plan.texts)


def test_default_fiducials_complete():
    prep = gst.prep_frame(gst.default_prep_fiducials())
    meas = gst.meas_frame(gst.default_meas_fiducials())
    assert np.linalg.matrix_rank(prep @ prep.T) == 16
    assert np.linalg.matrix_rank(meas.T @ meas) == 16


def test_incomplete_fiducials_rejected():
    with pytest.raises(gst.GstError, match="Gram spectrum"):
        gst.build_design(prep=gst.default_prep_fiducials()[:8])


def test_unknown_gate_in_germ_rejected():
    with pytest.raises(gst.GstError):
        gst.build_design(germs=((Op("Gyp", 1),),))


# --- germ completeness ----------------------------------------------------

def test_complete_germs_are_complete():
    score = gst.germ_completeness(gst.complete_germs(), gst.perturbed_target())
    assert score.required == 5 * 240 - 239
    assert score.complete


def test_default_germs_score_reported():
    score = gst.germ_completeness(gst.default_germs(), gst.perturbed_target())
    assert 0 < score.rank < score.required
    assert not score.complete


def test_gauge_directions_are_not_amplified():
    gs = gst.perturbed_target()
    j = gst.germ_jacobian((Op("Gzz", 0), Op("Gxp", 1)), gs.gates)
    t = np.zeros((16, 16))
    t[3, 5] = 1.0
    direction = np.concatenate([(t @ gs.gates[k] - gs.gates[k] @ t)[1:].ravel() for k in gst.GATE_LABELS])
    assert np.linalg.norm(j @ direction) < 1e-9


# --- forward model --------------------------------------------------------

def test_empty_circuit_ideal():
    assert np.allclose(gst.predict(gst.target_gateset(), ()), [1, 0, 0, 0], atol=1e-15)


def test_double_gate_matches_composition():
    t = gst.target_gateset()
    t.gates["Gzz"] = qcore.depolarizing_ptm(0.1) @ t.gates["Gzz"]
    ptm = qcore.compose(t.gates["Gzz"], t.gates["Gzz"])
    rho = qcore.apply(ptm, qcore.density_matrix(qcore.ket(0)))
    assert np.allclose(gst.predict(t, "Gzz Gzz"), np.real(np.diag(rho)), atol=1e-12)


def test_fully_depolarizing_gate():
    t = gst.target_gateset()
    t.gates["Gzz"] = qcore.depolarizing_ptm(1.0)
    assert np.allclose(gst.predict(t, "Gxp:1 Gzz"), 0.25, atol=1e-15)


def test_predictions_are_distributions(pair_plan):
    truth = noisy_truth()
    p = exact_counts(truth, pair_plan, 1.0)
    assert np.all(p >= -1e-12)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-10)


def test_gauge_invariance_of_predictions(pair_plan, rng):
    truth = noisy_truth()
    m = np.eye(16)
    m[1:] += 0.1 * rng.normal(size=(15, 16))
    twisted = truth.transformed(m)
    for c in pair_plan.circuits[::37]:
        ops = pair_plan.design.ops(c)
        assert np.allclose(gst.predict(truth, ops), gst.predict(twisted, ops), atol=1e-9)


# --- parameterisation -----------------------------------------------------

def test_random_parameters_give_valid_gate_sets(rng):
    for _ in range(20):
        gs = gst.unpack(rng.normal(size=gst.N_PARAMS))
        for g in gs.gates.values():
            assert qcore.is_cptp(g, atol=1e-9)
        assert qcore.is_density_matrix(qcore.vector_to_state(gs.rho), atol=1e-9)
        e = np.array([qcore.vector_to_state(v) for v in gs.effects])
        assert np.allclose(e.sum(axis=0), np.eye(4), atol=1e-9)
        assert all(np.linalg.eigvalsh(x).min() > -1e-9 for x in e)


def test_pack_round_trip_on_interior_set():
    truth = noisy_truth(0.2, 0.1)
    back = gst.unpack(gst.pack(truth, mix=0.0))
    for k in truth.gates:
        assert np.allclose(back.gates[k], truth.gates[k], atol=1e-9)
    assert np.allclose(back.rho, truth.rho, atol=1e-9)
    assert np.allclose(back.effects, truth.effects, atol=1e-9)


def test_parameter_counts():
    counts = gst.parameter_counts()
    assert counts == {"raw": 5 * 256 + 16 + 64, "tp": 5 * 240 + 15 + 48, "gauge_reduced": 1023,
                      "reference": 1026}


def test_likelihood_gradient_matches_finite_differences(small_plan, rng):
    counts = sampled_counts(noisy_truth(), small_plan, 100, 1)
    model = gst.LikelihoodModel(small_plan, counts)
    theta = gst.pack(noisy_truth(0.1, 0.05)) + 0.01 * rng.normal(size=gst.N_PARAMS)
    _, grad = model.objective(theta)
    for i in rng.choice(gst.N_PARAMS, 25, replace=False):
        e = np.zeros(gst.N_PARAMS)
        e[i] = 1e-6
        fd = (model.objective(theta + e, False) - model.objective(theta - e, False)) / 2e-6
        assert fd == pytest.approx(grad[i], rel=1e-4, abs=1e-3)


# --- estimation ------------------------------------------------------------

def test_exact_data_gof_limit(small_plan):
    truth = noisy_truth()
    counts = exact_counts(truth, small_plan)
    rep = gst.goodness_of_fit(truth, counts, small_plan)
    dof = rep.dofs[0]
    assert rep.statistics[0] == pytest.approx(0.0, abs=1e-6)
    assert rep.nsigma[0] == pytest.approx(-dof / math.sqrt(2 * dof), abs=1e-8)


def test_infinite_shot_self_consistency(small_plan):
    truth = noisy_truth()
    counts = exact_counts(truth, small_plan)
    est = gst.mle_fit(counts, small_plan)
    assert est.converged
    for c in small_plan.circuits:
        ops = small_plan.design.ops(c)
        assert np.allclose(gst.predict(est, ops), gst.predict(truth, ops), atol=1e-6)


def test_ideal_data_recovers_target_up_to_gauge(small_plan):
    est = gst.gauge_optimize(gst.mle_fit(exact_counts(gst.target_gateset(), small_plan), small_plan))
    rep = gst.report(est)
    for g in rep["gates"].values():
        assert np.linalg.norm(g.generator) < 1e-3
        assert g.average_infidelity < 1e-6


def test_depolarizing_gate_recovered(pair_plan):
    t = gst.target_gateset()
    t.gates["Gzz"] = qcore.depolarizing_ptm(0.01) @ t.gates["Gzz"]
    est = gst.gauge_optimize(gst.mle_fit(sampled_counts(t, pair_plan, 1000, 5), pair_plan))
    truth_fid = 1 - qcore.average_infidelity(t.gates["Gzz"], gatesim.ideal_gate())
    fid = 1 - gst.report(est)["gates"]["Gzz"].average_infidelity
    assert abs(fid - truth_fid) < 3e-3


def test_coherent_overrotation_is_hamiltonian(small_plan):
    zz = np.kron(np.diag([1, -1]), np.diag([1, -1]))
    t = noisy_truth(0.0, 0.02)
    t.gates["Gzz"] = qcore.ptm_from_unitary(expm(-0.5j * 0.02 * zz)) @ t.gates["Gzz"]
    est = gst.gauge_optimize(gst.mle_fit(exact_counts(t, small_plan), small_plan))
    g = gst.report(est)["gates"]["Gzz"]
    assert g.hamiltonian_norm > 2 * g.stochastic_norm


def test_coherent_report_fraction():
    zz = np.kron(np.diag([1, -1]), np.diag([1, -1]))
    t = gst.target_gateset()
    t.gates["Gzz"] = qcore.ptm_from_unitary(expm(-0.5j * 0.02 * zz)) @ t.gates["Gzz"]
    assert gst.report(t)["gates"]["Gzz"].coherent_fraction > 0.9


# --- gauge -----------------------------------------------------------------

def test_target_gauge_is_identity():
    out = gst.gauge_optimize(gst.target_gateset())
    assert np.allclose(out.info["gauge"], np.eye(16), atol=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_unitary_twist_is_undone(seed):
    truth = noisy_truth()
    u = qcore.ptm_from_unitary(unitary_group.rvs(4, random_state=seed))
    out = gst.gauge_optimize(truth.transformed(u), truth)
    assert np.allclose(out.info["gauge"], u.T, atol=1e-6)  # orthogonal PTM: inverse is transpose
    for k in truth.gates:
        assert np.allclose(out.gates[k], truth.gates[k], atol=1e-6)


def test_gauge_preserves_likelihood(small_plan, rng):
    counts = sampled_counts(noisy_truth(), small_plan, 200, 2)
    m = np.eye(16)
    m[1:] += 0.05 * rng.normal(size=(15, 16))
    est = noisy_truth(0.06, 0.03).transformed(m)
    before = gst.goodness_of_fit(est, counts, small_plan).statistics[0]
    after = gst.goodness_of_fit(gst.gauge_optimize(est), counts, small_plan).statistics[0]
    assert after == pytest.approx(before, abs=1e-9 * max(1.0, before))


def test_ill_conditioned_gauge_rejected():
    with pytest.raises(gst.GstError):
        gst.gauge_optimize(noisy_truth().transformed(np.diag([1.0] + [3.0] * 15)), max_condition=1.5)


# --- reports ---------------------------------------------------------------

def test_ideal_report_is_zero():
    rep = gst.report(gst.target_gateset())
    for g in rep["gates"].values():
        assert np.allclose(g.generator, 0, atol=1e-10)
        assert g.diamond_distance < 1e-6 and g.average_infidelity < 1e-12


def test_depolarizing_report_scale():
    t = gst.target_gateset()
    t.gates["Gzz"] = qcore.depolarizing_ptm(0.0075) @ t.gates["Gzz"]
    g = gst.report(t)["gates"]["Gzz"]
    assert g.average_infidelity == pytest.approx(0.0075 * 0.75, rel=1e-9)
    assert g.diamond_distance == pytest.approx(0.0075 * 15 / 16, rel=1e-3)
    assert g.coherent_fraction < 0.1
