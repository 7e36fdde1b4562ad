import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chi2_contingency

from mixgate import backend as bk, circuits, clifford, config, dataset, gatesim, gst, qcore, rbm
from mixgate.circuits import Op

# --- grammar ---------------------------------------------------------------

single = st.builds(Op, st.sampled_from(circuits.SINGLE_QUBIT_GATES), st.sampled_from([1, 2]))
op_strategy = st.one_of(single, st.just(Op("Gzz", 0)))
circuit_strategy = st.lists(op_strategy, max_size=30).map(tuple)


def test_simple_circuit():
    assert circuits.parse_circuit("Gxp:1 Gzz Gxm:2") == (Op("Gxp", 1), Op("Gzz", 0), Op("Gxm", 2))


def test_repetition_expands():
    ops = circuits.parse_circuit("(Gzz Gxp:1)^3")
    assert len(ops) == 6
    assert ops == (Op("Gzz", 0), Op("Gxp", 1)) * 3


def test_nested_and_single_label_repeats():
    assert circuits.parse_circuit("((Gxp:1)^2 Gzz)^2 Gpi:2^3") == (
        (Op("Gxp", 1),) * 2 + (Op("Gzz", 0),) + (Op("Gxp", 1),) * 2 + (Op("Gzz", 0),) + (Op("Gpi", 2),) * 3)


def test_empty_circuit():
    assert circuits.parse_circuit("{}") == ()
    assert circuits.parse_circuit("") == ()
    assert circuits.serialize_circuit(()) == "{}"


@pytest.mark.parametrize("text, offset", [
    ("Gq:3", 0),
    ("Gxp:1 Gxp:3", 6),
    ("Gxp:1 (Gzz", 10),
    ("Gzz:1", 3),
    ("Gxp:1 )", 6),
    ("Gxp:1 $", 6),
    ("Gxp", 3),
])
def test_syntax_errors_report_offset(text, offset):
    with pytest.raises(circuits.CircuitSyntaxError) as info:
        circuits.parse_circuit(text)
    assert info.value.offset == offset
    assert info.value.expected


@given(circuit_strategy)
def test_serialize_parse_round_trip(ops):
    text = circuits.serialize_circuit(ops)
    assert circuits.parse_circuit(text) == ops
    assert circuits.canonical(text) == text


def test_module_circuits_round_trip(rng):
    seqs = rbm.generate(rbm.RbmDesign(lengths=(1, 5), randomizations=3), rng)
    texts = [s.text() for s in seqs] + list(gst.build_design(lengths=(1, 2)).texts)
    for text in texts:
        assert circuits.serialize_circuit(circuits.parse_circuit(text)) == circuits.canonical(text)


def test_op_ptms_match_unitaries():
    for name in circuits.GATE_NAMES:
        op = circuits.make_op(name, 0 if name == "Gzz" else 2)
        u = circuits.op_unitary(op)
        direct = np.array([[np.trace(pi @ u @ pj @ u.conj().T).real / 4 for pj in qcore.PAULIS]
                           for pi in qcore.PAULIS])
        assert np.allclose(circuits.op_ptm(op), direct, atol=1e-12)
    assert np.allclose(circuits.op_ptm(Op("Gzz", 0)), gatesim.ideal_gate(), atol=1e-12)


def test_make_op_validation():
    with pytest.raises(ValueError):
        circuits.make_op("Gzz", 1)
    with pytest.raises(ValueError):
        circuits.make_op("Gxp", 3)


# --- datasets --------------------------------------------------------------

def test_empty_dataset_is_header_only(tmp_path):
    path = tmp_path / "d.txt"
    dataset.CountDataset([], {"seed": "1"}).store(path)
    lines = path.read_text().splitlines()
    assert lines and all(line.startswith("#") for line in lines)
    assert len(dataset.CountDataset.load(path)) == 0


def test_thousand_record_round_trip(tmp_path, rng):
    records = [dataset.CountRecord(circuits.serialize_circuit(tuple(
        Op("Gxp", 1 + int(k % 2)) for k in range(i % 5))), tuple(int(x) for x in rng.integers(1, 50, 4)))
        for i in range(1000)]
    ds = dataset.CountDataset(records, {"seed": "3", "backend": "test", "timestamp": "unset"})
    path = tmp_path / "d.txt"
    ds.store(path)
    raw = path.read_bytes()
    back = dataset.CountDataset.load(path)
    assert back == ds
    back.store(path)
    assert path.read_bytes() == raw


@pytest.mark.parametrize("text, line", [
    ("# records: 1\nGzz\t10 -1 0 0\n", 2),
    ("Gzz\t10 -1 0 0\n", 1),
    ("# records: 1\nGzz 10 0 0 0\n", 2),
    ("# records: 1\nGzz\t0 0 0 0\n", 2),
    ("# records: 1\nGq:3\t1 0 0 0\n", 2),
    ("# records: 1\nGzz\t1 0 0\n", 2),
    ("# records: 1\nGzz\t1 x 0 0\n", 2),
])
def test_malformed_lines_report_line_number(text, line):
    with pytest.raises(dataset.DatasetError) as info:
        dataset.CountDataset.loads(text)
    assert info.value.line == line


def test_negative_count_message():
    with pytest.raises(dataset.DatasetError, match="line 1: negative count"):
        dataset.CountDataset.loads("Gzz\t10 -1 0 0\n")


@pytest.mark.parametrize("text", [
    "# records: 2\nGzz\t1 0 0 0\n",
    "# records: 1\nGzz\t1 0 0 0",
    "Gzz\t1 0 0 0\n",
])
def test_partial_files_rejected(text):
    with pytest.raises(dataset.DatasetError):
        dataset.CountDataset.loads(text)


def test_by_circuit_sums_repeats():
    ds = dataset.CountDataset([dataset.CountRecord("Gzz", (1, 0, 0, 0)),
                               dataset.CountRecord("(Gzz)^1", (0, 2, 0, 0))])
    assert np.array_equal(ds.by_circuit()["Gzz"], [1, 2, 0, 0])


def test_record_seed_depends_on_all_inputs():
    base = dataset.record_seed(1, "Gzz", 0).entropy
    assert base == dataset.record_seed(1, "Gzz", 0).entropy
    assert len({base, dataset.record_seed(2, "Gzz", 0).entropy, dataset.record_seed(1, "Gzz Gzz", 0).entropy,
                dataset.record_seed(1, "Gzz", 1).entropy}) == 4


def test_timestamp_follows_source_date_epoch(monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    assert dataset.timestamp() == "unset"
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    assert dataset.timestamp() == "1700000000"


# --- backend ---------------------------------------------------------------

def test_identity_on_ideal_backend():
    counts = bk.simulate_shots(bk.SimBackendConfig(), "{}", 100)
    assert list(counts) == [100, 0, 0, 0]


def test_same_seed_same_counts():
    cfg = bk.SimBackendConfig(seed=5, gate_infidelity=0.01, readout_errors=(0.02, 0.03))
    a = bk.simulate_shots(cfg, "Gxp:1 Gzz Gyp:2", 1000)
    b = bk.simulate_shots(cfg, "Gxp:1 Gzz Gyp:2", 1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, bk.simulate_shots(bk.SimBackendConfig(seed=6, gate_infidelity=0.01,
                                                                      readout_errors=(0.02, 0.03)),
                                                   "Gxp:1 Gzz Gyp:2", 1000))


def test_frequencies_converge_to_prediction():
    cfg = bk.SimBackendConfig(seed=2, gate_infidelity=0.02, pulse_infidelity=0.01, readout_errors=(0.01, 0.02))
    circ = "Gxp:1 Gyp:2 Gzz Gxm:1"
    p = bk.predict(cfg, circ)
    f = bk.simulate_shots(cfg, circ, 1_000_000) / 1e6
    nz = f > 0
    assert np.sum(f[nz] * np.log(f[nz] / p[nz])) < 1e-4


def test_prediction_matches_exact_propagation():
    g = qcore.depolarizing_ptm(0.03) @ gatesim.ideal_gate()
    cfg = bk.SimBackendConfig(gate_ptm=g, readout_errors=(0.01, 0.02))
    ops = circuits.parse_circuit("Gyp:1 Gzz Gxp:2")
    vec = circuits.op_ptm(ops[2]) @ g @ circuits.op_ptm(ops[0]) @ bk._GROUND
    pops = np.real(np.diag(qcore.vector_to_state(vec)))
    assert np.allclose(bk.predict(cfg, ops), bk.confusion_matrix(0.01, 0.02) @ pops, atol=1e-12)


def test_bell_state_on_ideal_backend():
    p = bk.predict(bk.SimBackendConfig(), "Gyp:1 Gyp:2 Gzz Gym:1 Gym:2")
    assert np.isclose(p[0] + p[3], 1.0) or np.isclose(p[1] + p[2], 1.0)


def test_confusion_matrix_columns():
    m = bk.confusion_matrix(0.1, 0.2)
    assert np.allclose(m.sum(axis=0), 1.0)
    assert m[1, 0] == pytest.approx(0.9 * 0.2)  # Sr flips only
    assert m[2, 0] == pytest.approx(0.1 * 0.8)


def test_clifford_blocks_match_expanded_ops():
    b = bk.SimBackend(bk.SimBackendConfig(gate_infidelity=0.01, pulse_infidelity=0.002))
    els = [clifford.TwoQubitClifford(i) for i in (17, 4000, 9999)]
    ops = [op for e in els for op in clifford.decompose(e).ops]
    assert np.allclose(b.final_state(els), b.final_state(ops), atol=1e-13)


def test_interior_noise_options():
    b = bk.SimBackend(bk.SimBackendConfig(local_depolarizing=0.1, prep_depolarizing=0.2))
    assert np.allclose(b.initial_state[1:], 0.8 * bk._GROUND[1:])
    m = b.op_ptm(Op("Gzp", 1))
    assert np.allclose(m, qcore.depolarizing_ptm(0.1) @ circuits.op_ptm(Op("Gzp", 1)))
    assert np.array_equal(b.op_ptm(Op("Gzz", 0)), gatesim.ideal_gate())


def test_drift_grows_with_elapsed_time():
    model = bk.DriftModel()
    assert model.gate_error(0.0) == 0.0
    assert model.gate_error(2e-3) == pytest.approx(2 * model.gate_error(1e-3))
    assert model.duration(Op("Gzp", 1)) == 0.0
    assert model.duration(Op("Gpi", 2)) == model.pi_duration
    assert model.duration(Op("Gzz", 0)) == model.gate_duration
    plain = bk.SimBackend(bk.SimBackendConfig(gate_infidelity=0.001))
    drifting = bk.SimBackend(bk.SimBackendConfig(gate_infidelity=0.001, drift=model))
    gates = circuits.parse_circuit("Gzz^40")
    # early gates match, later ones pick up extra error
    assert np.allclose(plain.final_state(gates[:1]), drifting.final_state(gates[:1]), atol=1e-15)
    loss = lambda b, n: 1 - b.probabilities(gates[:n])[0]
    assert loss(drifting, 40) - loss(plain, 40) > 2 * (loss(drifting, 20) - loss(plain, 20)) > 0


def test_positions_exchangeable_without_drift():
    # same per-gate error at every position: counts of a length-1 probe placed
    # after k ideal-identity padding pairs do not depend on k
    b = bk.SimBackend(bk.SimBackendConfig(seed=9, gate_infidelity=0.05))
    table = []
    for k in range(4):
        ops = circuits.parse_circuit(f"(Gpi:1 Gpi:1)^{k} Gzz Gzz Gzz Gzz" if k else "Gzz Gzz Gzz Gzz")
        table.append(b.simulate_shots(ops, 20000, index=k))
    assert chi2_contingency(np.array(table) + 1).pvalue > 1e-3


def test_run_circuits_metadata_and_canonical_text(monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    b = bk.SimBackend(bk.SimBackendConfig(seed=4))
    ds = bk.run_circuits(b, ["(Gzz)^2", "{}"], 10)
    assert [r.circuit for r in ds.records] == ["Gzz Gzz", "{}"]
    assert ds.metadata["seed"] == "4" and ds.metadata["timestamp"] == "unset"
    assert "sim seed=4" in ds.metadata["backend"]


# --- config ----------------------------------------------------------------

def test_defaults_rebuild_module_defaults():
    cfg = config.defaults()
    assert config.noise(cfg) == gatesim.NoiseSpec.measured_defaults()
    assert config.species(cfg) == (gatesim.CALCIUM, gatesim.STRONTIUM)
    assert config.gate_config(cfg) == gatesim.default_config()


def test_load_overrides_and_rejects_unknown(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nrbm.lengths = 1, 4\nbackend.seed = 12\n")
    cfg = config.load(path)
    assert config.rbm_design(cfg).lengths == (1, 4)
    assert config.backend_config(cfg).seed == 12
    path.write_text("rbm.nonsense = 3\n")
    with pytest.raises(config.ConfigError):
        config.load(path)


@pytest.mark.parametrize("text", ["no equals sign\n", "= 3\n"])
def test_config_syntax_errors(text):
    with pytest.raises(config.ConfigError):
        config.parse(text)


def test_config_value_types():
    cfg = config.parse("a.b = true\na.c = 1, 2\na.d = 7\na.e = 2.5\na.f = text\n")
    assert cfg == {"a.b": True, "a.c": [1, 2], "a.d": 7, "a.e": 2.5, "a.f": "text"}


@pytest.mark.parametrize("line", ["rbm.shots = many", "backend.drift = 3", "gst.lengths = 1, two", "ca.name = 4, 5"])
def test_config_type_mismatch_rejected(tmp_path, line):
    path = tmp_path / "bad.cfg"
    path.write_text(line + "\n")
    with pytest.raises(config.ConfigError, match=line.split(" ")[0]):
        config.load(path)


def test_config_single_item_list_accepted(tmp_path):
    path = tmp_path / "one.cfg"
    path.write_text("rbm.max_lengths = 10\n")
    assert config.load(path)["rbm.max_lengths"] == 10
