"""Two-qubit Clifford group as signed permutations of the Pauli basis.

An element is stored as ``perm, sign`` with ``U P_j U† = sign[j] P_perm[j]``
(Pauli order II, IX, ..., ZZ; second qubit fastest).  The tableau view
(symplectic matrix and phase bits) is the restriction to the images of
``X1, Z1, X2, Z2``.  Generator actions are read off the gate unitaries.

The group is enumerated by a Dijkstra search over the generators
``{±X, ±Y, ±Z}π/2`` on each qubit and the entangling gate, with cost
``(entangling, physical pulses, software Z)`` compared lexicographically;
the first path that reaches an element is its synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import heapq

import numpy as np

from . import circuits
from .circuits import Op

GROUP_ORDER = 11520
_GEN_PAULIS = (4, 12, 1, 3)  # X1, Z1, X2, Z2
_XZ = {0: (0, 0), 1: (1, 0), 2: (1, 1), 3: (0, 1)}  # I, X, Y, Z -> (x, z)

GENERATORS: tuple[Op, ...] = tuple(
    Op(g, q) for q in (1, 2) for g in ("Gxp", "Gxm", "Gyp", "Gym", "Gzp", "Gzm")
) + (Op("Gzz", 0),)


def _cost(op: Op) -> tuple[int, int, int]:
    if circuits.is_entangling(op):
        return (1, 0, 0)
    if circuits.is_software(op):
        return (0, 0, 1)
    return (0, 1, 0)


def signed_permutation(ptm: np.ndarray, atol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Decode a Clifford PTM; raises if it is not a signed permutation."""
    r = np.asarray(ptm, dtype=float)
    perm = np.argmax(np.abs(r), axis=0)
    sign = np.sign(r[perm, np.arange(16)])
    rebuilt = np.zeros((16, 16))
    rebuilt[perm, np.arange(16)] = sign
    if not np.allclose(rebuilt, r, atol=atol):
        raise ValueError("not a Clifford process matrix")
    return perm.astype(np.int8), sign.astype(np.int8)


def _key(perm, sign) -> int:
    k = 0
    for j in _GEN_PAULIS:
        k = (k << 5) | (int(perm[j]) << 1) | (1 if sign[j] < 0 else 0)
    return k


def _tableau(perm, sign) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    for j in _GEN_PAULIS:
        a, b = divmod(int(perm[j]), 4)
        (x1, z1), (x2, z2) = _XZ[a], _XZ[b]
        rows.append((x1, x2, z1, z2))
    phases = np.array([1 if sign[j] < 0 else 0 for j in _GEN_PAULIS], dtype=np.uint8)
    return np.array(rows, dtype=np.uint8), phases


class _Group:
    def __init__(self):
        gen_perm, gen_sign = [], []
        for op in GENERATORS:
            p, s = signed_permutation(circuits.op_ptm(op))
            gen_perm.append(p)
            gen_sign.append(s)
        ident_p = np.arange(16, dtype=np.int8)
        ident_s = np.ones(16, dtype=np.int8)
        found: dict[int, tuple] = {}
        heap = [((0, 0, 0), (), ident_p.tobytes(), ident_s.tobytes())]
        while heap:
            cost, seq, pb, sb = heapq.heappop(heap)
            p = np.frombuffer(pb, dtype=np.int8)
            s = np.frombuffer(sb, dtype=np.int8)
            key = _key(p, s)
            if key in found:
                continue
            found[key] = (seq, p, s)
            for g, (gp, gs) in enumerate(zip(gen_perm, gen_sign)):
                # apply generator after the current element
                np_ = gp[p]
                ns = (s * gs[p]).astype(np.int8)
                if _key(np_, ns) in found:
                    continue
                c = _cost(GENERATORS[g])
                heapq.heappush(heap, ((cost[0] + c[0], cost[1] + c[1], cost[2] + c[2]), seq + (g,),
                                      np_.tobytes(), ns.tobytes()))
        if len(found) != GROUP_ORDER:
            raise RuntimeError(f"enumerated {len(found)} elements, expected {GROUP_ORDER}")

        def order_key(k):
            sym, ph = _tableau(found[k][1], found[k][2])
            return (tuple(sym.ravel()), tuple(ph))

        keys = sorted(found, key=order_key)
        self.index_of = {k: i for i, k in enumerate(keys)}
        self.perm = np.stack([found[k][1] for k in keys])
        self.sign = np.stack([found[k][2] for k in keys])
        self.words = [tuple(GENERATORS[g] for g in found[k][0]) for k in keys]
        self.perm.setflags(write=False)
        self.sign.setflags(write=False)
        self.identity = self.index_of[_key(ident_p, ident_s)]

    def lookup(self, perm, sign) -> int:
        return self.index_of[_key(perm, sign)]


@lru_cache(maxsize=None)
def _group() -> _Group:
    return _Group()


@dataclass(frozen=True)
class TwoQubitClifford:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < GROUP_ORDER:
            raise ValueError(f"Clifford index {self.index} out of range")

    @property
    def perm(self) -> np.ndarray:
        return _group().perm[self.index]

    @property
    def sign(self) -> np.ndarray:
        return _group().sign[self.index]

    @property
    def symplectic(self) -> np.ndarray:
        return _tableau(self.perm, self.sign)[0]

    @property
    def phases(self) -> np.ndarray:
        return _tableau(self.perm, self.sign)[1]

    def ptm(self) -> np.ndarray:
        m = np.zeros((16, 16))
        m[self.perm.astype(int), np.arange(16)] = self.sign
        return m

    def __matmul__(self, other: "TwoQubitClifford") -> "TwoQubitClifford":
        return compose(self, other)


@dataclass(frozen=True)
class Decomposition:
    ops: tuple[Op, ...]

    @property
    def counts(self) -> tuple[int, int, int]:
        """(entangling, physical single-qubit, software Z)."""
        c = [0, 0, 0]
        for op in self.ops:
            for i, v in enumerate(_cost(op)):
                c[i] += v
        return tuple(c)

    def text(self) -> str:
        return circuits.serialize_circuit(self.ops)


def identity() -> TwoQubitClifford:
    return TwoQubitClifford(_group().identity)


def enumerate_group() -> list[TwoQubitClifford]:
    return [TwoQubitClifford(i) for i in range(GROUP_ORDER)]


def compose(a: TwoQubitClifford, b: TwoQubitClifford) -> TwoQubitClifford:
    """Operator product ``a·b``: ``b`` acts first."""
    grp = _group()
    pa, sa = grp.perm[a.index], grp.sign[a.index]
    pb, sb = grp.perm[b.index], grp.sign[b.index]
    return TwoQubitClifford(grp.lookup(pa[pb], sb * sa[pb]))


def invert(a: TwoQubitClifford) -> TwoQubitClifford:
    grp = _group()
    p, s = grp.perm[a.index], grp.sign[a.index]
    inv_p = np.empty(16, dtype=np.int8)
    inv_p[p] = np.arange(16, dtype=np.int8)
    inv_s = np.empty(16, dtype=np.int8)
    inv_s[p] = s
    return TwoQubitClifford(grp.lookup(inv_p, inv_s))


def from_ptm(ptm: np.ndarray) -> TwoQubitClifford:
    p, s = signed_permutation(ptm)
    try:
        return TwoQubitClifford(_group().lookup(p, s))
    except KeyError:
        raise ValueError("process matrix is not in the two-qubit Clifford group") from None


def from_circuit(circuit) -> TwoQubitClifford:
    return from_ptm(circuits.circuit_ptm(circuit))


def decompose(a: TwoQubitClifford) -> Decomposition:
    return Decomposition(_group().words[a.index])


def sample_random(rng: np.random.Generator) -> TwoQubitClifford:
    return TwoQubitClifford(int(rng.integers(GROUP_ORDER)))


PAULI_FRAMES = tuple((a, b) for a in "IXYZ" for b in "IXYZ")


def random_pauli(rng: np.random.Generator) -> tuple[str, str]:
    return PAULI_FRAMES[int(rng.integers(16))]


def pauli_frame_ops(frame: tuple[str, str]) -> tuple[Op, ...]:
    """π-rotations realising the frame; Z uses two software π/2 steps."""
    ops: list[Op] = []
    for q, p in zip((1, 2), frame):
        if p in ("Z", "Y"):
            ops += [Op("Gzp", q), Op("Gzp", q)]
        if p in ("X", "Y"):
            ops.append(Op("Gpi", q))
    return tuple(ops)


def frame_flips(frame: tuple[str, str]) -> int:
    """Basis state reached from |⇓↓> under the frame (index 2·q1 + q2)."""
    return 2 * (frame[0] in "XY") + (frame[1] in "XY")


def entangling_class_sizes() -> dict[int, int]:
    sizes: dict[int, int] = {}
    for w in _group().words:
        n = sum(circuits.is_entangling(op) for op in w)
        sizes[n] = sizes.get(n, 0) + 1
    return dict(sorted(sizes.items()))


def average_counts() -> tuple[float, float, float]:
    """Group-average (entangling, physical single-qubit, software Z) counts."""
    totals = np.zeros(3)
    for i in range(GROUP_ORDER):
        totals += decompose(TwoQubitClifford(i)).counts
    return tuple(totals / GROUP_ORDER)
