"""Circuit-string grammar and the physical gate alphabet.

Grammar (whitespace separated)::

    circuit := "{}" | item*
    item    := atom ["^" INT]
    atom    := label | "(" item* ")"
    label   := GATE [":" QUBIT]

``GATE`` is one of ``Gxp Gxm Gyp Gym Gzp Gzm`` (±π/2 rotations), ``Gpi``
(X π-pulse) or ``Gzz`` (the composite entangling gate, no qubit).  Qubit 1
is Ca+, qubit 2 is Sr+.  The canonical text of a circuit is the fully
expanded label list, or ``{}`` for the empty circuit.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import qcore

SINGLE_QUBIT_GATES = ("Gxp", "Gxm", "Gyp", "Gym", "Gzp", "Gzm", "Gpi")
ENTANGLING_GATE = "Gzz"
GATE_NAMES = SINGLE_QUBIT_GATES + (ENTANGLING_GATE,)
EMPTY = "{}"


class Op(NamedTuple):
    gate: str
    qubit: int = 0  # 0 only for Gzz

    def __str__(self) -> str:
        return self.gate if self.gate == ENTANGLING_GATE else f"{self.gate}:{self.qubit}"


Circuit = tuple  # tuple[Op, ...]


class CircuitSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        detail = f" (expected one of: {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")
        self.offset = offset
        self.expected = expected


def make_op(gate: str, qubit: int = 0) -> Op:
    if gate == ENTANGLING_GATE:
        if qubit not in (0,):
            raise ValueError("Gzz takes no qubit")
        return Op(gate, 0)
    if gate not in SINGLE_QUBIT_GATES:
        raise ValueError(f"unknown gate {gate!r}")
    if qubit not in (1, 2):
        raise ValueError(f"qubit must be 1 or 2, got {qubit!r}")
    return Op(gate, qubit)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _tokenize(text: str):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()^:":
            tokens.append((c, c, i))
            i += 1
        elif text.startswith(EMPTY, i):
            tokens.append(("EMPTY", EMPTY, i))
            i += 2
        elif c.isalnum():
            j = i
            while j < n and text[j].isalnum():
                j += 1
            word = text[i:j]
            tokens.append(("INT" if word.isdigit() else "NAME", word, i))
            i = j
        else:
            raise CircuitSyntaxError(f"unexpected character {c!r}", i, ("gate label", "(", "{}"))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def offset(self) -> int:
        tok = self.peek()
        return tok[2] if tok else len(self.text.encode())

    def take(self, kind: str, expected: tuple[str, ...]):
        tok = self.peek()
        if tok is None or tok[0] != kind:
            what = "end of input" if tok is None else repr(tok[1])
            raise CircuitSyntaxError(f"unexpected {what}", self.offset(), expected)
        self.pos += 1
        return tok

    def parse(self) -> tuple[Op, ...]:
        tok = self.peek()
        if tok is not None and tok[0] == "EMPTY":
            self.pos += 1
            if self.peek() is not None:
                raise CircuitSyntaxError("'{}' must stand alone", self.offset(), ("end of input",))
            return ()
        ops = self.items(top=True)
        return tuple(ops)

    def items(self, top: bool) -> list[Op]:
        ops: list[Op] = []
        while True:
            tok = self.peek()
            if tok is None:
                if not top:
                    raise CircuitSyntaxError("unclosed group", self.offset(), (")",))
                return ops
            if tok[0] == ")":
                if top:
                    raise CircuitSyntaxError("unbalanced ')'", tok[2], ("gate label", "("))
                return ops
            ops.extend(self.item())

    def item(self) -> list[Op]:
        tok = self.peek()
        if tok[0] == "(":
            self.pos += 1
            body = self.items(top=False)
            self.take(")", (")",))
        elif tok[0] == "NAME":
            body = [self.label()]
        else:
            raise CircuitSyntaxError(f"unexpected {tok[1]!r}", tok[2], ("gate label", "("))
        nxt = self.peek()
        if nxt is not None and nxt[0] == "^":
            self.pos += 1
            count = int(self.take("INT", ("repeat count",))[1])
            body = body * count
        return body

    def label(self) -> Op:
        name_tok = self.take("NAME", GATE_NAMES)
        name, start = name_tok[1], name_tok[2]
        if name not in GATE_NAMES:
            raise CircuitSyntaxError(f"unknown gate {name!r}", start, GATE_NAMES)
        nxt = self.peek()
        if name == ENTANGLING_GATE:
            if nxt is not None and nxt[0] == ":":
                raise CircuitSyntaxError("Gzz takes no qubit", nxt[2], ("^", "gate label"))
            return Op(name, 0)
        if nxt is None or nxt[0] != ":":
            raise CircuitSyntaxError(f"{name} needs a qubit", self.offset(), (":",))
        self.pos += 1
        q_tok = self.take("INT", ("1", "2"))
        if q_tok[1] not in ("1", "2"):
            raise CircuitSyntaxError(f"unknown qubit {q_tok[1]!r} for {name}", start, ("1", "2"))
        return Op(name, int(q_tok[1]))


def parse_circuit(text: str) -> tuple[Op, ...]:
    return _Parser(text).parse()


def serialize_circuit(circuit) -> str:
    if not circuit:
        return EMPTY
    return " ".join(str(op) for op in circuit)


def canonical(text: str) -> str:
    return serialize_circuit(parse_circuit(text))


# ---------------------------------------------------------------------------
# gate semantics
# ---------------------------------------------------------------------------

_AXES = {"x": qcore._X2, "y": qcore._Y2, "z": qcore._Z2}


def rotation_1q(axis: np.ndarray, angle: float) -> np.ndarray:
    return scipy.linalg.expm(-0.5j * angle * axis)


def embed_1q(u: np.ndarray, qubit: int) -> np.ndarray:
    return np.kron(u, np.eye(2)) if qubit == 1 else np.kron(np.eye(2), u)


@lru_cache(maxsize=None)
def _entangler() -> np.ndarray:
    from .gatesim import ideal_gate_unitary

    u = ideal_gate_unitary()
    u.setflags(write=False)
    return u


@lru_cache(maxsize=None)
def op_unitary(op: Op) -> np.ndarray:
    if op.gate == ENTANGLING_GATE:
        return _entangler()
    if op.gate == "Gpi":
        u = rotation_1q(qcore._X2, np.pi)
    else:
        sign = 1.0 if op.gate[2] == "p" else -1.0
        u = rotation_1q(_AXES[op.gate[1]], sign * np.pi / 2)
    u = embed_1q(u, op.qubit)
    u.setflags(write=False)
    return u


@lru_cache(maxsize=None)
def op_ptm(op: Op) -> np.ndarray:
    m = qcore.ptm_from_unitary(op_unitary(op))
    m.setflags(write=False)
    return m


def circuit_unitary(circuit) -> np.ndarray:
    u = np.eye(4, dtype=complex)
    for op in circuit:
        u = op_unitary(op) @ u
    return u


def circuit_ptm(circuit) -> np.ndarray:
    m = np.eye(16)
    for op in circuit:
        m = op_ptm(op) @ m
    return m


def is_software(op: Op) -> bool:
    """Z rotations are frame changes with no physical pulse."""
    return op.gate in ("Gzp", "Gzm")


def is_entangling(op: Op) -> bool:
    return op.gate == ENTANGLING_GATE
