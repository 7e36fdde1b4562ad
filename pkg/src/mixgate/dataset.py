"""Shot-count datasets and their text format.

File layout::

    # key: value          (metadata, one per line; 'records' is mandatory)
    <circuit>\t<n00> <n01> <n10> <n11>

The ``records`` header guards against truncated files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import os
from pathlib import Path

import numpy as np

from . import circuits


class DatasetError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class CountRecord:
    circuit: str
    counts: tuple[int, int, int, int]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != 4:
            raise DatasetError("a record needs four counts")
        if min(counts) < 0:
            raise DatasetError("negative count")
        if sum(counts) <= 0:
            raise DatasetError("record has no shots")
        object.__setattr__(self, "counts", counts)

    @property
    def shots(self) -> int:
        return sum(self.counts)

    def frequencies(self) -> np.ndarray:
        return np.array(self.counts, dtype=float) / self.shots


@dataclass
class CountDataset:
    records: list[CountRecord] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def counts_array(self) -> np.ndarray:
        return np.array([r.counts for r in self.records], dtype=np.int64).reshape(-1, 4)

    def by_circuit(self) -> dict[str, np.ndarray]:
        """Counts summed over records with the same canonical circuit."""
        out: dict[str, np.ndarray] = {}
        for r in self.records:
            key = circuits.canonical(r.circuit)
            out[key] = out.get(key, 0) + np.array(r.counts)
        return out

    def dumps(self) -> str:
        lines = []
        meta = dict(self.metadata)
        meta["records"] = str(len(self.records))
        for key, value in meta.items():
            if "\n" in key or "\n" in str(value) or ":" in key:
                raise DatasetError(f"metadata entry {key!r} cannot be stored")
            lines.append(f"# {key}: {value}")
        for r in self.records:
            lines.append(f"{r.circuit}\t{' '.join(str(c) for c in r.counts)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CountDataset":
        if text and not text.endswith("\n"):
            raise DatasetError("file does not end with a newline (truncated?)")
        meta: dict[str, str] = {}
        records: list[CountRecord] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if line.startswith("#"):
                if records:
                    raise DatasetError("metadata after records", lineno)
                key, sep, value = line[1:].strip().partition(":")
                if not sep:
                    raise DatasetError("metadata line needs 'key: value'", lineno)
                meta[key.strip()] = value.strip()
                continue
            if not line.strip():
                raise DatasetError("blank line", lineno)
            circ, sep, counts = line.partition("\t")
            if not sep:
                raise DatasetError("missing tab between circuit and counts", lineno)
            try:
                circuits.parse_circuit(circ)
            except circuits.CircuitSyntaxError as exc:
                raise DatasetError(f"bad circuit: {exc}", lineno) from None
            fields = counts.split(" ")
            try:
                values = [int(f) for f in fields]
            except ValueError:
                raise DatasetError(f"non-integer count in {counts!r}", lineno) from None
            try:
                records.append(CountRecord(circ, tuple(values)))
            except DatasetError as exc:
                raise DatasetError(str(exc), lineno) from None
        declared = meta.pop("records", None)
        if declared is None:
            raise DatasetError("missing 'records' header")
        if int(declared) != len(records):
            raise DatasetError(f"header declares {declared} records, found {len(records)}")
        return cls(records, meta)

    def store(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "CountDataset":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def record_seed(root_seed: int, circuit_text: str, index: int) -> np.random.SeedSequence:
    """Seed for one record, independent of execution order."""
    digest = hashlib.sha256(f"{int(root_seed)}|{circuit_text}|{int(index)}".encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:16], "little"))


def timestamp() -> str:
    """Reproducible timestamp: SOURCE_DATE_EPOCH when set, else 'unset'."""
    return os.environ.get("SOURCE_DATE_EPOCH", "unset")
