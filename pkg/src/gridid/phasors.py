"""Synchronized phasor measurement datasets: ingestion, noise, rank."""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DataError


@dataclass(frozen=True, eq=False)
class PhasorDataset:
    """Per-unit voltage and injected-current phasors, terminals x slots.

    Immutable after construction; treat the arrays as read-only.
    """

    terminals: tuple
    V: np.ndarray
    I: np.ndarray
    slot_seconds: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "terminals", tuple((str(n), str(p)) for n, p in self.terminals))
        V = np.asarray(self.V, dtype=complex)
        I = np.asarray(self.I, dtype=complex)
        if V.shape != I.shape:
            raise DataError(f"V shape {V.shape} != I shape {I.shape}")
        if V.ndim != 2 or V.shape[1] < 1:
            raise DataError("datasets need shape (terminals, slots) with at least one slot")
        if V.shape[0] != len(self.terminals):
            raise DataError(f"{len(self.terminals)} terminals but {V.shape[0]} data rows")
        if not all(np.all(np.isfinite(m.real)) and np.all(np.isfinite(m.imag)) for m in (V, I)):
            raise DataError("non-finite phasor values")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "I", I)

    @property
    def dim(self):
        return self.V.shape[0]

    @property
    def slots(self):
        return self.V.shape[1]

    @property
    def terminal_index(self):
        return {t: i for i, t in enumerate(self.terminals)}

    def window(self, start, stop):
        """Column slice [start, stop) as a new dataset."""
        if not (0 <= start < stop <= self.slots):
            raise ValueError(f"window [{start}, {stop}) outside [0, {self.slots})")
        return replace(self, V=self.V[:, start:stop].copy(), I=self.I[:, start:stop].copy())


_CSV_HEADER = ["k", "node", "phase", "v_re", "v_im", "i_re", "i_im"]


def save_phasor_csv(ds: PhasorDataset, path):
    """Write slot-major rows; 17 significant digits round-trip doubles exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for k in range(ds.slots):
            for t, (node, phase) in enumerate(ds.terminals):
                v, i = ds.V[t, k], ds.I[t, k]
                writer.writerow([
                    k, node, phase,
                    format(v.real, ".17g"), format(v.imag, ".17g"),
                    format(i.real, ".17g"), format(i.imag, ".17g"),
                ])


def load_phasor_csv(path, slot_seconds=1.0) -> PhasorDataset:
    """Read a phasor CSV; every (node, phase) must appear in every slot."""
    records = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise DataError(f"bad header {header!r}, expected {_CSV_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise DataError(f"line {lineno}: expected 7 fields, got {len(row)}")
            try:
                k = int(row[0])
                vals = [float(x) for x in row[3:7]]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
            if k < 0:
                raise DataError(f"line {lineno}: negative slot index {k}")
            if not all(np.isfinite(vals)):
                raise DataError(f"line {lineno}: non-finite value")
            key = (k, row[1], row[2])
            if key in records:
                raise DataError(f"duplicate row for node={row[1]} phase={row[2]} k={k}")
            records[key] = (complex(vals[0], vals[1]), complex(vals[2], vals[3]))
    if not records:
        raise DataError("empty phasor file")
    terminals = sorted({(n, p) for _, n, p in records})
    slots = sorted({k for k, _, _ in records})
    if slots != list(range(len(slots))):
        missing = sorted(set(range(max(slots) + 1)) - set(slots))
        raise DataError(f"missing time slots {missing}")
    V = np.zeros((len(terminals), len(slots)), dtype=complex)
    I = np.zeros_like(V)
    for k in range(len(slots)):
        for t, (node, phase) in enumerate(terminals):
            rec = records.get((k, node, phase))
            if rec is None:
                raise DataError(f"missing measurement for node={node} phase={phase} k={k}")
            V[t, k], I[t, k] = rec
    return PhasorDataset(terminals=tuple(terminals), V=V, I=I, slot_seconds=slot_seconds)


def add_noise(ds: PhasorDataset, sigma: float, seed, on_currents: bool = False) -> PhasorDataset:
    """Add i.i.d. complex Gaussian noise (real and imaginary parts each with
    standard deviation ``sigma``) to the voltages; currents only on request."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return ds
    rng = np.random.default_rng(seed)
    shape = ds.V.shape
    V = ds.V + rng.normal(0.0, sigma, shape) + 1j * rng.normal(0.0, sigma, shape)
    I = ds.I
    if on_currents:
        I = ds.I + rng.normal(0.0, sigma, shape) + 1j * rng.normal(0.0, sigma, shape)
    return replace(ds, V=V, I=I)


def numerical_rank(data, tol: float = 1e-8) -> int:
    """Count singular values of the voltage matrix above tol times the largest.

    The default matches the basis-selection threshold; noisy data restores
    full numerical rank only once the noise exceeds this level.
    """
    V = data.V if isinstance(data, PhasorDataset) else np.asarray(data)
    if V.size == 0:
        return 0
    s = np.linalg.svd(V, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))
