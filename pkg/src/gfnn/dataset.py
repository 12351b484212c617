"""Training data: initial-condition sampling, stroboscopic sequence generation,
training-pair extraction and the dataset file formats.

CSV layout::

    # {"format": "gfnn-dataset", ...json header...}
    seq_id,step_index,q_1,...,q_d,p_1,...,p_d
    0,0,<%.17g floats>...

The binary twin holds the same header and rows: magic ``GFNNDS01``, a
little-endian uint64 header length, the UTF-8 JSON header, then the rows as
little-endian float64 in CSV column order.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import systems
from .systems import DomainError, SystemSpec

TWO_PI = 2.0 * np.pi
BINARY_MAGIC = b"GFNNDS01"


@dataclass(frozen=True)
class SamplingScheme:
    """How initial conditions are drawn.

    ``orbital_box``: uniform semi-major axis / eccentricity / angles (Kepler).
    ``gaussian_tube``: a uniformly chosen state on a reference orbit plus
    i.i.d. ``N(0, sigma^2)`` noise. ``uniform_box``: uniform in ``[low, high]``
    per coordinate.
    """

    tag: str
    a_range: tuple[float, float] = (0.8, 1.2)
    e_range: tuple[float, float] = (0.0, 0.05)
    anomaly_range: tuple[float, float] = (0.0, TWO_PI)
    periapsis_range: tuple[float, float] = (0.0, TWO_PI)
    ref_state: tuple[float, ...] | None = None
    ref_time: float = 1.0
    ref_points: int = 1000
    sigma: float = 0.01
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.tag not in ("orbital_box", "gaussian_tube", "uniform_box"):
            raise ValueError(f"unknown sampling scheme {self.tag!r}")
        for name in ("a_range", "e_range", "anomaly_range", "periapsis_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
        if self.tag == "gaussian_tube":
            if not self.sigma > 0:
                raise ValueError("sigma must be positive")
            if self.ref_state is None:
                raise ValueError("gaussian_tube needs ref_state")
            if self.ref_points < 1 or not self.ref_time > 0:
                raise ValueError("reference orbit needs ref_points >= 1 and ref_time > 0")
        if self.tag == "uniform_box" and not self.high > self.low:
            raise ValueError("uniform_box needs high > low")

    def to_dict(self) -> dict:
        out = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in out.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplingScheme":
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items()}
        return cls(**kw)


@dataclass
class TrajectoryDataset:
    system: SystemSpec
    h: float
    sequences: np.ndarray  # (n_sequences, seq_len, 2d)
    seed: int
    scheme: SamplingScheme | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.float64)
        if self.sequences.ndim != 3 or self.sequences.shape[2] != 2 * self.system.d:
            raise ValueError(f"sequences must be (M, N+1, {2 * self.system.d}), got {self.sequences.shape}")
        if self.sequences.shape[1] < 2:
            raise ValueError("sequences need at least 2 states")

    @property
    def d(self) -> int:
        return self.system.d

    @property
    def n_sequences(self) -> int:
        return self.sequences.shape[0]

    @property
    def seq_len(self) -> int:
        return self.sequences.shape[1]


@dataclass(frozen=True)
class TrainingPairs:
    """Arrays of shape ``(n_pairs, d)``: inputs ``(q_i, p_{i+1})`` and targets
    ``dq = q_{i+1} - q_i``, ``dp = p_i - p_{i+1}``."""

    q: np.ndarray
    p_next: np.ndarray
    dq: np.ndarray
    dp: np.ndarray

    def __len__(self):
        return len(self.q)


def _rng(seed: int, j: int) -> np.random.Generator:
    # per-item stream: results do not depend on generation order
    return np.random.default_rng([seed, j])


def reference_orbit(system: SystemSpec, scheme: SamplingScheme, tau: float = 1e-3) -> np.ndarray:
    """States along the reference orbit of a gaussian_tube scheme, ``(ref_points, 2d)``.

    For the standard map the orbit is iterated on the torus (both coordinates
    reduced modulo 2pi) and ``ref_points`` iterates are kept.
    """
    x0 = np.asarray(scheme.ref_state, dtype=np.float64)
    if x0.shape != (2 * system.d,):
        raise ValueError(f"ref_state must have length {2 * system.d}")
    if system.discrete:
        return systems.standard_map_orbit(x0, system.K, scheme.ref_points - 1, wrap=True)
    n_fine = int(round(scheme.ref_time / tau))
    n_keep = max(1, scheme.ref_points - 1)
    every = max(1, n_fine // n_keep)
    traj = systems.reference_integrate(system, x0, tau, every * n_keep * tau,
                                       default_integrator(system), record_every=every)
    return traj.states


def default_integrator(system: SystemSpec) -> str:
    return "yoshida4" if system.separable else "rk4"


def sample_initial_conditions(system: SystemSpec, scheme: SamplingScheme, n: int, seed: int,
                              tau: float = 1e-3) -> np.ndarray:
    """``n`` initial states ``(n, 2d)``, deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d2 = 2 * system.d
    out = np.empty((n, d2))
    if scheme.tag == "orbital_box":
        if system.tag != "kepler2d":
            raise ValueError(f"orbital_box sampling only applies to kepler2d, not {system.tag}")
        elems = np.empty((n, 4))
        for j in range(n):
            rng = _rng(seed, j)
            elems[j] = [rng.uniform(*scheme.a_range), rng.uniform(*scheme.e_range),
                        rng.uniform(*scheme.anomaly_range), rng.uniform(*scheme.periapsis_range)]
        return systems.kepler_state(*elems.T)
    if scheme.tag == "uniform_box":
        for j in range(n):
            out[j] = _rng(seed, j).uniform(scheme.low, scheme.high, d2)
        return out
    ref = reference_orbit(system, scheme, tau)
    for j in range(n):
        rng = _rng(seed, j)
        out[j] = ref[rng.integers(len(ref))] + rng.normal(0.0, scheme.sigma, d2)
    return out


def generate_dataset(system: SystemSpec, scheme: SamplingScheme, h: float, seq_len: int,
                     n_sequences: int, seed: int, tau: float = 1e-3,
                     integrator: str | None = None) -> TrajectoryDataset:
    """Sequences of ``seq_len`` states spaced by ``h``, sampled stroboscopically from a
    fine reference integration (Hamiltonian systems) or iterated directly (standard map)."""
    if seq_len < 2:
        raise ValueError("seq_len must be >= 2")
    x0 = sample_initial_conditions(system, scheme, n_sequences, seed, tau)
    if system.discrete:
        if h != 1:
            raise ValueError("the standard map has a fixed step h = 1")
        seqs = systems.standard_map_orbit(x0, system.K, seq_len - 1)
    else:
        every = int(round(h / tau))
        if every < 1 or abs(every * tau - h) > 1e-12 * max(1.0, h):
            raise ValueError(f"h = {h} is not an integer multiple of tau = {tau}")
        scheme_name = integrator or default_integrator(system)
        try:
            seqs = systems.reference_integrate(system, x0, tau, (seq_len - 1) * h, scheme_name,
                                               record_every=every).states
        except DomainError as err:
            bad = _first_failing(system, x0, tau, (seq_len - 1) * h, scheme_name)
            raise DomainError(f"reference integration failed from initial condition #{bad} "
                              f"{x0[bad].tolist()}: {err}") from err
        if not np.isfinite(seqs).all():
            bad = int(np.flatnonzero(~np.isfinite(seqs).all(axis=(0, 2)))[0])
            raise DomainError(f"non-finite reference trajectory from initial condition #{bad} {x0[bad].tolist()}")
    return TrajectoryDataset(system, float(h), np.swapaxes(seqs, 0, 1), seed, scheme)


def _first_failing(system, x0, tau, T, scheme_name) -> int:
    for j, x in enumerate(x0):
        try:
            systems.reference_integrate(system, x, tau, T, scheme_name)
        except DomainError:
            return j
    return -1


def extract_pairs(ds: TrajectoryDataset) -> TrainingPairs:
    d = ds.d
    cur, nxt = ds.sequences[:, :-1].reshape(-1, 2 * d), ds.sequences[:, 1:].reshape(-1, 2 * d)
    return TrainingPairs(q=cur[:, d:].copy(), p_next=nxt[:, :d].copy(),
                         dq=nxt[:, d:] - cur[:, d:], dp=cur[:, :d] - nxt[:, :d])


def finite_difference_targets(ds: TrajectoryDataset):
    """States ``x_i`` and first-order velocity estimates ``(x_{i+1} - x_i) / h``."""
    n = 2 * ds.d
    cur = ds.sequences[:, :-1].reshape(-1, n)
    nxt = ds.sequences[:, 1:].reshape(-1, n)
    return cur.copy(), (nxt - cur) / ds.h


# --- files ---------------------------------------------------------------------


def dataset_header(ds: TrajectoryDataset) -> dict:
    return {
        "format": "gfnn-dataset",
        "schema_version": 1,
        "system": ds.system.tag,
        "params": ds.system.params(),
        "h": ds.h,
        "d": ds.d,
        "scheme": ds.scheme.to_dict() if ds.scheme is not None else None,
        "seed": ds.seed,
        "n_sequences": ds.n_sequences,
        "seq_len": ds.seq_len,
        "meta": ds.meta,
    }


def _rows(ds: TrajectoryDataset) -> np.ndarray:
    M, L, n = ds.sequences.shape
    d = n // 2
    rows = np.empty((M * L, 2 + n))
    rows[:, 0] = np.repeat(np.arange(M), L)
    rows[:, 1] = np.tile(np.arange(L), M)
    flat = ds.sequences.reshape(-1, n)
    rows[:, 2:2 + d] = flat[:, d:]
    rows[:, 2 + d:] = flat[:, :d]
    return rows


def _from_rows(header: dict, rows: np.ndarray) -> TrajectoryDataset:
    system = SystemSpec(header["system"], **header.get("params", {}))
    d = header["d"]
    M, L = header["n_sequences"], header["seq_len"]
    rows = rows.reshape(-1, 2 + 2 * d)
    if len(rows) != M * L:
        raise ValueError(f"expected {M * L} rows, found {len(rows)}")
    order = np.lexsort((rows[:, 1], rows[:, 0]))
    rows = rows[order]
    seqs = np.concatenate([rows[:, 2 + d:], rows[:, 2:2 + d]], axis=1).reshape(M, L, 2 * d)
    scheme = SamplingScheme.from_dict(header["scheme"]) if header.get("scheme") else None
    return TrajectoryDataset(system, header["h"], seqs, header["seed"], scheme, header.get("meta", {}))


def column_names(d: int) -> list[str]:
    return ["seq_id", "step_index"] + [f"q_{i + 1}" for i in range(d)] + [f"p_{i + 1}" for i in range(d)]


def write_csv(ds: TrajectoryDataset, path) -> None:
    buf = io.StringIO()
    buf.write("# " + json.dumps(dataset_header(ds)) + "\n")
    buf.write(",".join(column_names(ds.d)) + "\n")
    fmt = ["%d", "%d"] + ["%.17g"] * (2 * ds.d)
    np.savetxt(buf, _rows(ds), fmt=fmt, delimiter=",")
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> TrajectoryDataset:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing dataset header line")
        header = json.loads(first[2:])
        fh.readline()
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    return _from_rows(header, rows)


def write_binary(ds: TrajectoryDataset, path) -> None:
    head = json.dumps(dataset_header(ds)).encode()
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(_rows(ds).astype("<f8").tobytes())


def read_binary(path) -> TrajectoryDataset:
    raw = Path(path).read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise ValueError(f"{path}: not a gfnn binary dataset")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode())
    rows = np.frombuffer(raw[16 + n:], dtype="<f8").astype(np.float64)
    return _from_rows(header, rows)


def read_dataset(path) -> TrajectoryDataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
    return read_binary(path) if magic == BINARY_MAGIC else read_csv(path)
