"""Pauli-basis tomography: settings, shot sampling and RρR reconstruction.

Settings are strings of axis labels with qubit 1 leftmost (``"ZX"`` measures
qubit 1 along Z and qubit 2 along X). Outcome indices put qubit 1 in the
least significant bit, with bit value 1 for a fluorescing ion (``|S>``).
Settings are enumerated with Z < X < Y and qubit 1 varying fastest, so the
setting index is ``sum(axis_k * 3**(k-1))``.

All probabilities for the 3^N x 2^N (setting, outcome) pairs are computed
at once by contracting a 6x4 single-qubit map into every qubit of the density
tensor; the projectors themselves are never materialized.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .hilbert import DensityMatrix, FormatError
from .ionsim import rotation

log = logging.getLogger(__name__)

AXES = "ZXY"
PROBABILITY_FLOOR = 1e-12


def enumerate_bases(n: int) -> list[str]:
    if n < 1:
        raise ValueError("need at least one qubit")
    # product() varies the last position fastest; reverse so qubit 1 is fastest
    return ["".join(reversed(p)) for p in itertools.product(AXES, repeat=n)]


def setting_index(setting: str) -> int:
    return sum(AXES.index(a) * 3**k for k, a in enumerate(setting))


_ROTATIONS = {
    "Z": np.eye(2, dtype=complex),
    # both map the +1 eigenstate of the requested axis onto |D>
    "X": rotation(math.pi / 2, -math.pi / 2),
    "Y": rotation(math.pi / 2, 0.0),
}


def setting_rotation(setting: str) -> list[np.ndarray]:
    """Per-qubit analysis pulses, qubit 1 first."""
    try:
        return [_ROTATIONS[a] for a in setting.upper()]
    except KeyError as exc:
        raise ValueError(f"invalid axis label {exc.args[0]!r}") from None


def _effects() -> np.ndarray:
    """Single-qubit effects E[axis, outcome] = U† |o><o| U, shape (3, 2, 2, 2)."""
    e = np.empty((3, 2, 2, 2), dtype=complex)
    for a, label in enumerate(AXES):
        u = _ROTATIONS[label]
        for o in range(2):
            e[a, o] = np.outer(u[o].conj(), u[o])
    return e


_EFFECTS = _effects()
# p[(a,o)] = Σ_{r,c} E[a,o][c,r] ρ[r,c]  and  R[r,c] = Σ_{a,o} w[a,o] E[a,o][r,c]
_FORWARD = np.transpose(_EFFECTS, (0, 1, 3, 2)).reshape(6, 4)
_ADJOINT = _EFFECTS.reshape(6, 4).T.copy()


def _contract_each_axis(t: np.ndarray, m: np.ndarray, n: int) -> np.ndarray:
    # each tensordot consumes axis 0 and appends the new one, so n passes
    # restore the original axis order
    for _ in range(n):
        t = np.tensordot(t, m, axes=([0], [1]))
    return t


def all_probabilities(rho: np.ndarray, n: int) -> np.ndarray:
    """Outcome probabilities for every setting, shape (3^n, 2^n)."""
    # (row bits MSB..LSB, col bits MSB..LSB) -> interleaved (r, c) pairs per qubit
    t = rho.reshape((2,) * (2 * n))
    t = t.transpose([i for q in range(n) for i in (q, n + q)]).reshape((4,) * n)
    t = _contract_each_axis(t, _FORWARD, n)
    t = t.reshape((3, 2) * n).transpose(list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)))
    return t.reshape(3**n, 2**n).real


def weighted_effect_sum(weights: np.ndarray, n: int) -> np.ndarray:
    """Σ_j w_j Π_j over all (setting, outcome) pairs as a 2^n x 2^n matrix."""
    t = np.asarray(weights, dtype=complex).reshape((3,) * n + (2,) * n)
    t = t.transpose([i for q in range(n) for i in (q, n + q)]).reshape((6,) * n)
    t = _contract_each_axis(t, _ADJOINT, n)
    t = t.reshape((2, 2) * n).transpose(list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)))
    return t.reshape(2**n, 2**n)


def _qubit_count(rho: DensityMatrix) -> int:
    if any(d != 2 for d in rho.dims):
        raise ValueError("tomography needs an all-qubit density matrix")
    return len(rho.dims)


def born_probabilities(rho: DensityMatrix, setting: str) -> np.ndarray:
    n = _qubit_count(rho)
    if len(setting) != n:
        raise ValueError(f"setting {setting!r} does not have {n} axes")
    # rotate qubit by qubit: U = U_N ⊗ ... ⊗ U_1
    u = np.ones((1, 1), dtype=complex)
    for r in setting_rotation(setting):
        u = np.kron(r, u)
    p = np.einsum("ij,jk,ik->i", u, rho.entries, u.conj()).real
    return np.clip(p, 0.0, None)


# -- datasets ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountRecord:
    setting: str
    counts: np.ndarray


@dataclass(eq=False)
class TomographyDataset:
    """Counts for all 3^n settings, rows in :func:`enumerate_bases` order.

    ``counts`` is integer for sampled data and float for the exact-statistics
    variant built by :func:`expected_dataset`.
    """

    n: int
    shots: int
    counts: np.ndarray
    settings: list[str] = field(init=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.settings = enumerate_bases(self.n)
        if self.counts.shape != (3**self.n, 2**self.n):
            raise ValueError(f"counts must have shape {(3**self.n, 2**self.n)}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("negative counts")
        totals = self.counts.sum(axis=1)
        if not np.allclose(totals, self.shots, rtol=1e-9, atol=0):
            raise ValueError("every setting must hold the same number of shots")

    @property
    def records(self) -> list[CountRecord]:
        return [CountRecord(s, c) for s, c in zip(self.settings, self.counts)]

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @classmethod
    def from_records(cls, n: int, shots: int, records: Sequence[CountRecord]) -> "TomographyDataset":
        counts = np.zeros((3**n, 2**n), dtype=np.asarray(records[0].counts).dtype if records else np.int64)
        seen = set()
        for rec in records:
            idx = setting_index(rec.setting)
            if idx in seen:
                raise ValueError(f"duplicate setting {rec.setting}")
            seen.add(idx)
            counts[idx] = rec.counts
        if len(seen) != 3**n:
            raise ValueError(f"expected {3**n} settings, got {len(seen)}")
        return cls(n, shots, counts)


def sample_counts(rho: DensityMatrix, setting: str, shots: int, seed=None) -> CountRecord:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = born_probabilities(rho, setting)
    rng = np.random.default_rng(seed)
    return CountRecord(setting, rng.multinomial(shots, p / p.sum()))


def sample_dataset(rho: DensityMatrix, shots: int, seed=None) -> TomographyDataset:
    """One multinomial draw of ``shots`` per setting."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    n = _qubit_count(rho)
    p = np.clip(all_probabilities(rho.entries, n), 0.0, None)
    p /= p.sum(axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    return TomographyDataset(n, shots, rng.multinomial(shots, p))


def expected_dataset(rho: DensityMatrix, shots: int) -> TomographyDataset:
    n = _qubit_count(rho)
    p = np.clip(all_probabilities(rho.entries, n), 0.0, None)
    p /= p.sum(axis=1, keepdims=True)
    return TomographyDataset(n, shots, shots * p)


def format_dataset(ds: TomographyDataset) -> str:
    is_int = np.issubdtype(ds.counts.dtype, np.integer)
    lines = [f"n {ds.n} shots {ds.shots}"]
    for setting, row in zip(ds.settings, ds.counts):
        vals = " ".join(str(int(c)) for c in row) if is_int else " ".join(repr(float(c)) for c in row)
        lines.append(f"{setting} {vals}")
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> TomographyDataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[0] != "n" or head[2] != "shots":
        raise FormatError("line 1: expected header 'n <N> shots <S>'")
    n, shots = int(head[1]), int(head[3])
    records = []
    for i, ln in enumerate(lines[1:], start=2):
        toks = ln.split()
        if len(toks) != 2**n + 1 or len(toks[0]) != n or set(toks[0]) - set(AXES):
            raise FormatError(f"line {i}: expected a setting and {2**n} counts")
        try:
            vals = [int(t) for t in toks[1:]]
        except ValueError:
            try:
                vals = [float(t) for t in toks[1:]]
            except ValueError:
                raise FormatError(f"line {i}: non-numeric count") from None
        records.append(CountRecord(toks[0], np.array(vals)))
    if records and any(r.counts.dtype != records[0].counts.dtype for r in records):
        records = [CountRecord(r.setting, r.counts.astype(float)) for r in records]
    try:
        return TomographyDataset.from_records(n, shots, records)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_dataset(path: str | Path, ds: TomographyDataset) -> None:
    Path(path).write_text(format_dataset(ds))


def read_dataset(path: str | Path) -> TomographyDataset:
    return parse_dataset(Path(path).read_text())


# -- maximum likelihood ---------------------------------------------------------


@dataclass(frozen=True)
class MLEConfig:
    max_iterations: int = 5000
    loglik_tolerance: float = 1e-10
    dilution: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 1 or self.loglik_tolerance <= 0:
            raise ValueError("max_iterations and loglik_tolerance must be positive")
        if not 0 < self.dilution <= 1:
            raise ValueError("dilution must lie in (0, 1]")


@dataclass
class MLEResult:
    rho: DensityMatrix
    iterations: int
    loglik_history: list[float]
    fallbacks: int
    converged: bool

    @property
    def loglik(self) -> float:
        return self.loglik_history[-1]


def log_likelihood(rho: DensityMatrix | np.ndarray, dataset: TomographyDataset) -> float:
    m = getattr(rho, "entries", rho)
    p = all_probabilities(np.asarray(m), dataset.n)
    return float(np.sum(dataset.counts * np.log(np.maximum(p, PROBABILITY_FLOOR))))


def _loglik(p: np.ndarray, counts: np.ndarray) -> float:
    return float(np.sum(counts * np.log(np.maximum(p, PROBABILITY_FLOOR))))


def rrhor_step(rho: np.ndarray, dataset: TomographyDataset, dilution: float = 1.0) -> np.ndarray:
    """One (diluted) RρR update, renormalized to unit trace."""
    p = all_probabilities(rho, dataset.n)
    return _step(rho, p, dataset.frequencies, dataset.n, dilution)


def _step(rho: np.ndarray, p: np.ndarray, freqs: np.ndarray, n: int, dilution: float) -> np.ndarray:
    r = weighted_effect_sum(freqs / np.maximum(p, PROBABILITY_FLOOR), n)
    r = (r + r.conj().T) / 2
    if dilution != 1.0:
        r = (1 - dilution) * np.eye(r.shape[0]) + dilution * r
    new = r @ rho @ r
    new = (new + new.conj().T) / 2
    return new / np.trace(new).real


def mle_reconstruct(
    dataset: TomographyDataset,
    config: MLEConfig = MLEConfig(),
    callback: Optional[Callable[[int, float], None]] = None,
) -> MLEResult:
    """Iterative maximum-likelihood estimate starting from the maximally mixed state.

    A step that lowers the log-likelihood is rejected and the dilution is
    halved (counted in ``fallbacks``), unless the drop is at rounding level,
    which ends the iteration. Otherwise iteration stops once the accepted
    improvement drops below ``config.loglik_tolerance``.
    """
    n = dataset.n
    d = 2**n
    freqs = dataset.frequencies
    counts = dataset.counts
    rho = np.eye(d, dtype=complex) / d
    p = all_probabilities(rho, n)
    history = [_loglik(p, counts)]
    dilution = config.dilution
    fallbacks = 0
    converged = False
    it = 0
    while it < config.max_iterations:
        it += 1
        candidate = _step(rho, p, freqs, n, dilution)
        p_new = all_probabilities(candidate, n)
        ll = _loglik(p_new, counts)
        gain = ll - history[-1]
        if gain < 0 and -gain <= 1e-12 * max(1.0, abs(history[-1])):
            # a drop at rounding level: the maximum is reached
            converged = True
            break
        if gain < 0:
            fallbacks += 1
            dilution /= 2
            log.debug("log-likelihood fell by %.3e at iteration %d; dilution -> %g", -gain, it, dilution)
            if dilution < 1e-6:
                break
            continue
        rho, p = candidate, p_new
        history.append(ll)
        if callback is not None:
            callback(it, ll)
        if gain < config.loglik_tolerance:
            converged = True
            break
    rho = (rho + rho.conj().T) / 2
    return MLEResult(DensityMatrix(rho / np.trace(rho).real, (2,) * n), it, history, fallbacks, converged)


# -- Monte Carlo error propagation ---------------------------------------------------


@dataclass(frozen=True)
class QuantityDistribution:
    mean: float
    std: float
    samples: np.ndarray


def monte_carlo_resample(
    rho: DensityMatrix,
    shots: int,
    trials: int,
    seed: int,
    analyses: Mapping[str, Callable[[DensityMatrix], float]],
    config: MLEConfig = MLEConfig(),
) -> dict[str, QuantityDistribution]:
    """Resample full datasets from ``rho``, reconstruct each, evaluate ``analyses``.

    Trial ``t`` samples with ``default_rng([seed, t])``; the standard
    deviation uses ``ddof=1``.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    values = {name: np.empty(trials) for name in analyses}
    for t in range(trials):
        ds = sample_dataset(rho, shots, np.random.default_rng([int(seed), t]))
        est = mle_reconstruct(ds, config).rho
        for name, fn in analyses.items():
            values[name][t] = fn(est)
    return {
        name: QuantityDistribution(float(v.mean()), float(v.std(ddof=1)), v) for name, v in values.items()
    }
