"""Pulse-level simulation of W-state preparation in an ion string.

The register is N qubits plus the centre-of-mass Fock mode, stored as a
:class:`~iontomo.hilbert.PureState` with dims ``[2]*N + [n_max + 1]`` (the
Fock mode is the most significant subsystem). Ion ``k`` (1-based) is
subsystem ``k - 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from .hilbert import DensityMatrix, PureState, SIGMA_X, SIGMA_Y, SIGMA_Z

log = logging.getLogger(__name__)

TRUNCATION_ATOL = 1e-6
DEFAULT_N_MAX = 2
DEFAULT_TRIALS = 200


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PulseOp:
    kind: Literal["carrier", "blue"]
    ion: int
    theta: float
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("carrier", "blue"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.theta < 0:
            raise ValueError("pulse area must be non-negative")
        if self.ion < 1:
            raise ValueError("ion numbers start at 1")


@dataclass(frozen=True)
class NoiseConfig:
    """Imperfection parameters; the all-zero default is the ideal sequence.

    The off-resonant carrier channel is active only when ``trap_frequency``
    and ``sideband_2pi_time`` are both positive.
    """

    addressing_ratio: float = 0.0
    trap_frequency: float = 0.0  # Hz
    sideband_2pi_time: float = 0.0  # s, 2π on the n=0 <-> 1 blue sideband
    frequency_noise_rms: float = 0.0  # Hz
    pumping_error_per_ion: float = 0.0
    lamb_dicke: float = 0.05
    herald: Optional[bool] = None  # None: check initialization for N >= 6

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.addressing_ratio >= 1:
            raise ValueError("addressing_ratio must be < 1")
        if self.pumping_error_per_ion > 1:
            raise ValueError("pumping_error_per_ion is a probability")
        if self.lamb_dicke <= 0:
            raise ValueError("lamb_dicke must be positive")

    @property
    def off_resonant(self) -> bool:
        return self.trap_frequency > 0 and self.sideband_2pi_time > 0


@dataclass(frozen=True)
class PreparationConfig:
    """Contents of a key = value preparation config file."""

    n: int
    n_max: int = DEFAULT_N_MAX
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    trials: int = DEFAULT_TRIALS
    seed: int = 0


_NOISE_KEYS = {
    "addressing_ratio": "addressing_ratio",
    "trap_frequency_hz": "trap_frequency",
    "sideband_2pi_time_s": "sideband_2pi_time",
    "frequency_noise_rms_hz": "frequency_noise_rms",
    "pumping_error_per_ion": "pumping_error_per_ion",
    "lamb_dicke": "lamb_dicke",
}


def parse_config(text: str) -> PreparationConfig:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    known = set(_NOISE_KEYS) | {"n", "n_max", "trials", "seed", "herald"}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "n" not in values:
        raise ValueError("config must define n")
    noise_kw = {attr: float(values[key]) for key, attr in _NOISE_KEYS.items() if key in values}
    if "herald" in values:
        noise_kw["herald"] = values["herald"].lower() in ("1", "true", "yes")
    return PreparationConfig(
        n=int(values["n"]),
        n_max=int(values.get("n_max", DEFAULT_N_MAX)),
        noise=NoiseConfig(**noise_kw),
        trials=int(values.get("trials", DEFAULT_TRIALS)),
        seed=int(values.get("seed", 0)),
    )


def load_config(path: str | Path) -> PreparationConfig:
    return parse_config(Path(path).read_text())


# -- states ---------------------------------------------------------------


def w_state(n: int) -> PureState:
    """Equal superposition of the ``n`` single-excitation basis states."""
    if not 1 <= n <= 12:
        raise ValueError(f"w_state supports 1 <= n <= 12, got {n}")
    amps = np.zeros(2**n, dtype=complex)
    amps[[1 << k for k in range(n)]] = 1 / math.sqrt(n)
    return PureState(amps, (2,) * n)


def joint_basis_state(labels: str, fock: int = 0, n_max: int = DEFAULT_N_MAX) -> PureState:
    """``|fock, x_N ... x_1>`` in the joint qubit ⊗ motion space."""
    n = len(labels)
    if not 0 <= fock <= n_max:
        raise ValueError("Fock level outside truncation")
    index = 0
    for k, ch in enumerate(reversed(labels.upper())):
        if ch not in "DS":
            raise ValueError(f"invalid qubit label {ch!r}")
        index |= (ch == "S") << k
    amps = np.zeros(2**n * (n_max + 1), dtype=complex)
    amps[fock * 2**n + index] = 1.0
    return PureState(amps, (2,) * n + (n_max + 1,))


def _split(state: PureState) -> tuple[int, int]:
    n = len(state.dims) - 1
    if n < 1 or any(d != 2 for d in state.dims[:-1]):
        raise ValueError("expected dims [2]*N + [n_max+1]")
    return n, state.dims[-1]


def _tensor(state: PureState) -> np.ndarray:
    return state.amplitudes.reshape(state.dims[::-1])


def _check_ion(n: int, ion: int) -> int:
    if not 1 <= ion <= n:
        raise IndexError(f"ion {ion} out of range 1..{n}")
    return n - ion + 1  # numpy axis of that qubit (axis 0 is the Fock mode)


def rotation(theta: float, phase: float) -> np.ndarray:
    """exp(-i θ/2 (cos φ σx + sin φ σy)) on the (|D>, |S>) basis."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), c]])


def detuned_rotation(theta: float, phase: float, detuning_ratio: float) -> np.ndarray:
    """Off-resonant two-level propagator, Δ = detuning_ratio · Ω and θ = Ω·t.

    Returned in the qubit frame with the mean light shift removed (assumed
    compensated), leaving the population transfer (Ω/Ω')² sin²(Ω't/2).
    """
    h = math.cos(phase) * SIGMA_X + math.sin(phase) * SIGMA_Y - detuning_ratio * SIGMA_Z
    w = math.sqrt(1 + detuning_ratio**2)
    # exp(-i θ/2 h) with h² = w² 1
    u = math.cos(theta * w / 2) * np.eye(2) - 1j * math.sin(theta * w / 2) / w * h
    shift = theta * w / 2
    return np.diag([np.exp(-1j * shift), np.exp(1j * shift)]) @ u


def _apply_qubit_unitary(state: PureState, ion: int, u: np.ndarray) -> PureState:
    n, _ = _split(state)
    ax = _check_ion(n, ion)
    t = np.moveaxis(np.tensordot(u, _tensor(state), axes=([1], [ax])), 0, ax)
    return PureState(t.reshape(-1), state.dims)


def carrier_pulse(state: PureState, ion: int, theta: float, phase: float = 0.0) -> PureState:
    return _apply_qubit_unitary(state, ion, rotation(theta, phase))


def blue_sideband_pulse(state: PureState, ion: int, theta: float, phase: float = 0.0) -> PureState:
    """Couple ``|S, m>`` with ``|D, m+1>``; the Rabi angle scales as √(m+1).

    ``theta`` is the pulse area on the m = 0 <-> 1 manifold.
    """
    n, levels = _split(state)
    ax = _check_ion(n, ion)
    t = np.moveaxis(_tensor(state), ax, 1).copy()  # (fock, qubit, rest...)
    top = t[levels - 1, 1]
    leak = float(np.vdot(top, top).real) * math.sin(theta * math.sqrt(levels) / 2) ** 2
    if leak > TRUNCATION_ATOL:
        raise TruncationError(f"sideband pulse leaks {leak:.2e} beyond Fock {levels - 1}; increase n_max")
    for m in range(levels - 1):
        u = rotation(theta * math.sqrt(m + 1), phase)
        d_up, s_lo = t[m + 1, 0].copy(), t[m, 1].copy()
        t[m + 1, 0] = u[0, 0] * d_up + u[0, 1] * s_lo
        t[m, 1] = u[1, 0] * d_up + u[1, 1] * s_lo
    return PureState(np.moveaxis(t, 1, ax).reshape(-1), state.dims)


def apply_pulse(state: PureState, op: PulseOp) -> PureState:
    if op.kind == "carrier":
        return carrier_pulse(state, op.ion, op.theta, op.phase)
    return blue_sideband_pulse(state, op.ion, op.theta, op.phase)


# -- the preparation sequence -----------------------------------------------


def initialization_pulses(n: int) -> tuple[list[PulseOp], list[PulseOp]]:
    """Steps i1 (carrier π on every ion) and i2 (blue π on ion 1)."""
    return [PulseOp("carrier", k, math.pi) for k in range(1, n + 1)], [PulseOp("blue", 1, math.pi)]


def w_pulses(n: int) -> list[PulseOp]:
    """Step i3 and the N sideband splitting pulses.

    The splitting pulses after the first run at phase π so that every branch
    ends with the same sign and the output is |W_N> without further local
    phase corrections.
    """
    ops = [PulseOp("carrier", n, math.pi), PulseOp("blue", n, 2 * math.acos(1 / math.sqrt(n)))]
    for j, ion in enumerate(range(n - 1, 0, -1)):
        ops.append(PulseOp("blue", ion, 2 * math.asin(1 / math.sqrt(n - 1 - j)), math.pi))
    return ops


def total_sideband_pulse_area(n: int) -> float:
    if n < 2:
        raise ValueError("need at least two ions")
    return 2 * math.acos(1 / math.sqrt(n)) + sum(2 * math.asin(1 / math.sqrt(k)) for k in range(1, n))


def prepare_w_sequence(n: int, n_max: int = DEFAULT_N_MAX, *, stop_after: Optional[int] = None) -> PureState:
    """Run the noiseless sequence from ``|0, S...S>``.

    ``stop_after`` returns the intermediate state after sideband step
    ``stop_after`` (1-based) instead of the final one.
    """
    if n < 2:
        raise ValueError("the sequence needs n >= 2")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if n > 8:
        log.warning("prepare_w_sequence(n=%d) is outside the tested range 2..8", n)
    i1, i2 = initialization_pulses(n)
    main = w_pulses(n)
    if stop_after is not None:
        main = main[: 1 + stop_after]
    state = joint_basis_state("S" * n, 0, n_max)
    for op in i1 + i2 + main:
        state = apply_pulse(state, op)
    return state


def herald_initialization(
    state: PureState, pumping_error_per_ion: float, seed: int | np.random.Generator | None = None
) -> tuple[bool, PureState]:
    """Fluorescence checks on the register before step i3.

    Acceptance requires every ion to have been pumped (probability
    ``(1-p)^N``) and the register to be found dark in ``|0, D...D>``; an
    accepted state is projected onto that outcome.
    """
    rng = np.random.default_rng(seed)
    n, levels = _split(state)
    pumped = rng.random(n) >= pumping_error_per_ion
    target = joint_basis_state("D" * n, 0, levels - 1)
    overlap = np.vdot(target.amplitudes, state.amplitudes)
    dark = rng.random() < abs(overlap) ** 2
    if not (pumped.all() and dark):
        return False, state
    return True, PureState(target.amplitudes * overlap / abs(overlap), state.dims)


def trace_out_motion(state: PureState) -> DensityMatrix:
    n, levels = _split(state)
    a = state.amplitudes.reshape(levels, 2**n)
    return DensityMatrix(a.T @ a.conj(), (2,) * n)


# -- noisy trajectories -------------------------------------------------------


def _neighbors(n: int, ion: int) -> list[int]:
    return [k for k in (ion - 1, ion + 1) if 1 <= k <= n]


def _noisy_pulse(state: PureState, op: PulseOp, noise: NoiseConfig, phase_offset: float) -> PureState:
    n, _ = _split(state)
    phase = op.phase + phase_offset
    state = apply_pulse(state, PulseOp(op.kind, op.ion, op.theta, phase))
    if op.kind == "blue" and noise.off_resonant and op.theta > 0:
        # carrier driven η^-1 times harder, detuned by one trap frequency
        omega_s = 2 * math.pi / noise.sideband_2pi_time
        omega_c = omega_s / noise.lamb_dicke
        carrier_area = op.theta / noise.lamb_dicke
        ratio = 2 * math.pi * noise.trap_frequency / omega_c
        state = _apply_qubit_unitary(state, op.ion, detuned_rotation(carrier_area, phase, ratio))
    if noise.addressing_ratio > 0:
        for k in _neighbors(n, op.ion):
            state = apply_pulse(state, PulseOp(op.kind, k, op.theta * noise.addressing_ratio, phase))
    return state


def _pulse_duration(op: PulseOp, noise: NoiseConfig) -> float:
    if noise.sideband_2pi_time <= 0:
        return 0.0
    omega_s = 2 * math.pi / noise.sideband_2pi_time
    omega = omega_s if op.kind == "blue" else omega_s / noise.lamb_dicke
    return op.theta / omega


def _trajectory(n: int, n_max: int, noise: NoiseConfig, rng: np.random.Generator) -> PureState:
    herald = noise.herald if noise.herald is not None else n >= 6
    i1, i2 = initialization_pulses(n)
    delta = rng.normal(0.0, 2 * math.pi * noise.frequency_noise_rms) if noise.frequency_noise_rms > 0 else 0.0
    for _ in range(10_000):
        # an unpumped ion starts in the wrong qubit state
        failed = rng.random(n) < noise.pumping_error_per_ion if not herald else np.zeros(n, bool)
        labels = "".join("D" if failed[k - 1] else "S" for k in range(n, 0, -1))
        state = joint_basis_state(labels, 0, n_max)
        clock = 0.0
        for op in i1 + i2:
            state = _noisy_pulse(state, op, noise, delta * clock)
            clock += _pulse_duration(op, noise)
        if not herald:
            break
        accepted, state = herald_initialization(state, noise.pumping_error_per_ion, rng)
        if accepted:
            break
    else:
        raise RuntimeError("initialization never accepted; pumping error too large")
    for op in w_pulses(n):
        state = _noisy_pulse(state, op, noise, delta * clock)
        clock += _pulse_duration(op, noise)
    return state


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial)])


def simulate_noisy_preparation(
    n: int,
    noise: NoiseConfig,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    n_max: Optional[int] = None,
) -> DensityMatrix:
    """Average ``trials`` noisy trajectories into a qubit density matrix.

    Trial ``t`` draws from ``default_rng([seed, t])``, so the result does not
    depend on execution order. Imperfect pulses push stray population up the
    Fock ladder, so ``n_max`` defaults to ``n`` rather than the ideal-case 2.
    """
    n_max = n if n_max is None else n_max
    if trials < 1:
        raise ValueError("trials must be >= 1")
    amps = np.stack([_trajectory(n, n_max, noise, trial_rng(seed, t)).amplitudes for t in range(trials)])
    a = amps.reshape(trials, n_max + 1, 2**n)
    rho = np.einsum("tfi,tfj->ij", a, a.conj()) / trials
    rho = (rho + rho.conj().T) / 2
    return DensityMatrix(rho, (2,) * n)
