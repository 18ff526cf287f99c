"""Entanglement analysis of N-qubit states near |W_N>.

Qubit indices in this module are 0-based subsystem indices (0 is qubit 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .hilbert import (
    DensityMatrix,
    HermitianOperator,
    PureState,
    SIGMA_Y,
    apply_local_operator,
    fidelity_pure,
    partial_trace,
)
from .ionsim import w_state

# alpha, beta, gamma for the advanced witness at each register size
PUBLISHED_WITNESS_PARAMETERS = {
    3: (10.0, 2.98, 2.2598),
    4: (10.0, 2.87, 0.8316),
    5: (10.0, 2.35, 0.3760),
    6: (10.0, 1.94, 0.1937),
    7: (10.0, 1.638, 0.1139),
    8: (10.0, 1.4125, 0.0764),
}

GAMMA_CONSISTENCY_ATOL = 1e-3


class OptimizationError(RuntimeError):
    def __init__(self, message: str, partial: float):
        super().__init__(message)
        self.partial = partial


def _qubits(rho: HermitianOperator) -> int:
    if any(d != 2 for d in rho.dims):
        raise ValueError("expected an all-qubit operator")
    return len(rho.dims)


def _single_excitation_indices(n: int) -> np.ndarray:
    return np.array([1 << k for k in range(n)])


# -- fidelity with local phase freedom --------------------------------------------


def apply_local_phases(rho: DensityMatrix, phases) -> DensityMatrix:
    """Conjugate ``rho`` by diag(1, e^{iφ_k}) on every qubit k."""
    n = _qubits(rho)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (n,):
        raise ValueError(f"need {n} phases")
    # diagonal in the computational basis: phase of index i is Σ_k bit_k(i) φ_k
    bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    diag = np.exp(1j * (bits @ phases))
    return DensityMatrix(diag[:, None] * rho.entries * diag.conj()[None, :], rho.dims)


def optimize_local_phases(rho: DensityMatrix, max_sweeps: int = 1000) -> tuple[np.ndarray, float]:
    """Phases φ_k maximizing ``<W_N| Φ ρ Φ† |W_N>`` with Φ = ⊗ diag(1, e^{iφ_k}).

    Only the single-excitation block B of ρ matters: the objective is
    u† B u / N with u_k = e^{-iφ_k}. Start from the phases of B's leading
    eigenvector, then coordinate ascent (u_k <- Σ_{l≠k} B_kl u_l normalized)
    until no coordinate moves. Phases are reported relative to qubit 1.
    """
    n = _qubits(rho)
    idx = _single_excitation_indices(n)
    block = rho.entries[np.ix_(idx, idx)]

    def value(u):
        return float(np.vdot(u, block @ u).real) / n

    _, vecs = np.linalg.eigh(block)
    lead = vecs[:, -1]
    u = np.where(np.abs(lead) > 1e-15, lead / np.maximum(np.abs(lead), 1e-300), 1.0)
    for _ in range(max_sweeps):
        moved = 0.0
        for k in range(n):
            s = block[k] @ u - block[k, k] * u[k]
            if abs(s) > 1e-300:
                new = s / abs(s)
                moved = max(moved, abs(new - u[k]))
                u[k] = new
        if moved < 1e-13:
            break
    ones = np.ones(n, dtype=complex)
    if value(ones) >= value(u):
        u = ones
    u = u * (abs(u[0]) / u[0])
    phases = -np.angle(u)
    phases[np.abs(phases) < 1e-15] = 0.0
    return phases, value(u)


def simple_witness_value(rho: DensityMatrix) -> float:
    """(N-1)/N - F for the fidelity with |W_N> (phases assumed adjusted)."""
    n = _qubits(rho)
    return (n - 1) / n - fidelity_pure(rho, w_state(n))


# -- advanced witness -------------------------------------------------------------


def build_bs_states(n: int) -> list[PureState]:
    """|D> on qubit i, |W_{n-1}> on the others, for i = 0..n-1."""
    if n < 3:
        raise ValueError("BS states need n >= 3")
    states = []
    for i in range(n):
        amps = np.zeros(2**n, dtype=complex)
        amps[[1 << k for k in range(n) if k != i]] = 1 / math.sqrt(n - 1)
        states.append(PureState(amps, (2,) * n))
    return states


def _product_value(params, n: int, k: int, alpha: float, beta: float) -> float:
    """<Q> on (a0|D..D> + b Σ singles)_K ⊗ (c0|D..D> + d Σ singles)_{n-K}.

    Q lives on the single-excitation sector, where the product state has
    amplitude x = b·c0 on each of the K qubits and y = a0·d on the others.
    """
    s, t = params
    m = n - k
    x = math.sin(s) / math.sqrt(k) * math.cos(t)
    y = math.cos(s) * math.sin(t) / math.sqrt(m)
    total = k * x + m * y
    overlap_w = total * total / n
    overlap_bs = ((n - 2) * total * total + k * x * x + m * y * y) / (n - 1)
    return alpha * overlap_w - beta * overlap_bs


def gamma_biseparable(n: int, alpha: float, beta: float, grid: int = 50, max_iter: int = 2000) -> float:
    """Largest ``<ψ|Q|ψ>`` over product states across any bipartition.

    Each factor is restricted to a real |D...D> component plus an equal
    single-excitation layer, one angle per factor after normalization. A
    ``grid`` x ``grid`` scan seeds a Nelder-Mead refinement for every
    partition size K = 1..n//2.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    axis = np.linspace(-math.pi, math.pi, grid, endpoint=False)
    best = -math.inf
    for k in range(1, n // 2 + 1):
        vals = np.array([[_product_value((s, t), n, k, alpha, beta) for t in axis] for s in axis])
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        best = max(best, float(vals[i, j]))
        res = minimize(
            lambda p: -_product_value(p, n, k, alpha, beta),
            x0=[axis[i], axis[j]],
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": max_iter},
        )
        if not res.success:
            raise OptimizationError(f"refinement for K={k} did not converge: {res.message}", best)
        best = max(best, -float(res.fun))
    return best


def low_excitation_projector(n: int, max_excitations: int = 2) -> np.ndarray:
    """Diagonal of the projector onto basis states with at most that many |S>."""
    weights = np.array([bin(i).count("1") for i in range(2**n)])
    return (weights <= max_excitations).astype(float)


@dataclass(frozen=True)
class WitnessSpec:
    n: int
    alpha: float
    beta: float
    gamma: float
    normalization: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.gamma < 0:
            raise ValueError("need alpha > 0, beta > 0, gamma >= 0")

    @classmethod
    def build(cls, n: int, alpha: float, beta: float, gamma: Optional[float] = None) -> "WitnessSpec":
        """Fill in γ (if missing) and the maximally-mixed normalization."""
        if gamma is None:
            gamma = gamma_biseparable(n, alpha, beta)
        dim_low = low_excitation_projector(n).sum()
        trace = gamma * dim_low - (alpha - beta * n)
        if trace <= 0:
            raise ValueError("witness has non-positive trace; cannot normalize")
        return cls(n, alpha, beta, gamma, 2**n / trace)

    @classmethod
    def published(cls, n: int) -> "WitnessSpec":
        if n not in PUBLISHED_WITNESS_PARAMETERS:
            raise ValueError(f"no published witness parameters for n={n}")
        return cls.build(n, *PUBLISHED_WITNESS_PARAMETERS[n])


def witness_q_operator(n: int, alpha: float, beta: float) -> np.ndarray:
    w = w_state(n).amplitudes
    q = alpha * np.outer(w, w.conj())
    for bs in build_bs_states(n):
        q -= beta * np.outer(bs.amplitudes, bs.amplitudes.conj())
    return q


def advanced_witness(n: int, spec: WitnessSpec, check_gamma: bool = True) -> HermitianOperator:
    """Normalized γ·𝟙₂ − Q, with 𝟙₂ the projector onto ≤ 2 excitations."""
    if spec.n != n:
        raise ValueError(f"spec is for n={spec.n}, not {n}")
    if check_gamma:
        gamma = gamma_biseparable(n, spec.alpha, spec.beta)
        if abs(gamma - spec.gamma) > GAMMA_CONSISTENCY_ATOL:
            raise ValueError(f"inconsistent spec: gamma {spec.gamma} but biseparable maximum is {gamma:.6f}")
    w = np.diag(spec.gamma * low_excitation_projector(n)).astype(complex) - witness_q_operator(n, spec.alpha, spec.beta)
    scale = 2**n / np.trace(w).real
    if abs(scale - spec.normalization) > 1e-9 * abs(scale):
        raise ValueError("inconsistent spec: normalization does not match")
    return HermitianOperator(w * scale, (2,) * n)


def witness_expectation(rho: DensityMatrix, w: HermitianOperator) -> float:
    if rho.entries.shape != w.entries.shape:
        raise ValueError("dimension mismatch between state and witness")
    value = np.vdot(w.entries, rho.entries)  # Tr(w† ρ) = Tr(w ρ)
    if abs(value.imag) > 1e-10:
        raise ValueError("witness expectation is not real")
    return float(value.real)


# -- local filtering --------------------------------------------------------------


def _filter_matrix(p: np.ndarray) -> np.ndarray:
    x, y, angle = p
    c, s = math.cos(angle), math.sin(angle)
    return np.diag([math.exp(x), math.exp(y)]) @ np.array([[c, -s], [s, c]])


def _apply_filters(m: np.ndarray, dims, filters, skip: int = -1) -> np.ndarray:
    """F† m F for F = ⊗ filters, optionally leaving one qubit out."""
    t = m
    for k, f in enumerate(filters):
        if k != skip:
            t = apply_local_operator(HermitianOperator(t, dims), k, f.conj().T).entries
    return t


def _single_qubit_kernel(w: np.ndarray, x: np.ndarray, n: int, k: int) -> np.ndarray:
    """K[i,j,a,b] with Tr(w · A_k x A_k†) = Σ K[i,j,a,b] A[j,a] conj(A[i,b])."""
    ax = n - 1 - k

    def split(m):
        t = np.moveaxis(m.reshape((2,) * (2 * n)), [ax, n + ax], [0, n])
        return t.reshape(2, 2 ** (n - 1), 2, 2 ** (n - 1))

    return np.einsum("irjs,asbr->ijab", split(w), split(x))


def _kernel_value(kernel: np.ndarray, a: np.ndarray) -> float:
    return float(np.einsum("ijab,ja,ib->", kernel, a, a.conj()).real)


def local_filter_optimize(
    w: HermitianOperator, rho: DensityMatrix, sweeps: int = 50, tol: float = 1e-10
) -> HermitianOperator:
    """Sharpen ``w`` on ``rho`` with local filters F = F_1 ⊗ ... ⊗ F_N.

    Minimizes the normalized expectation Tr(F w F† ρ) / (Tr(F w F†)/2^N) by
    alternating Nelder-Mead updates of one qubit's filter (diagonal scale
    plus a real rotation). Starts from the identity, so the result never does
    worse than ``w``.
    """
    n = _qubits(rho)
    dims = rho.dims
    d = 2**n
    params = np.zeros((n, 3))
    filters = [np.eye(2) for _ in range(n)]
    ident = np.eye(d, dtype=complex)

    def normalized(value, norm):
        return value / (norm / d) if norm / d > 1e-12 else math.inf

    current = normalized(witness_expectation(rho, w), np.trace(w.entries).real)
    for _ in range(sweeps):
        start = current
        for k in range(n):
            k_rho = _single_qubit_kernel(w.entries, _apply_filters(rho.entries, dims, filters, skip=k), n, k)
            k_id = _single_qubit_kernel(w.entries, _apply_filters(ident, dims, filters, skip=k), n, k)

            def objective(p):
                a = _filter_matrix(p).conj().T
                return normalized(_kernel_value(k_rho, a), _kernel_value(k_id, a))

            res = minimize(objective, params[k], method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-13})
            if res.fun < current:
                params[k] = res.x
                filters[k] = _filter_matrix(res.x)
                current = float(res.fun)
        if start - current < tol:
            break
    # F w F† = (F†)† w (F†)
    out = w.entries
    for k, f in enumerate(filters):
        out = apply_local_operator(HermitianOperator(out, dims), k, f).entries
    out = (out + out.conj().T) / 2
    return HermitianOperator(out * d / np.trace(out).real, dims)


# -- concurrence --------------------------------------------------------------------

_YY = np.kron(SIGMA_Y, SIGMA_Y)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    # drop round-off eigenvalues so rank-deficient states stay exact
    vals = np.where(vals > 1e-13 * max(vals[-1], 1e-300), vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def concurrence(rho2: DensityMatrix) -> float:
    """Wootters concurrence from the spectrum of √ρ ρ̃ √ρ, ρ̃ = (σy⊗σy) ρ* (σy⊗σy).

    That matrix is A A† with A = √ρ (σy⊗σy) √ρ*, so the λ_i are the singular
    values of A; taking them directly avoids square roots of tiny eigenvalues.
    """
    if tuple(rho2.dims) != (2, 2):
        raise ValueError(f"concurrence needs dims (2, 2), got {rho2.dims}")
    root = _sqrt_psd(rho2.entries)
    lam = np.linalg.svd(root @ _YY @ root.conj(), compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def projected_pair_state(rho: DensityMatrix, k: int, l: int) -> tuple[DensityMatrix, float]:
    """Condition every qubit but k, l on |D> and keep the pair (k, l)."""
    n = _qubits(rho)
    if k == l or not (0 <= k < n and 0 <= l < n):
        raise ValueError("need two distinct valid qubit indices")
    lo, hi = sorted((k, l))
    # all other bits zero: the four indices 0, 2^lo, 2^hi, 2^lo + 2^hi
    idx = np.array([0, 1 << lo, 1 << hi, (1 << lo) | (1 << hi)])
    block = rho.entries[np.ix_(idx, idx)]
    prob = float(np.trace(block).real)
    if prob < 1e-12:
        raise ValueError("outcome has zero probability")
    return DensityMatrix(block / prob, (2, 2)), prob


def reduced_pair_state(rho: DensityMatrix, k: int, l: int) -> DensityMatrix:
    if k == l:
        raise ValueError("need two distinct qubit indices")
    return partial_trace(rho, [k, l])


# -- report ---------------------------------------------------------------------------


@dataclass
class EntanglementReport:
    n: int
    fidelity: float
    phases: np.ndarray
    simple_witness: float
    advanced_witness: float
    pairs: list[tuple[int, int]]
    projected_concurrences: np.ndarray
    projection_probabilities: np.ndarray
    reduced_concurrences: np.ndarray
    filtered_witness: Optional[float] = None

    @property
    def distillable(self) -> bool:
        return bool(np.all(self.projected_concurrences > 0))

    @property
    def min_projected(self) -> float:
        return float(self.projected_concurrences.min())

    @property
    def mean_projected(self) -> float:
        return float(self.projected_concurrences.mean())

    @property
    def min_reduced(self) -> float:
        return float(self.reduced_concurrences.min())

    @property
    def mean_reduced(self) -> float:
        return float(self.reduced_concurrences.mean())


def entanglement_report(
    rho: DensityMatrix, witness: Optional[WitnessSpec] = None, local_filter: bool = False
) -> EntanglementReport:
    """Fidelity, witnesses and pairwise concurrences of a 2..8 qubit state.

    Local phases are optimized first and every quantity is evaluated on the
    phase-adjusted state. The advanced witness uses the published parameters
    unless ``witness`` is given, and is NaN for n = 2.
    """
    n = _qubits(rho)
    if not 2 <= n <= 8:
        raise ValueError("entanglement_report supports 2..8 qubits")
    phases, fid = optimize_local_phases(rho)
    adjusted = apply_local_phases(rho, phases)
    adv = math.nan
    filtered = None
    if n >= 3:
        spec = witness if witness is not None else WitnessSpec.published(n)
        op = advanced_witness(n, spec, check_gamma=False)
        adv = witness_expectation(adjusted, op)
        if local_filter:
            filtered = witness_expectation(adjusted, local_filter_optimize(op, adjusted))
    pairs = [(k, l) for k in range(n) for l in range(k + 1, n)]
    proj, probs, red = [], [], []
    for k, l in pairs:
        try:
            pair, p = projected_pair_state(adjusted, k, l)
            proj.append(concurrence(pair))
        except ValueError:
            # the conditioning outcome never occurs: nothing to distill
            p = 0.0
            proj.append(0.0)
        probs.append(p)
        red.append(concurrence(reduced_pair_state(adjusted, k, l)))
    return EntanglementReport(
        n=n,
        fidelity=fid,
        phases=phases,
        simple_witness=(n - 1) / n - fid,
        advanced_witness=adv,
        pairs=pairs,
        projected_concurrences=np.array(proj),
        projection_probabilities=np.array(probs),
        reduced_concurrences=np.array(red),
        filtered_witness=filtered,
    )


def _num(x: Optional[float]) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.8e}"


def format_report(report: EntanglementReport) -> str:
    """Table rows in the order F, witness, min/mean C, min/mean C', then key = value lines."""
    witness = report.filtered_witness if report.filtered_witness is not None else report.advanced_witness
    rows = [
        ("F", report.fidelity),
        ("tr(W rho)", witness),
        ("min(C_kl)", report.min_projected),
        ("mean(C_kl)", report.mean_projected),
        ("min(C'_kl)", report.min_reduced),
        ("mean(C'_kl)", report.mean_reduced),
    ]
    lines = [f"# N = {report.n}"]
    lines += [f"{name:<12} {_num(v)}" for name, v in rows]
    lines.append("")
    kv = {
        "n": str(report.n),
        "fidelity": _num(report.fidelity),
        "simple_witness": _num(report.simple_witness),
        "advanced_witness": _num(report.advanced_witness),
        "filtered_witness": _num(report.filtered_witness),
        "min_projected_concurrence": _num(report.min_projected),
        "mean_projected_concurrence": _num(report.mean_projected),
        "min_reduced_concurrence": _num(report.min_reduced),
        "mean_reduced_concurrence": _num(report.mean_reduced),
        "distillable": str(report.distillable).lower(),
        "phases": " ".join(_num(p) for p in report.phases),
    }
    for (k, l), c, p, cr in zip(
        report.pairs, report.projected_concurrences, report.projection_probabilities, report.reduced_concurrences
    ):
        kv[f"pair_{k + 1}_{l + 1}"] = f"{_num(c)} {_num(p)} {_num(cr)}"
    lines += [f"{key} = {val}" for key, val in kv.items()]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    """Key = value block of :func:`format_report`."""
    out = {}
    for line in text.splitlines():
        if " = " in line:
            key, val = line.split(" = ", 1)
            out[key.strip()] = val.strip()
    return out
