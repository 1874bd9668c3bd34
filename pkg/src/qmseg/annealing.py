"""QUBO solvers: exhaustive enumeration, simulated annealing, external sampler files."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from qmseg.graph_qubo import QuboProblem, energies, energy, write_qubo

MAX_EXACT_VARIABLES = 26


class SolverSizeError(ValueError):
    pass


class SampleIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class SaConfig:
    beta_start: float = 0.1
    beta_end: float = 4.2
    sweeps: int = 1000
    reads: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta_start <= self.beta_end:
            raise ValueError("require 0 < beta_start <= beta_end")
        if self.sweeps < 1 or self.reads < 1:
            raise ValueError("sweeps and reads must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SolverOutcome:
    best: np.ndarray
    best_energy: float
    read_energies: list[float]
    elapsed: float
    solver_name: str
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "solver_name": self.solver_name,
            "best_energy": self.best_energy,
            "num_reads": len(self.read_energies),
            "elapsed": self.elapsed,
            "seed": self.seed,
            **self.metadata,
        }


# ------------------------------------------------------------------------- exact


def _bit_matrix(start: int, stop: int, n: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(np.float64)


def solve_exact(q: QuboProblem, chunk: int = 1 << 16) -> SolverOutcome:
    """Enumerate all 2**n assignments (variable 0 is the most significant bit).

    Ties go to the lexicographically smallest bit string. Candidates within a
    rounding margin of the floating-point minimum are re-scored with exact sums.
    """
    if q.n > MAX_EXACT_VARIABLES:
        raise SolverSizeError(f"exact solver supports at most {MAX_EXACT_VARIABLES} variables, got {q.n}")
    start_time = time.perf_counter()
    scale = float(np.abs(q.linear).sum() + np.abs(q.diagonal).sum() + np.abs(q.coeffs).sum()) + abs(q.offset)
    margin = 1e-9 * max(scale, 1.0)
    best_codes: list[int] = []
    best_float = math.inf
    total = 1 << q.n
    for lo in range(0, total, chunk):
        hi = min(total, lo + chunk)
        e = energies(q, _bit_matrix(lo, hi, q.n))
        chunk_min = float(e.min())
        if chunk_min < best_float - margin:
            best_codes = []
        best_float = min(best_float, chunk_min)
        best_codes.extend(int(c) + lo for c in np.flatnonzero(e <= best_float + margin))
    scored = []
    for code in best_codes:
        bits = _bit_matrix(code, code + 1, q.n)[0]
        scored.append((energy(q, bits), code, bits))
    best_energy, _, best = min(scored, key=lambda t: (t[0], t[1]))
    return SolverOutcome(
        best=best.astype(np.uint8),
        best_energy=best_energy,
        read_energies=[best_energy],
        elapsed=time.perf_counter() - start_time,
        solver_name="exact",
    )


# ------------------------------------------------------------ simulated annealing


def metropolis_accept(delta_e: float, beta: float, u: float) -> bool:
    """Accept with probability min(1, exp(-beta * delta_e))."""
    if delta_e <= 0:
        return True
    return u < math.exp(-delta_e * beta)


def beta_schedule(cfg: SaConfig, sweep_index: int) -> float:
    if cfg.sweeps == 1:
        return cfg.beta_end
    if sweep_index == cfg.sweeps - 1:
        return cfg.beta_end
    return cfg.beta_start + sweep_index * (cfg.beta_end - cfg.beta_start) / (cfg.sweeps - 1)


def _adjacency(q: QuboProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric CSR adjacency of the off-diagonal couplings."""
    src = np.concatenate([q.rows, q.cols])
    dst = np.concatenate([q.cols, q.rows])
    w = np.concatenate([q.coeffs, q.coeffs])
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(q.n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst[order].astype(np.int64), w[order]


@numba.njit(inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@numba.njit(inline="always")
def _next(state):
    """xoshiro256** step; returns a uint64."""
    result = _rotl(state[1] * np.uint64(5), 7) * np.uint64(9)
    t = state[1] << np.uint64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], 45)
    return result


@numba.njit(inline="always")
def _uniform(state):
    return float(_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(inline="always")
def _below(state, bound):
    return np.int64(_next(state) % np.uint64(bound))


@numba.njit(cache=True)
def _anneal_read(field0, indptr, indices, weights, betas, state):
    n = field0.shape[0]
    x = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        x[i] = 1 if _uniform(state) < 0.5 else 0
    # local[i] = c_i + Q_ii + sum_j Q_ij x_j; flipping i changes the energy by (1 - 2 x_i) * local[i]
    local = field0.copy()
    e = 0.0
    for i in range(n):
        if x[i]:
            e += field0[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                local[j] += weights[k]
                if x[j] and j > i:
                    e += weights[k]
    best_e = e
    best_x = x.copy()
    order = np.arange(n)
    for s in range(betas.shape[0]):
        beta = betas[s]
        for t in range(n - 1, 0, -1):
            r = _below(state, t + 1)
            order[t], order[r] = order[r], order[t]
        for t in range(n):
            i = order[t]
            delta = local[i] if x[i] == 0 else -local[i]
            u = _uniform(state)
            if delta <= 0.0 or u < math.exp(-delta * beta):
                sign = 1.0 if x[i] == 0 else -1.0
                x[i] = 1 - x[i]
                e += delta
                for k in range(indptr[i], indptr[i + 1]):
                    local[indices[k]] += sign * weights[k]
        if e < best_e:
            best_e = e
            best_x[:] = x
    return best_x


def read_states(seed: int, reads: int) -> np.ndarray:
    """Independent 256-bit generator states derived from (seed, read index)."""
    return np.stack(
        [np.random.SeedSequence([seed, r]).generate_state(4, dtype=np.uint64) for r in range(reads)]
    )


def solve_sa(q: QuboProblem, cfg: SaConfig | None = None) -> SolverOutcome:
    """Metropolis single-flip annealing over a linear inverse-temperature ramp.

    Each read starts from a uniform random assignment and keeps the lowest-energy
    state seen at sweep boundaries; the outcome is the best read, ties broken by
    read index.
    """
    cfg = cfg or SaConfig()
    if q.n < 1:
        raise ValueError("simulated annealing needs at least one variable")
    start_time = time.perf_counter()
    indptr, indices, weights = _adjacency(q)
    field0 = q.linear + q.diagonal
    betas = np.array([beta_schedule(cfg, s) for s in range(cfg.sweeps)])
    samples = []
    read_energies = []
    for state in read_states(cfg.seed, cfg.reads):
        x = _anneal_read(field0, indptr, indices, weights, betas, state.copy())
        samples.append(x)
        read_energies.append(energy(q, x))
    best_read = int(np.argmin(read_energies))
    return SolverOutcome(
        best=samples[best_read],
        best_energy=read_energies[best_read],
        read_energies=read_energies,
        elapsed=time.perf_counter() - start_time,
        solver_name="sa",
        seed=cfg.seed,
        metadata={"reads": cfg.reads, "sweeps": cfg.sweeps, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end},
    )


# ------------------------------------------------------------- external sampler


def export_for_sampler(q: QuboProblem, path) -> Path:
    path = Path(path)
    write_qubo(q, path)
    return path


def import_samples(q: QuboProblem, path, tolerance: float = 1e-6) -> SolverOutcome:
    """Read `<bitstring> <energy> <count>` lines, verify energies, keep the best sample."""
    path = Path(path)
    best = None
    read_energies = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise SampleIntegrityError(f"{path}:{lineno}: expected '<bitstring> <energy> <count>'")
        bitstring, claimed, count = fields
        if len(bitstring) != q.n or set(bitstring) - {"0", "1"}:
            raise SampleIntegrityError(f"{path}:{lineno}: bitstring must be {q.n} characters of 0/1")
        try:
            claimed_e = float(claimed)
            count_n = int(count)
        except ValueError:
            raise SampleIntegrityError(f"{path}:{lineno}: unparseable energy or count") from None
        if count_n < 1:
            raise SampleIntegrityError(f"{path}:{lineno}: count must be positive")
        bits = np.frombuffer(bitstring.encode("ascii"), dtype=np.uint8) - ord("0")
        actual = energy(q, bits)
        if abs(actual - claimed_e) > tolerance:
            raise SampleIntegrityError(
                f"{path}:{lineno}: reported energy {claimed_e} differs from recomputed {actual}"
            )
        read_energies.extend([actual] * count_n)
        if best is None or actual < best[0]:
            best = (actual, bits.copy())
    if best is None:
        raise SampleIntegrityError(f"{path}: no samples found")
    return SolverOutcome(
        best=best[1],
        best_energy=best[0],
        read_energies=read_energies,
        elapsed=0.0,
        solver_name="external",
    )
