"""Simulated variational circuit with amplitude encoding of the QUBO variables.

Register basis state |i> stands for variable i and a single ancilla (the most
significant qubit) carries P(x_i = 1). All gates used are real (R_y and CNOT),
so amplitudes are kept as float64.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from qmseg.annealing import SolverOutcome
from qmseg.imaging import GrayImage
from qmseg.graph_qubo import PixelGraph, QuboProblem, direct_loss, energy

PROB_GUARD = 1e-15


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class VqaConfig:
    layers: int = 2
    threshold: float = 0.3
    learning_rate: float = 0.01
    epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")


@dataclass
class Statevector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes)
        if self.amplitudes.shape != (1 << self.num_qubits,):
            raise ValueError(f"expected {1 << self.num_qubits} amplitudes, got {self.amplitudes.shape}")

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))


def plan_qubits(n_vars: int) -> tuple[int, int, int]:
    """(register qubits, total qubits including the ancilla, padded variable count)."""
    if n_vars < 1:
        raise ValueError("need at least one variable")
    register = (n_vars - 1).bit_length()
    return register, register + 1, 1 << register


def warm_start_state(x_star, padded_size: int) -> Statevector:
    """Uniform superposition over |x*_i>_a |i>_r."""
    x_star = np.asarray(x_star).astype(np.int64).reshape(-1)
    if x_star.size != padded_size:
        raise ValueError(f"warm start has length {x_star.size}, expected {padded_size}")
    amps = np.zeros(2 * padded_size)
    amps[x_star * padded_size + np.arange(padded_size)] = 1.0 / math.sqrt(padded_size)
    return Statevector(padded_size.bit_length(), amps)


# ----------------------------------------------------------------------- gates


def _ry(psi: np.ndarray, qubit: int, nq: int, angle: float) -> np.ndarray:
    view = psi.reshape(1 << qubit, 2, 1 << (nq - qubit - 1))
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    a0, a1 = view[:, 0, :], view[:, 1, :]
    out = np.empty_like(view)
    out[:, 0, :] = c * a0 - s * a1
    out[:, 1, :] = s * a0 + c * a1
    return out.reshape(-1)


def _cnot(psi: np.ndarray, control: int, nq: int) -> np.ndarray:
    """CNOT from `control` onto the next qubit (control + 1)."""
    view = psi.reshape(1 << control, 2, 2, 1 << (nq - control - 2)).copy()
    view[:, 1, :, :] = view[:, 1, ::-1, :]
    return view.reshape(-1)


def ansatz_ops(nq: int, layers: int) -> list[tuple]:
    """Gate list; ("ry", qubit, theta_index) or ("cx", control)."""
    ops = []
    for layer in range(layers):
        base = 2 * nq * layer
        ops += [("ry", q, base + q) for q in range(nq)]
        ops += [("cx", q) for q in range(nq - 1)]
        ops += [("ry", q, base + nq + q) for q in range(nq)]
        ops += [("cx", q) for q in reversed(range(nq - 1))]
    return ops


def num_parameters(nq: int, layers: int) -> int:
    return 2 * nq * layers


def _layers_for(theta: np.ndarray, nq: int) -> int:
    per_layer = 2 * nq
    if theta.size == 0 or theta.size % per_layer:
        raise ValueError(f"theta length {theta.size} is not a positive multiple of {per_layer}")
    return theta.size // per_layer


def _run(psi: np.ndarray, nq: int, theta: np.ndarray) -> np.ndarray:
    for op in ansatz_ops(nq, _layers_for(theta, nq)):
        psi = _ry(psi, op[1], nq, theta[op[2]]) if op[0] == "ry" else _cnot(psi, op[1], nq)
    return psi


def apply_ansatz(state: Statevector, theta) -> Statevector:
    """Layers of R_y, ascending CNOT chain, R_y, descending CNOT chain; identity at theta = 0."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    psi = np.asarray(state.amplitudes)
    if np.iscomplexobj(psi):
        out = _run(psi.real.copy(), state.num_qubits, theta) + 1j * _run(psi.imag.copy(), state.num_qubits, theta)
    else:
        out = _run(psi.astype(np.float64), state.num_qubits, theta)
    return Statevector(state.num_qubits, out)


# ------------------------------------------------------------------ read-out


def _split(amplitudes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = amplitudes.size // 2
    return amplitudes[:half], amplitudes[half:]


def probabilities(state: Statevector, n_vars: int) -> np.ndarray:
    """P(ancilla = 1 | register = i) for the first n_vars register states."""
    a0, a1 = _split(state.amplitudes)
    p0, p1 = np.abs(a0) ** 2, np.abs(a1) ** 2
    total = p0 + p1
    b = np.where(total < PROB_GUARD, 0.0, p1 / np.where(total < PROB_GUARD, 1.0, total))
    return b[:n_vars]


def vqa_loss(g: PixelGraph, alpha: float, b) -> float:
    """Loss with the binary variables replaced by their probabilities."""
    return direct_loss(g, alpha, b)


def relaxed_energy(q: QuboProblem, b: np.ndarray) -> float:
    """The QUBO polynomial evaluated at real-valued b (same polynomial as the edge-sum loss)."""
    return float(q.linear @ b + q.diagonal @ (b * b) + q.coeffs @ (b[q.rows] * b[q.cols]) + q.offset)


def relaxed_energy_grad(q: QuboProblem, b: np.ndarray) -> np.ndarray:
    grad = q.linear + 2.0 * q.diagonal * b
    np.add.at(grad, q.rows, q.coeffs * b[q.cols])
    np.add.at(grad, q.cols, q.coeffs * b[q.rows])
    return grad


def round_solution(b) -> np.ndarray:
    return (np.asarray(b) > 0.5).astype(np.uint8)


# --------------------------------------------------------------------- model


@dataclass
class VqaModel:
    problem: QuboProblem
    warm_start: np.ndarray
    theta: np.ndarray
    register_qubits: int
    padded_size: int
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step: int = 0

    @classmethod
    def create(cls, problem: QuboProblem, x_star, layers: int = 2) -> "VqaModel":
        register, total, padded = plan_qubits(problem.n)
        x_star = np.asarray(x_star, dtype=np.uint8).reshape(-1)
        if x_star.size != problem.n:
            raise ValueError(f"warm start has length {x_star.size}, problem has {problem.n} variables")
        warm = np.zeros(padded, dtype=np.uint8)
        warm[: problem.n] = x_star
        theta = np.zeros(num_parameters(total, layers))
        return cls(problem, warm, theta, register, padded, np.zeros_like(theta), np.zeros_like(theta), 0)

    @property
    def num_qubits(self) -> int:
        return self.register_qubits + 1

    def initial_state(self) -> Statevector:
        return warm_start_state(self.warm_start, self.padded_size)

    def state(self, theta=None) -> Statevector:
        return apply_ansatz(self.initial_state(), self.theta if theta is None else theta)

    def probabilities(self, theta=None) -> np.ndarray:
        return probabilities(self.state(theta), self.problem.n)

    def loss(self, theta=None) -> float:
        return relaxed_energy(self.problem, self.probabilities(theta))

    def solution(self) -> np.ndarray:
        return round_solution(self.probabilities())


def loss_gradient(model: VqaModel, theta=None) -> np.ndarray:
    """Exact d loss / d theta by adjoint differentiation through the simulator."""
    theta = np.asarray(model.theta if theta is None else theta, dtype=np.float64)
    nq = model.num_qubits
    n = model.problem.n
    psi = _run(model.initial_state().amplitudes.astype(np.float64), nq, theta)

    a0, a1 = _split(psi)
    a0, a1 = a0[:n], a1[:n]
    total = a0**2 + a1**2
    live = total >= PROB_GUARD
    safe = np.where(live, total, 1.0)
    b = np.where(live, a1**2 / safe, 0.0)
    dl_db = relaxed_energy_grad(model.problem, b)
    lam = np.zeros_like(psi)
    half = psi.size // 2
    lam[:n] = np.where(live, -2.0 * a0 * a1**2 / safe**2, 0.0) * dl_db
    lam[half : half + n] = np.where(live, 2.0 * a1 * a0**2 / safe**2, 0.0) * dl_db

    grad = np.zeros_like(theta)
    for op in reversed(ansatz_ops(nq, _layers_for(theta, nq))):
        if op[0] == "cx":
            psi = _cnot(psi, op[1], nq)
            lam = _cnot(lam, op[1], nq)
            continue
        _, qubit, k = op
        # dR_y/dtheta = R_y(pi) R_y(theta) / 2, applied to the post-gate state
        view_psi = psi.reshape(1 << qubit, 2, -1)
        view_lam = lam.reshape(1 << qubit, 2, -1)
        grad[k] = 0.5 * (np.sum(view_lam[:, 1, :] * view_psi[:, 0, :]) - np.sum(view_lam[:, 0, :] * view_psi[:, 1, :]))
        psi = _ry(psi, qubit, nq, -theta[k])
        lam = _ry(lam, qubit, nq, -theta[k])
    return grad


def adam_step(model: VqaModel, grad: np.ndarray, cfg: VqaConfig) -> None:
    model.step += 1
    model.adam_m = cfg.adam_beta1 * model.adam_m + (1 - cfg.adam_beta1) * grad
    model.adam_v = cfg.adam_beta2 * model.adam_v + (1 - cfg.adam_beta2) * grad**2
    m_hat = model.adam_m / (1 - cfg.adam_beta1**model.step)
    v_hat = model.adam_v / (1 - cfg.adam_beta2**model.step)
    model.theta = model.theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train(model: VqaModel, cfg: VqaConfig) -> tuple[np.ndarray, list[float]]:
    """Full-gradient Adam for cfg.epochs steps.

    The history holds the loss before the first step and after every step
    (epochs + 1 values).
    """
    history = [model.loss()]
    for epoch in range(cfg.epochs):
        grad = loss_gradient(model)
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient at epoch {epoch} (loss {history[-1]!r})")
        adam_step(model, grad, cfg)
        value = model.loss()
        if not math.isfinite(value):
            raise TrainingError(
                f"non-finite loss at epoch {epoch + 1}; |theta|max={np.abs(model.theta).max():.3g}"
            )
        history.append(value)
    return model.theta.copy(), history


def warm_start_bits(z, threshold: float) -> np.ndarray:
    """Seed assignment: 1 where the filtered intensity exceeds the threshold."""
    values = z.flat if isinstance(z, GrayImage) else np.asarray(z).reshape(-1)
    return (values > threshold).astype(np.uint8)


def solve_vqa(problem: QuboProblem, x_star, cfg: VqaConfig | None = None) -> SolverOutcome:
    cfg = cfg or VqaConfig()
    start = time.perf_counter()
    model = VqaModel.create(problem, x_star, cfg.layers)
    _, history = train(model, cfg)
    best = model.solution()
    e = energy(problem, best)
    return SolverOutcome(
        best=best,
        best_energy=e,
        read_energies=[e],
        elapsed=time.perf_counter() - start,
        solver_name="vqa",
        seed=cfg.seed,
        metadata={"loss_history": history, "qubits": model.num_qubits, "layers": cfg.layers},
    )


def loss_history_csv(history: list[float]) -> str:
    return "epoch,loss\n" + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(history))
