"""Pixel similarity graph and the min-cut + Potts QUBO built on it."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qmseg.imaging import BinaryMask, GrayImage


class QuboParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, eq=False)
class PixelGraph:
    """4-connected grid graph; edge k joins flat indices rows[k] < cols[k]."""

    width: int
    height: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    sigma_hat: float

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.weights)]

    def degree_weights(self) -> np.ndarray:
        """Sum of incident edge weights per node."""
        total = np.zeros(self.n)
        np.add.at(total, self.rows, self.weights)
        np.add.at(total, self.cols, self.weights)
        return total


def grid_edges(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Right and down neighbour pairs, sorted by (i, j)."""
    idx = np.arange(width * height).reshape(height, width)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    pairs = np.concatenate([right, down])
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)


def build_graph(z: GrayImage, bandwidth_factor: float = 0.5) -> PixelGraph:
    if not bandwidth_factor > 0:
        raise ValueError("bandwidth_factor must be positive")
    values = z.flat
    rows, cols = grid_edges(z.width, z.height)
    # np.std of a constant array can come out as a tiny nonzero rounding residue
    spread = float(np.std(values)) if np.ptp(values) > 0 else 0.0
    sigma_hat = bandwidth_factor * spread
    diff = values[rows] - values[cols]
    if sigma_hat == 0.0:
        weights = (diff == 0).astype(np.float64)
    else:
        weights = np.exp(-(diff**2) / (2 * sigma_hat**2))
    return PixelGraph(z.width, z.height, rows, cols, weights, sigma_hat)


def _as_array(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class QuboProblem:
    """Energy c.x + sum_i Q_ii x_i^2 + sum_{i<j} Q_ij x_i x_j + offset.

    Off-diagonal terms are stored once per unordered pair (rows < cols).
    """

    n: int
    linear: np.ndarray
    diagonal: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    coeffs: np.ndarray
    offset: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        linear = _as_array(self.linear, np.float64)
        diagonal = _as_array(self.diagonal, np.float64)
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if linear.shape != (self.n,) or diagonal.shape != (self.n,):
            raise ValueError("linear and diagonal coefficients must have length n")
        if not (rows.shape == cols.shape == coeffs.shape):
            raise ValueError("quadratic index and coefficient arrays must align")
        if rows.size and (np.any(rows >= cols) or rows.min() < 0 or cols.max() >= self.n):
            raise ValueError("off-diagonal indices must satisfy 0 <= i < j < n")
        order = np.lexsort((cols, rows))
        rows, cols, coeffs = rows[order], cols[order], coeffs[order]
        if rows.size > 1:
            same = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if same.any():
                k = int(np.flatnonzero(same)[0])
                raise ValueError(f"duplicate quadratic entry ({rows[k]}, {cols[k]})")
        for name, arr in (("linear", linear), ("diagonal", diagonal), ("quadratic", coeffs)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} coefficients must be finite")
        if not (math.isfinite(self.offset) and math.isfinite(self.alpha)):
            raise ValueError("offset and alpha must be finite")
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "diagonal", diagonal)
        object.__setattr__(self, "rows", _as_array(rows, np.int64))
        object.__setattr__(self, "cols", _as_array(cols, np.int64))
        object.__setattr__(self, "coeffs", _as_array(coeffs, np.float64))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def from_dicts(cls, n: int, linear: dict, quadratic: dict, offset: float = 0.0, alpha: float = 0.0):
        """Build from {i: c_i} and {(i, j): Q_ij} with i <= j (i == j is the diagonal)."""
        lin = np.zeros(n)
        diag = np.zeros(n)
        for i, v in linear.items():
            lin[i] = v
        off = []
        for (i, j), v in quadratic.items():
            if i == j:
                diag[i] = v
            else:
                off.append((min(i, j), max(i, j), v))
        rows, cols, coeffs = (np.array(col) for col in zip(*off)) if off else ([], [], [])
        return cls(n, lin, diag, rows, cols, coeffs, offset, alpha)

    @property
    def quadratic(self) -> dict[tuple[int, int], float]:
        quad = {(i, i): float(v) for i, v in enumerate(self.diagonal) if v != 0.0}
        quad.update({(int(i), int(j)): float(v) for i, j, v in zip(self.rows, self.cols, self.coeffs)})
        return dict(sorted(quad.items()))

    def to_dense(self) -> np.ndarray:
        """Upper-triangular Q with the diagonal; energy = x.Q.x + c.x + offset."""
        dense = np.diag(self.diagonal.astype(np.float64))
        dense[self.rows, self.cols] += self.coeffs
        return dense

    def scaled(self, factor: float) -> "QuboProblem":
        return QuboProblem(
            self.n,
            self.linear * factor,
            self.diagonal * factor,
            self.rows,
            self.cols,
            self.coeffs * factor,
            self.offset * factor,
            self.alpha,
        )

    def __eq__(self, other):
        if not isinstance(other, QuboProblem):
            return NotImplemented
        return (
            self.n == other.n
            and self.offset == other.offset
            and self.alpha == other.alpha
            and np.array_equal(self.linear, other.linear)
            and np.array_equal(self.diagonal, other.diagonal)
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.coeffs, other.coeffs)
        )

    __hash__ = None


def _grid_exponent(max_magnitude: float) -> int:
    # Keeps every per-variable partial sum within 53 mantissa bits.
    return 50 - max(0, math.ceil(math.log2(max(max_magnitude, 1.0))))


def build_qubo(g: PixelGraph, alpha: float = 0.1) -> QuboProblem:
    """Coefficients of sum_E W_ij [(x_i + x_j - 2 x_i x_j) + alpha (1 - (x_i + x_j - 1)^2)].

    c_i = (2 alpha + 1) sum_j W_ij, Q_ij = -2 (1 + alpha) W_ij, Q_ii = -alpha sum_j W_ij.
    Q is rounded to a dyadic grid and c_i is then formed from the rounded Q as
    -Q_ii - (1/2) sum_j Q_ij, which equals the expression above but makes the
    energy of the uniform masks cancel to exactly zero.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    degree = g.degree_weights()
    k = _grid_exponent(8 * (2 * alpha + 1))
    quantize = lambda v: np.ldexp(np.round(np.ldexp(v, k)), -k)  # noqa: E731
    coeffs = quantize(-2.0 * (1.0 + alpha) * g.weights)
    diagonal = quantize(-alpha * degree)
    half_incident = np.zeros(g.n)
    np.add.at(half_incident, g.rows, 0.5 * coeffs)
    np.add.at(half_incident, g.cols, 0.5 * coeffs)
    linear = -diagonal - half_incident
    return QuboProblem(g.n, linear, diagonal, g.rows, g.cols, coeffs, 0.0, alpha)


def _bits(q: QuboProblem, x) -> np.ndarray:
    if isinstance(x, BinaryMask):
        x = x.flat
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != q.n:
        raise ValueError(f"assignment has length {x.size}, problem has {q.n} variables")
    return x


def energy(q: QuboProblem, x) -> float:
    """x^T Q x + c^T x + offset, summed exactly (math.fsum) before rounding."""
    x = _bits(q, x)
    terms = np.concatenate([q.linear * x, q.diagonal * x * x, q.coeffs * x[q.rows] * x[q.cols]])
    return math.fsum(terms) + q.offset


def energies(q: QuboProblem, xs: np.ndarray) -> np.ndarray:
    """Vectorized (floating-point, not exactly summed) energies of a batch of assignments."""
    xs = np.asarray(xs, dtype=np.float64)
    out = xs @ q.linear + (xs * xs) @ q.diagonal
    out += (xs[:, q.rows] * xs[:, q.cols]) @ q.coeffs
    return out + q.offset


def direct_loss(g: PixelGraph, alpha: float, x) -> float:
    """Edge-sum form of the loss; accepts relaxed values in [0, 1] as well as bits."""
    if isinstance(x, BinaryMask):
        x = x.flat
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != g.n:
        raise ValueError(f"assignment has length {x.size}, graph has {g.n} nodes")
    xi, xj = x[g.rows], x[g.cols]
    cut = xi + xj - 2 * xi * xj
    smooth = 1 - (xi + xj - 1) ** 2
    return float(np.sum(g.weights * (cut + alpha * smooth)))


# ----------------------------------------------------------------- serialization


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def serialize_qubo(q: QuboProblem) -> bytes:
    linear = [(i, v) for i, v in enumerate(q.linear) if v != 0.0]
    quad = list(q.quadratic.items())
    lines = [f"qubo {q.n} {len(linear)} {len(quad)} {_fmt(q.alpha)} {_fmt(q.offset)}"]
    lines += [f"{i} {_fmt(v)}" for i, v in linear]
    lines += [f"{i} {j} {_fmt(v)}" for (i, j), v in quad]
    return ("\n".join(lines) + "\n").encode("ascii")


def parse_qubo(data: bytes) -> QuboProblem:
    lines = data.decode("ascii").splitlines()
    if not lines:
        raise QuboParseError("missing header", 1)
    header = lines[0].split()
    if len(header) != 6 or header[0] != "qubo":
        raise QuboParseError("bad header, expected 'qubo <n> <num_linear> <num_quadratic> <alpha> <offset>'", 1)
    try:
        n, num_linear, num_quad = (int(t) for t in header[1:4])
        alpha, offset = float(header[4]), float(header[5])
    except ValueError:
        raise QuboParseError("bad header values", 1) from None
    if min(n, num_linear, num_quad) < 0:
        raise QuboParseError("bad header: negative count", 1)
    body = lines[1:]
    if len(body) != num_linear + num_quad:
        raise QuboParseError(
            f"expected {num_linear + num_quad} coefficient lines, found {len(body)}", len(lines) + 1
        )
    linear: dict[int, float] = {}
    quad: dict[tuple[int, int], float] = {}
    for lineno, line in enumerate(body, start=2):
        fields = line.split()
        is_linear = lineno - 2 < num_linear
        expected = 2 if is_linear else 3
        if len(fields) != expected:
            raise QuboParseError(f"expected {expected} fields, found {len(fields)}", lineno)
        try:
            idx = [int(t) for t in fields[:-1]]
            value = float(fields[-1])
        except ValueError:
            raise QuboParseError(f"unparseable entry {line!r}", lineno) from None
        if any(i < 0 or i >= n for i in idx):
            raise QuboParseError(f"index out of range for n={n}", lineno)
        if is_linear:
            if idx[0] in linear:
                raise QuboParseError(f"duplicate linear entry {idx[0]}", lineno)
            linear[idx[0]] = value
        else:
            key = (idx[0], idx[1])
            if key[0] > key[1]:
                raise QuboParseError("quadratic entries must have i <= j", lineno)
            if key in quad:
                raise QuboParseError(f"duplicate quadratic entry {key}", lineno)
            quad[key] = value
    return QuboProblem.from_dicts(n, linear, quad, offset, alpha)


def qubo_to_json(q: QuboProblem) -> str:
    doc = {
        "n": q.n,
        "alpha": q.alpha,
        "offset": q.offset,
        "linear": [[i, float(v)] for i, v in enumerate(q.linear) if v != 0.0],
        "quadratic": [[i, j, v] for (i, j), v in q.quadratic.items()],
    }
    return json.dumps(doc, indent=1)


def qubo_from_json(text: str) -> QuboProblem:
    doc = json.loads(text)
    linear = {int(i): float(v) for i, v in doc["linear"]}
    quad = {}
    for i, j, v in doc["quadratic"]:
        if (i, j) in quad:
            raise ValueError(f"duplicate quadratic entry ({i}, {j})")
        quad[(int(i), int(j))] = float(v)
    return QuboProblem.from_dicts(int(doc["n"]), linear, quad, doc.get("offset", 0.0), doc.get("alpha", 0.0))


def qubo_document(q: QuboProblem, path) -> bytes:
    """Encoded problem for `path`: JSON when it ends in .json, else the text format."""
    if Path(path).suffix.lower() == ".json":
        return (qubo_to_json(q) + "\n").encode("utf-8")
    return serialize_qubo(q)


def write_qubo(q: QuboProblem, path) -> None:
    Path(path).write_bytes(qubo_document(q, path))


def read_qubo(path) -> QuboProblem:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return qubo_from_json(path.read_text())
    return parse_qubo(path.read_bytes())
