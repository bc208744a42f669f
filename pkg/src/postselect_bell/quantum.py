"""Dense density-matrix toolkit for small bipartite systems.

All matrices are plain complex numpy arrays; the wrappers below only check
invariants on construction and carry the tensor factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import ArgumentError, EmptySubensembleError, NumericError, PreconditionError

ALG_TOL = 1e-10
OPT_TOL = 1e-6

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def _hermitian_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = int(np.prod(self.dims))
        if m.shape != (n, n):
            raise PreconditionError(f"matrix shape {m.shape} does not match dims {self.dims}")
        if not np.all(np.isfinite(m)):
            raise NumericError("density matrix has non-finite entries")
        if _hermitian_error(m) > ALG_TOL:
            raise NumericError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > ALG_TOL:
            raise NumericError(f"density matrix trace is {tr}, expected 1")
        if np.linalg.eigvalsh(m).min() < -ALG_TOL:
            raise NumericError("density matrix has a negative eigenvalue")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def expectation(self, op: np.ndarray) -> complex:
        return complex(np.trace(self.matrix @ op))


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector; ``basis`` holds orthonormal columns spanning its range."""

    matrix: np.ndarray
    rank: int
    basis: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise PreconditionError("projector must be square")
        if _hermitian_error(m) > ALG_TOL:
            raise NumericError("projector is not Hermitian")
        if np.max(np.abs(m @ m - m)) > ALG_TOL:
            raise NumericError("projector is not idempotent")
        if abs(np.trace(m).real - self.rank) > 1e-8:
            raise NumericError(f"projector trace {np.trace(m).real} differs from rank {self.rank}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_vectors(cls, vectors) -> "Projector":
        """Projector onto the span of the given orthonormal vectors (rows or a list)."""
        vs = np.atleast_2d(np.asarray(vectors, dtype=complex))
        cols = vs.T
        gram = cols.conj().T @ cols
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > ALG_TOL:
            raise PreconditionError("projector vectors must be orthonormal")
        return cls(cols @ cols.conj().T, cols.shape[1], cols)

    @classmethod
    def identity(cls, d: int) -> "Projector":
        return cls(np.eye(d, dtype=complex), d, np.eye(d, dtype=complex))

    def range_basis(self) -> np.ndarray:
        if self.basis is not None:
            return self.basis
        return range_basis(self.matrix, self.rank)


def fix_phase(v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate a vector's global phase so its first non-negligible entry is real positive."""
    idx = int(np.argmax(np.abs(v) > tol))
    z = v[idx]
    return v * (abs(z) / z) if abs(z) > tol else v


def range_basis(p: np.ndarray, rank: int) -> np.ndarray:
    """Orthonormal columns spanning range(p), descending eigenvalue, phase-fixed."""
    w, v = np.linalg.eigh(p)
    order = np.argsort(-w, kind="stable")[:rank]
    cols = [fix_phase(v[:, k]) for k in order]
    return np.stack(cols, axis=1) if cols else np.zeros((p.shape[0], 0), dtype=complex)


def flip_operator(d: int) -> np.ndarray:
    f = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            f[i * d + j, j * d + i] = 1.0
    return f


def singlet_vector() -> np.ndarray:
    return np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / np.sqrt(2.0)


def werner_family(d: int, phi: float) -> DensityMatrix:
    """U(x)U-invariant state on C^d (x) C^d with Tr(rho FLIP) = phi."""
    if d < 2:
        raise ArgumentError(f"dimension must be >= 2, got {d}")
    if not -1.0 <= phi <= 1.0:
        raise ArgumentError(f"flip parameter must lie in [-1, 1], got {phi}")
    m = ((d - phi) * np.eye(d * d) + (d * phi - 1.0) * flip_operator(d)) / (d ** 3 - d)
    return DensityMatrix(m, (d, d))


def make_state(kind: str, d: int = 2, phi: float = -0.25) -> DensityMatrix:
    """Build ``singlet``, ``werner_qubit`` (equal mixture of white noise and singlet),
    ``werner_family`` (needs ``d`` and ``phi``) or ``maximally_mixed``."""
    if kind == "singlet":
        s = singlet_vector()
        return DensityMatrix(np.outer(s, s.conj()), (2, 2))
    if kind == "werner_qubit":
        s = singlet_vector()
        return DensityMatrix(np.eye(4) / 8.0 + 0.5 * np.outer(s, s.conj()), (2, 2))
    if kind == "werner_family":
        return werner_family(d, phi)
    if kind == "maximally_mixed":
        return DensityMatrix(np.eye(d * d) / (d * d), (d, d))
    raise ArgumentError(f"unknown state kind {kind!r}")


def spin_operator(direction) -> np.ndarray:
    n = np.asarray(getattr(direction, "as_array", lambda: direction)(), dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise PreconditionError("spin direction must be a unit vector")
    return n[0] * PAULI[0] + n[1] * PAULI[1] + n[2] * PAULI[2]


def spin_up_projector(direction) -> Projector:
    return Projector(0.5 * (np.eye(2) + spin_operator(direction)), 1)


def _require_qubits(rho: DensityMatrix) -> None:
    if rho.dims != (2, 2):
        raise ArgumentError(f"expected a two-qubit state, got dims {rho.dims}")


def spin_correlation(rho: DensityMatrix, a, b) -> float:
    _require_qubits(rho)
    val = rho.expectation(np.kron(spin_operator(a), spin_operator(b)))
    if abs(val.imag) > ALG_TOL:
        raise NumericError("spin correlation has an imaginary part")
    return float(val.real)


def joint_probability(rho: DensityMatrix, p_a: Projector, p_b: Projector) -> float:
    if len(rho.dims) != 2 or rho.dims != (p_a.dim, p_b.dim):
        raise ArgumentError(f"projector dims ({p_a.dim}, {p_b.dim}) do not match state dims {rho.dims}")
    val = rho.expectation(np.kron(p_a.matrix, p_b.matrix)).real
    if val < -ALG_TOL or val > 1.0 + ALG_TOL:
        raise NumericError(f"joint probability {val} outside [0, 1]")
    return float(min(max(val, 0.0), 1.0))


def correlation_matrix(rho: DensityMatrix) -> np.ndarray:
    """T_ij = Tr(rho sigma_i (x) sigma_j)."""
    _require_qubits(rho)
    t = np.empty((3, 3))
    for i, si in enumerate(PAULI):
        for j, sj in enumerate(PAULI):
            t[i, j] = rho.expectation(np.kron(si, sj)).real
    return t


def chsh_closed_form(rho: DensityMatrix) -> float:
    """2 sqrt(m1 + m2) with m1, m2 the two largest eigenvalues of T^T T."""
    t = correlation_matrix(rho)
    m = np.sort(np.linalg.eigvalsh(t.T @ t))[::-1]
    return float(2.0 * np.sqrt(max(m[0] + m[1], 0.0)))


def _sphere(theta, phi):
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def _alice_objective(t: np.ndarray, params: np.ndarray) -> float:
    a = _sphere(params[0], params[1])
    ap = _sphere(params[2], params[3])
    # best b, b' for fixed a, a' are along T^T(a + a') and T^T(a - a')
    return float(np.linalg.norm(t.T @ (a + ap)) + np.linalg.norm(t.T @ (a - ap)))


@dataclass(frozen=True)
class ChshSettings:
    value: float
    a: np.ndarray
    a_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray


def optimize_chsh(rho: DensityMatrix, grid: int = 6) -> ChshSettings:
    """Grid search plus local refinement of the CHSH combination over spin settings."""
    t = correlation_matrix(rho)
    thetas = (np.arange(grid) + 0.5) * np.pi / grid
    phis = np.arange(grid) * 2.0 * np.pi / grid
    th, ph = np.meshgrid(thetas, phis, indexing="ij")
    dirs = _sphere(th.ravel(), ph.ravel())
    angles = np.stack([th.ravel(), ph.ravel()], axis=1)
    ta = dirs @ t  # rows: T^T a
    s = np.linalg.norm(ta[:, None, :] + ta[None, :, :], axis=-1) + np.linalg.norm(
        ta[:, None, :] - ta[None, :, :], axis=-1)
    flat = np.argsort(-s, axis=None, kind="stable")[:4]
    best_val = -np.inf
    best_x = None
    for idx in flat:
        i, j = np.unravel_index(idx, s.shape)
        x0 = np.concatenate([angles[i], angles[j]])
        res = optimize.minimize(lambda x: -_alice_objective(t, x), x0, method="BFGS",
                                options={"gtol": 1e-10})
        val = -res.fun
        if val > best_val:
            best_val, best_x = val, res.x
    a = _sphere(best_x[0], best_x[1])
    ap = _sphere(best_x[2], best_x[3])
    b = _unit_or_default(t.T @ (a + ap))
    bp = _unit_or_default(t.T @ (a - ap))
    return ChshSettings(float(best_val), a, ap, b, bp)


def _unit_or_default(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-15 else np.array([0.0, 0.0, 1.0])


def chsh_quantum_max(rho: DensityMatrix) -> float:
    """Maximal CHSH value over spin measurements, optimizer cross-checked with the closed form."""
    found = optimize_chsh(rho)
    closed = chsh_closed_form(rho)
    if abs(found.value - closed) > OPT_TOL:
        raise NumericError(f"CHSH optimizer ({found.value:.9f}) disagrees with closed form ({closed:.9f})")
    return found.value


def partial_transpose(rho: DensityMatrix) -> np.ndarray:
    da, db = rho.dims
    r = rho.matrix.reshape(da, db, da, db)
    return r.transpose(0, 3, 2, 1).reshape(da * db, da * db)


def ppt_min_eigenvalue(rho: DensityMatrix) -> float:
    if len(rho.dims) != 2:
        raise PreconditionError("partial transpose needs a bipartite factorization")
    try:
        return float(np.linalg.eigvalsh(partial_transpose(rho)).min())
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc


def postselect_state(rho: DensityMatrix, p_a: Projector, p_b: Projector,
                     basis_a: Optional[np.ndarray] = None,
                     basis_b: Optional[np.ndarray] = None) -> tuple[DensityMatrix, float]:
    """Condition ``rho`` on both projectors firing.

    Returns the normalized state expressed in orthonormal bases of the two
    ranges (rank_a x rank_b system) and the retention probability.
    """
    prob = joint_probability(rho, p_a, p_b)
    if prob <= 1e-12:
        raise EmptySubensembleError(f"postselection retention probability {prob:.3g} vanishes")
    va = p_a.range_basis() if basis_a is None else np.asarray(basis_a, dtype=complex)
    vb = p_b.range_basis() if basis_b is None else np.asarray(basis_b, dtype=complex)
    w = np.kron(va, vb)
    eff = w.conj().T @ rho.matrix @ w / prob
    return DensityMatrix(eff, (va.shape[1], vb.shape[1])), prob


def random_density_matrix(d_total: int, rng: np.random.Generator, rank: Optional[int] = None) -> np.ndarray:
    """Random mixed state from a Ginibre matrix (rank defaults to full)."""
    k = d_total if rank is None else rank
    g = rng.standard_normal((d_total, k)) + 1j * rng.standard_normal((d_total, k))
    m = g @ g.conj().T
    return m / np.trace(m).real


def observable_from_pair(f0: np.ndarray, f1: np.ndarray) -> np.ndarray:
    """+1 on f0, -1 on f1."""
    return np.outer(f0, f0.conj()) - np.outer(f1, f1.conj())


def chsh_for_observables(rho: DensityMatrix, alice: Sequence[np.ndarray], bob: Sequence[np.ndarray]) -> float:
    """|<A0B0> + <A0B1> + <A1B0> - <A1B1>| for two observables on each side."""
    e = [[rho.expectation(np.kron(x, y)).real for y in bob] for x in alice]
    return float(abs(e[0][0] + e[0][1] + e[1][0] - e[1][1]))
