"""Werner's hidden-variable model.

The hidden variable is a unit vector ``r`` in Hilbert space, drawn from the
isotropic (Haar) distribution.  For an orthonormal basis ``{v_mu}`` Alice's
outcome is the basis vector most orthogonal to ``r``; Bob's outcome is random
with Born weights ``|<v_mu, r>|^2``.  Rank-2 and higher projectors are valued
through a privileged basis: the projector fires when Alice's minimizer over
that basis lies in the projector's subspace.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError, NumericError, PreconditionError, SearchExhaustedError
from .quantum import Projector, joint_probability, werner_family
from .rng import CounterStream

ORTHO_TOL = 1e-10
_BATCH = 1 << 18


@dataclass(frozen=True, eq=False)
class HilbertVector:
    components: np.ndarray
    real: bool = False

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float if self.real else complex)
        if self.real and np.iscomplexobj(self.components) and np.any(np.imag(self.components) != 0):
            raise PreconditionError("real-restricted vector has imaginary components")
        if abs(np.linalg.norm(c) - 1.0) > 1e-12:
            raise PreconditionError(f"hidden vector must have unit norm, got {np.linalg.norm(c)}")
        object.__setattr__(self, "components", c)

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    @classmethod
    def normalized(cls, v, real: bool = False) -> "HilbertVector":
        arr = np.asarray(v, dtype=float if real else complex)
        return cls(arr / np.linalg.norm(arr), real)


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """Basis vectors stored as the rows of ``vectors``."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors))
        if v.shape[0] != v.shape[1]:
            raise PreconditionError(f"basis must have d vectors of dimension d, got shape {v.shape}")
        gram = v.conj() @ v.T
        if np.max(np.abs(gram - np.eye(v.shape[0]))) > ORTHO_TOL:
            raise PreconditionError("basis vectors are not orthonormal")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def standard(cls, d: int) -> "OrthonormalBasis":
        return cls(np.eye(d))

    def projector(self, indices: Sequence[int]) -> Projector:
        return Projector.from_vectors(self.vectors[list(indices)])


@dataclass(frozen=True, eq=False)
class PrivilegedDecomposition:
    basis: OrthonormalBasis
    subspace_indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        idx = tuple(int(i) for i in self.subspace_indices)
        if len(set(idx)) != len(idx) or any(i < 0 or i >= self.basis.dim for i in idx):
            raise PreconditionError(f"invalid subspace indices {idx} for dimension {self.basis.dim}")
        object.__setattr__(self, "subspace_indices", idx)

    @property
    def rank(self) -> int:
        return len(self.subspace_indices)

    @property
    def complement_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.basis.dim) if i not in self.subspace_indices)

    def projector(self) -> Projector:
        return self.basis.projector(self.subspace_indices)


def werner_model_phi(d: int) -> float:
    """Flip parameter of the Werner state whose single-measurement statistics the model reproduces.

    Alice's minimizer carries average weight 1/d**3 (mean of the smallest
    coordinate of a uniform point on the simplex, over d), which fixes the
    joint probabilities to (d+1)/d**3 - |<v, w>|**2 / d**2.
    """
    return (1.0 - d + 1.0 / d) / d


def _overlaps(rs: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """|<v_mu, r>| for rows r (n, d) against basis rows (m, d) -> (n, m)."""
    return np.abs(rs @ vectors.conj().T)


def hidden_rows(stream: CounterStream, start: int, count: int, d: int, real: bool = False) -> np.ndarray:
    """Haar-random unit vectors for rows ``start .. start+count-1``."""
    if real:
        g = stream.normal_rows(start, count, d)
    else:
        n = stream.normal_rows(start, count, 2 * d)
        g = n[:, :d] + 1j * n[:, d:]
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_hidden(d: int, field: str, stream: CounterStream) -> HilbertVector:
    if d < 2:
        raise ArgumentError(f"hidden-variable dimension must be >= 2, got {d}")
    if field not in ("real", "complex"):
        raise ArgumentError(f"field must be 'real' or 'complex', got {field!r}")
    real = field == "real"
    row = hidden_rows(stream, stream.position, 1, d, real)[0]
    stream.position += 1
    return HilbertVector(row, real)


def _components(r) -> np.ndarray:
    return r.components if isinstance(r, HilbertVector) else np.asarray(r)


def alice_outcome(r, basis: OrthonormalBasis) -> int:
    """Index of the basis vector most orthogonal to ``r``; ties go to the lowest index."""
    c = _components(r)
    if c.shape[-1] != basis.dim:
        raise PreconditionError("hidden vector and basis dimensions differ")
    return int(np.argmin(_overlaps(c[None, :], basis.vectors)[0]))


def alice_outcomes(rs: np.ndarray, basis_vectors: np.ndarray) -> np.ndarray:
    return np.argmin(_overlaps(rs, basis_vectors), axis=1)


def born_weights(r, basis: OrthonormalBasis) -> np.ndarray:
    c = _components(r)
    w = _overlaps(c[None, :], basis.vectors)[0] ** 2
    if abs(w.sum() - 1.0) > 1e-8:
        raise NumericError(f"Born weights sum to {w.sum()}, basis is not complete")
    return w


def sample_index(weights: np.ndarray, u) -> np.ndarray:
    """Inverse-CDF draw along the last axis with uniforms ``u``."""
    cdf = np.cumsum(weights, axis=-1)
    idx = (np.asarray(u)[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, weights.shape[-1] - 1)


def bob_outcome(r, basis: OrthonormalBasis, stream: CounterStream) -> int:
    w = born_weights(r, basis)
    u = stream.next_uniforms(1)[0]
    return int(sample_index(w, u))


def coarse_value(r, decomp: PrivilegedDecomposition) -> int:
    return int(alice_outcome(r, decomp.basis) in decomp.subspace_indices)


def coarse_values(rs: np.ndarray, decomp: PrivilegedDecomposition) -> np.ndarray:
    return np.isin(alice_outcomes(rs, decomp.basis.vectors), decomp.subspace_indices)


# --------------------------------------------------------------------------
# Paradoxical hidden vectors in a real 3-dimensional space
# --------------------------------------------------------------------------

def rotated_bases(angle_deg: float = 45.0) -> tuple[OrthonormalBasis, OrthonormalBasis]:
    """({u, v, z}, {x, y, z}) with {u, v} the {x, y} pair rotated by ``angle_deg``."""
    t = np.deg2rad(angle_deg)
    x, y, z = np.eye(3)
    u = np.cos(t) * x + np.sin(t) * y
    v = np.sin(t) * x - np.cos(t) * y
    return OrthonormalBasis(np.array([u, v, z])), OrthonormalBasis(np.array([x, y, z]))


def _check_paradox_bases(u_basis: OrthonormalBasis, xyz_basis: OrthonormalBasis) -> None:
    for b in (u_basis, xyz_basis):
        if b.dim != 3 or np.iscomplexobj(b.vectors) and np.any(np.imag(b.vectors) != 0):
            raise PreconditionError("paradox bases must be real and three-dimensional")
    if abs(abs(np.dot(u_basis.vectors[2], xyz_basis.vectors[2])) - 1.0) > ORTHO_TOL:
        raise PreconditionError("the two bases must share their third vector z")


def paradox_mask(rs: np.ndarray, u_basis: OrthonormalBasis, xyz_basis: OrthonormalBasis,
                 margin: float = 1e-6) -> np.ndarray:
    """Rows satisfying |r.u| < |r.z| < |r.v| and |r.z| < |r.x| < |r.y| with the given margin."""
    ru, rv, rz = _overlaps(rs, u_basis.vectors.real).T
    rx, ry, _ = _overlaps(rs, xyz_basis.vectors.real).T
    return ((rz - ru > margin) & (rv - rz > margin)
            & (rx - rz > margin) & (ry - rx > margin))


def find_paradox(u_basis: OrthonormalBasis, xyz_basis: OrthonormalBasis, seed: int,
                 max_samples: int = 10_000_000, margin: float = 1e-6) -> HilbertVector:
    """Rejection-sample a real unit vector satisfying both overlap chains."""
    _check_paradox_bases(u_basis, xyz_basis)
    stream = CounterStream(seed, 0xA7)
    for start in range(0, max_samples, _BATCH):
        count = min(_BATCH, max_samples - start)
        rs = hidden_rows(stream, start, count, 3, real=True)
        hits = np.flatnonzero(paradox_mask(rs, u_basis, xyz_basis, margin))
        if hits.size:
            return HilbertVector(rs[hits[0]], real=True)
    raise SearchExhaustedError(f"no paradoxical hidden vector in {max_samples} samples")


def paradox_acceptance_rate(u_basis: OrthonormalBasis, xyz_basis: OrthonormalBasis, n_samples: int,
                            seed: int, margin: float = 1e-6) -> tuple[float, float]:
    """Measure of the paradox region on the real sphere: (rate, standard error)."""
    _check_paradox_bases(u_basis, xyz_basis)
    stream = CounterStream(seed, 0xA8)
    hits = 0
    for start in range(0, n_samples, _BATCH):
        count = min(_BATCH, n_samples - start)
        hits += int(paradox_mask(hidden_rows(stream, start, count, 3, True), u_basis, xyz_basis, margin).sum())
    p = hits / n_samples
    return p, float(np.sqrt(p * (1 - p) / n_samples))


@dataclass(frozen=True)
class AveragingReport:
    """Isotropic averages of the fine values P_u, P_v and the coarse value P_uv."""

    p_u: float
    p_v: float
    p_uv: float
    se_u: float
    se_v: float
    se_uv: float
    difference: float
    se_difference: float
    n_samples: int

    @property
    def deviation_in_se(self) -> float:
        return abs(self.difference) / self.se_difference if self.se_difference > 0 else 0.0


def averaging_identity(u_basis: OrthonormalBasis, xyz_basis: OrthonormalBasis, n_samples: int,
                       seed: int, real: bool = True) -> AveragingReport:
    """Monte Carlo check that <P_u> + <P_v> = <P_uv> once r is averaged.

    ``P_u``, ``P_v`` come from measuring {u, v, z}; ``P_uv`` is the coarse
    value with {x, y} privileged.  The difference is averaged per sample so
    its standard error accounts for the correlation between the terms.
    """
    _check_paradox_bases(u_basis, xyz_basis)
    decomp = PrivilegedDecomposition(xyz_basis, (0, 1))
    stream = CounterStream(seed, 0xA9)
    sums = np.zeros(4)
    sq = np.zeros(4)
    for start in range(0, n_samples, _BATCH):
        count = min(_BATCH, n_samples - start)
        rs = hidden_rows(stream, start, count, 3, real)
        fine = alice_outcomes(rs, u_basis.vectors)
        cols = np.stack([fine == 0, fine == 1, coarse_values(rs, decomp)], axis=1).astype(float)
        cols = np.concatenate([cols, (cols[:, 0] + cols[:, 1] - cols[:, 2])[:, None]], axis=1)
        sums += cols.sum(axis=0)
        sq += (cols ** 2).sum(axis=0)
    mean = sums / n_samples
    var = (sq - n_samples * mean ** 2) / (n_samples - 1)
    se = np.sqrt(np.maximum(var, 0.0) / n_samples)
    return AveragingReport(*(float(x) for x in (mean[0], mean[1], mean[2], se[0], se[1], se[2],
                                                 mean[3], se[3])), n_samples)


# --------------------------------------------------------------------------
# Validation against the quantum Werner state (qubits)
# --------------------------------------------------------------------------

def spin_up_vector(direction) -> np.ndarray:
    n = np.asarray(getattr(direction, "as_array", lambda: direction)(), dtype=float)
    theta = np.arccos(np.clip(n[2], -1.0, 1.0))
    phi = np.arctan2(n[1], n[0])
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def qubit_basis(direction) -> OrthonormalBasis:
    up = spin_up_vector(direction)
    down = np.array([-np.conj(up[1]), np.conj(up[0])])
    return OrthonormalBasis(np.array([up, down]))


@dataclass(frozen=True)
class ValidationRow:
    pair_index: int
    conjugation: str
    estimate: float
    std_error: float
    target: float
    n_samples: int

    @property
    def deviation_in_se(self) -> float:
        diff = abs(self.estimate - self.target)
        return diff / self.std_error if self.std_error > 0 else (0.0 if diff == 0 else np.inf)


@dataclass
class ValidationReport:
    rows: list[ValidationRow]
    tolerance_se: float = 4.0

    def matches(self, conjugation: str) -> bool:
        sel = [r for r in self.rows if r.conjugation == conjugation]
        return bool(sel) and all(r.deviation_in_se <= self.tolerance_se for r in sel)

    @property
    def matching_conventions(self) -> list[str]:
        return [c for c in dict.fromkeys(r.conjugation for r in self.rows) if self.matches(c)]

    @property
    def mismatch(self) -> bool:
        return not self.matching_conventions


CONJUGATIONS = ("none", "second_factor")


def validate_against_quantum(pairs, phi: float = -0.25, n_samples: int = 1_000_000, seed: int = 0,
                             conjugation="both", tolerance_se: float = 4.0) -> ValidationReport:
    """Compare the model's joint probability P(a up, b up) with the qubit Werner state.

    For each (a, b) pair the estimate is the isotropic average of
    [Alice picks spin-up along a] * [Bob's Born weight for spin-up along b].
    ``conjugation='second_factor'`` conjugates Bob's vectors in the
    computational basis before applying his rule; ``'both'`` reports both.
    """
    if n_samples < 100_000:
        raise ArgumentError("validation needs at least 1e5 samples")
    convs = CONJUGATIONS if conjugation == "both" else (conjugation,)
    for c in convs:
        if c not in CONJUGATIONS:
            raise ArgumentError(f"unknown conjugation convention {c!r}")
    rho = werner_family(2, phi)
    rows = []
    for k, (a, b) in enumerate(pairs):
        a_basis = qubit_basis(a)
        b_up = spin_up_vector(b)
        target = joint_probability(rho, Projector.from_vectors([a_basis.vectors[0]]),
                                   Projector.from_vectors([b_up]))
        stream = CounterStream(seed, 0xB1, k)
        for conv in convs:
            w = b_up.conj() if conv == "second_factor" else b_up
            total = 0.0
            total_sq = 0.0
            for start in range(0, n_samples, _BATCH):
                count = min(_BATCH, n_samples - start)
                rs = hidden_rows(stream, start, count, 2)
                x = (alice_outcomes(rs, a_basis.vectors) == 0) * np.abs(rs @ w.conj()) ** 2
                total += x.sum()
                total_sq += (x ** 2).sum()
            mean = total / n_samples
            var = (total_sq - n_samples * mean ** 2) / (n_samples - 1)
            rows.append(ValidationRow(k, conv, float(mean), float(np.sqrt(max(var, 0.0) / n_samples)),
                                      float(target), n_samples))
    return ValidationReport(rows, tolerance_se)
