"""Classical angular-momentum model with threshold readout.

A source emits a random unit vector ``n`` (isotropic on the sphere).  Alice
records ``sign(n.a)`` when ``|n.a| > 1/sqrt(2)`` and 0 otherwise; Bob applies
the same thresholds to ``-n.b`` (or to ``+n.b`` when ``flip_bob`` is set,
which is the default so that correlations carry the familiar positive sign at
``a.b = 1``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ArgumentError, EmptySubensembleError, NumericError, PreconditionError
from .rng import CounterStream

THRESHOLD = 1.0 / np.sqrt(2.0)
UNIT_TOL = 1e-12

_CHUNK = 1 << 18


class Trit(enum.IntEnum):
    MINUS = -1
    ZERO = 0
    PLUS = 1


@dataclass(frozen=True)
class Direction3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm2 = self.x * self.x + self.y * self.y + self.z * self.z
        if not np.isfinite(norm2) or abs(norm2 - 1.0) > UNIT_TOL:
            raise PreconditionError(f"Direction3 must be a unit vector, got |v|^2 = {norm2!r}")

    @classmethod
    def from_vector(cls, v) -> "Direction3":
        """Normalize any nonzero 3-vector."""
        arr = np.asarray(v, dtype=float).reshape(3)
        norm = np.linalg.norm(arr)
        if not np.isfinite(norm) or norm == 0.0:
            raise PreconditionError(f"cannot normalize vector {arr.tolist()}")
        arr = arr / norm
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> "Direction3":
        return cls.from_vector([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])

    @classmethod
    def in_plane(cls, degrees: float) -> "Direction3":
        """Unit vector in the xy plane at the given angle from the x axis."""
        rad = np.deg2rad(degrees)
        return cls.from_vector([np.cos(rad), np.sin(rad), 0.0])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dot(self, other: "Direction3") -> float:
        return float(self.x * other.x + self.y * other.y + self.z * other.z)


@dataclass(frozen=True)
class ReadoutConvention:
    flip_bob: bool = True


@dataclass(frozen=True)
class TrialRecord:
    setting_a_id: int
    setting_b_id: int
    alpha: Trit
    beta: Trit


@dataclass
class TrialRecords:
    """Columnar store of trial records (one entry per trial)."""

    setting_a_id: np.ndarray
    setting_b_id: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    settings_a: tuple = field(default=())
    settings_b: tuple = field(default=())

    def __len__(self) -> int:
        return int(self.alpha.shape[0])

    def __iter__(self) -> Iterator[TrialRecord]:
        for ia, ib, al, be in zip(self.setting_a_id, self.setting_b_id, self.alpha, self.beta):
            yield TrialRecord(int(ia), int(ib), Trit(int(al)), Trit(int(be)))

    def __getitem__(self, i: int) -> TrialRecord:
        return TrialRecord(int(self.setting_a_id[i]), int(self.setting_b_id[i]),
                           Trit(int(self.alpha[i])), Trit(int(self.beta[i])))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrialRecords):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("setting_a_id", "setting_b_id", "alpha", "beta"))

    @classmethod
    def from_records(cls, records: Sequence[TrialRecord]) -> "TrialRecords":
        return cls(
            np.array([r.setting_a_id for r in records], dtype=np.int32),
            np.array([r.setting_b_id for r in records], dtype=np.int32),
            np.array([int(r.alpha) for r in records], dtype=np.int8),
            np.array([int(r.beta) for r in records], dtype=np.int8),
        )

    @classmethod
    def concat(cls, parts: Sequence["TrialRecords"]) -> "TrialRecords":
        first = parts[0]
        return cls(
            np.concatenate([p.setting_a_id for p in parts]),
            np.concatenate([p.setting_b_id for p in parts]),
            np.concatenate([p.alpha for p in parts]),
            np.concatenate([p.beta for p in parts]),
            first.settings_a,
            first.settings_b,
        )

    def pair(self, pair: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        mask = (self.setting_a_id == pair[0]) & (self.setting_b_id == pair[1])
        return self.alpha[mask], self.beta[mask]


def _unit(v, name: str) -> np.ndarray:
    if isinstance(v, Direction3):
        return v.as_array()
    arr = np.asarray(v, dtype=float)
    norms = np.linalg.norm(arr, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise PreconditionError(f"{name} must be unit-norm")
    return arr


def threshold(x):
    """Three-valued threshold: +1 above 1/sqrt(2), -1 below -1/sqrt(2), else 0.

    The thresholds themselves fall in the dead zone.
    """
    x = np.asarray(x)
    return (x > THRESHOLD).astype(np.int8) - (x < -THRESHOLD).astype(np.int8)


def sample_direction(stream: CounterStream) -> Direction3:
    g = stream.next_normals(3)
    return Direction3.from_vector(g)


def sample_directions(stream: CounterStream, start: int, count: int) -> np.ndarray:
    """Isotropic unit vectors for trials ``start .. start+count-1``, shape (count, 3)."""
    g = stream.normal_rows(start, count, 3)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def readout(n, setting, role: str, convention: ReadoutConvention = ReadoutConvention()) -> Trit:
    n_arr = _unit(n, "n")
    s_arr = _unit(setting, "setting")
    proj = float(np.dot(n_arr, s_arr))
    if role == "alice":
        return Trit(int(threshold(proj)))
    if role == "bob":
        return Trit(int(threshold(proj if convention.flip_bob else -proj)))
    raise ArgumentError(f"role must be 'alice' or 'bob', got {role!r}")


def _readout_many(ns: np.ndarray, a: np.ndarray, b: np.ndarray, flip_bob: bool):
    alpha = threshold(ns @ a)
    pb = ns @ b
    beta = threshold(pb if flip_bob else -pb)
    return alpha, beta


def run_block(settings_a: Sequence[Direction3], settings_b: Sequence[Direction3], trials_per_pair: int,
              seed: int, convention: ReadoutConvention = ReadoutConvention()) -> TrialRecords:
    """Generate ``trials_per_pair`` trials for every (a, b) setting pair.

    Pair ``(i, j)`` draws its source vectors from the counter stream keyed by
    ``(seed, i, j)``; trial ``k`` of that pair always uses the same counters.
    """
    if trials_per_pair < 1:
        raise ArgumentError("trials_per_pair must be >= 1")
    if not settings_a or not settings_b:
        raise ArgumentError("settings lists must be non-empty")
    parts = []
    for i, a in enumerate(settings_a):
        a_arr = _unit(a, "settings_a")
        for j, b in enumerate(settings_b):
            b_arr = _unit(b, "settings_b")
            stream = CounterStream(seed, i, j)
            alphas, betas = [], []
            for start in range(0, trials_per_pair, _CHUNK):
                count = min(_CHUNK, trials_per_pair - start)
                ns = sample_directions(stream, start, count)
                al, be = _readout_many(ns, a_arr, b_arr, convention.flip_bob)
                alphas.append(al)
                betas.append(be)
            parts.append(TrialRecords(
                np.full(trials_per_pair, i, dtype=np.int32),
                np.full(trials_per_pair, j, dtype=np.int32),
                np.concatenate(alphas),
                np.concatenate(betas),
            ))
    out = TrialRecords.concat(parts)
    out.settings_a = tuple(settings_a)
    out.settings_b = tuple(settings_b)
    return out


# --------------------------------------------------------------------------
# Quadrature oracle
# --------------------------------------------------------------------------

_GL_ORDER = 24
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)
_MAX_LEVEL = 16


def _arc_fraction(level, t, c, s):
    """Fraction of azimuths phi with t*c + sqrt(1-t^2)*s*cos(phi) > level."""
    w = s * np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    out = (t * c > level).astype(float)
    ok = w > 1e-300
    ratio = np.clip((level - t[ok] * c) / w[ok], -1.0, 1.0)
    out[ok] = np.arccos(ratio) / np.pi
    return out


def _integrands(t, c, s):
    """Signed product and retention indicator, azimuth-averaged, at polar cosines t."""
    q_plus = _arc_fraction(THRESHOLD, t, c, s)
    q_minus = _arc_fraction(THRESHOLD, -t, c, s)  # fraction with n.b < -threshold
    alpha = np.sign(t)
    return alpha * (q_plus - q_minus), q_plus + q_minus


def _breakpoints(lo, hi, gamma):
    cands = [lo, hi]
    for base in (gamma, np.pi - gamma):
        for off in (np.pi / 4, -np.pi / 4):
            for sign in (1.0, -1.0):
                cands.append(sign * np.cos(base + off))
    pts = sorted({float(x) for x in cands if lo <= x <= hi})
    return np.array(pts)


def _composite_gl(edges, level, c, s):
    num = 0.0
    den = 0.0
    sub = 1 << level
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 0.0:
            continue
        grid = np.linspace(lo, hi, sub + 1)
        half = 0.5 * np.diff(grid)
        mid = 0.5 * (grid[:-1] + grid[1:])
        t = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
        wts = (half[:, None] * _GL_W[None, :]).ravel()
        f_num, f_den = _integrands(t, c, s)
        num += float(np.dot(wts, f_num))
        den += float(np.dot(wts, f_den))
    # polar cosine has density 1/2 on [-1, 1]
    return 0.5 * num, 0.5 * den


def _oracle_integrals(cos_ab: float, tol: float):
    c = float(np.clip(cos_ab, -1.0, 1.0))
    s = float(np.sqrt(max(0.0, 1.0 - c * c)))
    gamma = float(np.arccos(c))
    edges_pos = _breakpoints(THRESHOLD, 1.0, gamma)
    edges_neg = _breakpoints(-1.0, -THRESHOLD, gamma)
    prev = None
    for level in range(_MAX_LEVEL + 1):
        n1, d1 = _composite_gl(edges_pos, level, c, s)
        n2, d2 = _composite_gl(edges_neg, level, c, s)
        cur = (n1 + n2, d1 + d2)
        if prev is not None and abs(cur[0] - prev[0]) < tol and abs(cur[1] - prev[1]) < tol:
            return cur
        prev = cur
    raise NumericError(f"quadrature did not converge for a.b = {cos_ab}")


def retention_probability(a, b, tol: float = 1e-6) -> float:
    """Probability that both readouts are nonzero (independent of the sign convention)."""
    a_arr = _unit(a, "a")
    b_arr = _unit(b, "b")
    return _oracle_integrals(float(a_arr @ b_arr), tol)[1]


def oracle_correlation(a, b, postselect: bool = False,
                       convention: ReadoutConvention = ReadoutConvention(), tol: float = 1e-6) -> float:
    """Deterministic quadrature value of <alpha beta>.

    The polar axis is put along ``a`` so Alice's result depends only on the
    polar cosine ``t``; for each ``t`` the azimuthal measure of Bob's caps is
    an arc length, so only the 1-D integral in ``t`` is done numerically
    (composite Gauss-Legendre split at the kinks, refined dyadically until two
    successive levels agree within ``tol``).

    With ``postselect`` the average is conditioned on both results nonzero.
    """
    a_arr = _unit(a, "a")
    b_arr = _unit(b, "b")
    num, den = _oracle_integrals(float(a_arr @ b_arr), tol)
    sign = 1.0 if convention.flip_bob else -1.0
    if not postselect:
        return sign * num
    if den < 1e-14:
        raise EmptySubensembleError(
            f"no events survive postselection at a.b = {float(a_arr @ b_arr):.6g} "
            f"(retention probability {den:.3g})")
    return sign * num / den
