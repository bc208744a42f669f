"""Coarse-then-fine measurements on Werner's model and on the Werner state.

Each side first measures a rank-2 projector.  Only when both coarse results
are 1 is the trial kept; each side then measures one of two rank-1 refinements
inside its coarse subspace and reports +1 or -1.  The hidden-variable side
uses the privileged-basis rule for Alice and a conditional Born rule for Bob;
the quantum side conditions the d-dimensional Werner state on the coarse
projectors and evaluates the CHSH combination on the resulting qubit pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chsh import ChshValue, CorrelationEstimate, chsh_value
from .errors import ArgumentError, EmptySubensembleError, NumericError, PreconditionError
from .quantum import (DensityMatrix, chsh_closed_form, chsh_for_observables, chsh_quantum_max,
                      correlation_matrix, fix_phase, observable_from_pair, postselect_state,
                      werner_family)
from .rng import CounterStream
from .werner_hv import (OrthonormalBasis, PrivilegedDecomposition, alice_outcomes, hidden_rows,
                        spin_up_vector, werner_model_phi)

_BATCH = 1 << 17
_TAG = 0x5E9


@dataclass(frozen=True, eq=False)
class SequentialSetting:
    """Rank-2 coarse measurement plus two fine pairs (one per CHSH arm).

    ``fine_pairs[k]`` is a (2, d) array whose rows are orthonormal vectors in
    the coarse subspace; row 0 reports +1, row 1 reports -1.
    """

    coarse: PrivilegedDecomposition
    fine_pairs: tuple = field(default=())

    def __post_init__(self):
        p = self.coarse.projector().matrix
        pairs = tuple(np.asarray(fp, dtype=complex) for fp in self.fine_pairs)
        for k, fp in enumerate(pairs):
            if fp.shape != (2, self.dim):
                raise PreconditionError(f"fine pair {k} must have shape (2, {self.dim})")
            if np.max(np.abs(fp.conj() @ fp.T - np.eye(2))) > 1e-10:
                raise PreconditionError(f"fine pair {k} is not orthonormal")
            if np.max(np.abs(fp @ p.T - fp)) > 1e-10:
                raise PreconditionError(f"fine pair {k} leaves the coarse subspace")
        object.__setattr__(self, "fine_pairs", pairs)

    @property
    def dim(self) -> int:
        return self.coarse.basis.dim

    @property
    def subspace_vectors(self) -> np.ndarray:
        return self.coarse.basis.vectors[list(self.coarse.subspace_indices)]

    @property
    def complement_vectors(self) -> np.ndarray:
        return self.coarse.basis.vectors[list(self.coarse.complement_indices)]

    def fine_basis(self, arm: int) -> np.ndarray:
        """The fine pair completed by the privileged complement vectors (rows)."""
        return np.concatenate([self.fine_pairs[arm], self.complement_vectors], axis=0)


@dataclass(frozen=True)
class SequentialTrialRecord:
    retained: bool
    alice_fine: Optional[int]
    bob_fine: Optional[int]
    arm_a: int
    arm_b: int
    alice_coarse: int = 0
    bob_coarse: int = 0
    escaped: bool = False


@dataclass
class _Batch:
    alice_coarse: np.ndarray
    bob_coarse: np.ndarray
    retained: np.ndarray
    escaped: np.ndarray
    alice_fine: np.ndarray
    bob_fine: np.ndarray


def _run_batch(rs: np.ndarray, u: np.ndarray, alice: SequentialSetting, bob: SequentialSetting,
               arm_a: int, arm_b: int, conjugate_bob: bool = False) -> _Batch:
    """Vectorized sequential trials.  ``u[:, 0]`` drives Bob's fine draw, ``u[:, 1]`` his coarse draw."""
    rb = rs.conj() if conjugate_bob else rs
    a_coarse = np.isin(alice_outcomes(rs, alice.coarse.basis.vectors), alice.coarse.subspace_indices)
    p_coarse = (np.abs(rb @ bob.subspace_vectors.conj().T) ** 2).sum(axis=1)
    b_coarse = u[:, 1] < p_coarse
    retained = a_coarse & b_coarse

    fine_idx = alice_outcomes(rs, alice.fine_basis(arm_a))
    escaped = retained & (fine_idx >= 2)
    a_fine = np.where(fine_idx == 0, 1, -1).astype(np.int8)

    f0 = bob.fine_pairs[arm_b][0]
    p_up = np.abs(rb @ f0.conj()) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        p_cond = np.where(p_coarse > 0, p_up / p_coarse, 0.0)
    bad = retained & ((p_cond < -1e-10) | (p_cond > 1.0 + 1e-10))
    if np.any(bad):
        raise NumericError("Bob's conditional probability left [0, 1]")
    b_fine = np.where(u[:, 0] < p_cond, 1, -1).astype(np.int8)
    return _Batch(a_coarse, b_coarse, retained, escaped, a_fine, b_fine)


def run_sequential_trial(r, alice: SequentialSetting, bob: SequentialSetting, arm_a: int, arm_b: int,
                         stream: CounterStream, conjugate_bob: bool = False) -> SequentialTrialRecord:
    """One coarse-then-fine trial for a given hidden vector."""
    comps = np.asarray(getattr(r, "components", r), dtype=complex)
    if comps.shape != (alice.dim,) or bob.dim != alice.dim:
        raise PreconditionError("hidden vector and settings dimensions differ")
    u = stream.next_uniforms(2)[None, :]
    b = _run_batch(comps[None, :], u, alice, bob, arm_a, arm_b, conjugate_bob)
    kept = bool(b.retained[0])
    esc = bool(b.escaped[0])
    return SequentialTrialRecord(
        retained=kept,
        alice_fine=int(b.alice_fine[0]) if kept and not esc else None,
        bob_fine=int(b.bob_fine[0]) if kept else None,
        arm_a=arm_a, arm_b=arm_b,
        alice_coarse=int(b.alice_coarse[0]), bob_coarse=int(b.bob_coarse[0]),
        escaped=esc,
    )


@dataclass(frozen=True)
class ArmReport:
    arm_a: int
    arm_b: int
    n_trials: int
    n_retained: int
    n_escaped: int
    estimate: CorrelationEstimate

    @property
    def retention_rate(self) -> float:
        return self.n_retained / self.n_trials

    @property
    def escaped_fraction(self) -> float:
        return self.n_escaped / self.n_retained if self.n_retained else 0.0


@dataclass(frozen=True)
class PostselectedStatistics:
    arms: tuple[ArmReport, ArmReport, ArmReport, ArmReport]

    @property
    def estimates(self) -> tuple[CorrelationEstimate, ...]:
        return tuple(a.estimate for a in self.arms)

    @property
    def chsh(self) -> ChshValue:
        return chsh_value(*self.estimates)

    @property
    def retention_rate(self) -> float:
        return sum(a.n_retained for a in self.arms) / sum(a.n_trials for a in self.arms)


ARM_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))


def _arm_stream(seed: int, arm_a: int, arm_b: int) -> CounterStream:
    return CounterStream(seed, _TAG, arm_a, arm_b)


def simulate_arm(alice: SequentialSetting, bob: SequentialSetting, arm_a: int, arm_b: int, n_trials: int,
                 seed: int, conjugate_bob: bool = False) -> ArmReport:
    stream = _arm_stream(seed, arm_a, arm_b)
    r_stream, u_stream = stream.child(0), stream.child(1)
    d = alice.dim
    products = []
    n_ret = n_esc = 0
    for start in range(0, n_trials, _BATCH):
        count = min(_BATCH, n_trials - start)
        rs = hidden_rows(r_stream, start, count, d)
        u = u_stream.uniform_rows(start, count, 2)
        b = _run_batch(rs, u, alice, bob, arm_a, arm_b, conjugate_bob)
        n_ret += int(b.retained.sum())
        n_esc += int(b.escaped.sum())
        good = b.retained & ~b.escaped
        products.append((b.alice_fine[good] * b.bob_fine[good]).astype(np.float64))
    prod = np.concatenate(products)
    if prod.size == 0:
        raise EmptySubensembleError(f"no retained trials for arm ({arm_a}, {arm_b}) in {n_trials}")
    est = CorrelationEstimate.from_products(prod, n_trials)
    return ArmReport(arm_a, arm_b, n_trials, n_ret, n_esc, est)


def postselected_statistics(alice: SequentialSetting, bob: SequentialSetting, n_trials: int, seed: int,
                            conjugate_bob: bool = False) -> PostselectedStatistics:
    """Hidden-variable postselected correlations for the four CHSH arm combinations.

    Correlations use retained trials whose fine outcome stayed inside the
    coarse subspace; escaped trials are counted per arm, never reassigned.
    """
    if n_trials < 10_000:
        raise ArgumentError("postselected statistics need at least 1e4 trials per arm")
    return PostselectedStatistics(tuple(
        simulate_arm(alice, bob, i, j, n_trials, seed, conjugate_bob) for i, j in ARM_ORDER))


def single_measurement_outcomes(basis_a: np.ndarray, basis_b: np.ndarray, n_trials: int, seed: int,
                                arm_a: int = 0, arm_b: int = 0):
    """Plain Werner-model outcomes for two-outcome measurements (no coarse step).

    Uses the same streams as :func:`simulate_arm`, so a sequential run with
    full-space coarse projectors reproduces these outcomes exactly.
    """
    stream = _arm_stream(seed, arm_a, arm_b)
    d = basis_a.shape[1]
    rs = hidden_rows(stream.child(0), 0, n_trials, d)
    u = stream.child(1).uniform_rows(0, n_trials, 2)
    a = np.where(alice_outcomes(rs, basis_a) == 0, 1, -1).astype(np.int8)
    b = np.where(u[:, 0] < np.abs(rs @ basis_b[0].conj()) ** 2, 1, -1).astype(np.int8)
    return a, b


def sequential_outcomes(alice: SequentialSetting, bob: SequentialSetting, n_trials: int, seed: int,
                        arm_a: int = 0, arm_b: int = 0) -> _Batch:
    stream = _arm_stream(seed, arm_a, arm_b)
    rs = hidden_rows(stream.child(0), 0, n_trials, alice.dim)
    u = stream.child(1).uniform_rows(0, n_trials, 2)
    return _run_batch(rs, u, alice, bob, arm_a, arm_b)


# --------------------------------------------------------------------------
# Quantum side
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantumReference:
    chsh_arms: float
    chsh_max: float
    retention: float
    effective_state: DensityMatrix


def _subspace_coords(setting: SequentialSetting, arm: int) -> np.ndarray:
    """Fine observable (+1 on row 0, -1 on row 1) in coordinates of the privileged subspace vectors."""
    v = setting.subspace_vectors  # rows
    c0 = v.conj() @ setting.fine_pairs[arm][0]
    c1 = v.conj() @ setting.fine_pairs[arm][1]
    return observable_from_pair(c0, c1)


def quantum_reference(phi: float, d: int, alice: SequentialSetting, bob: SequentialSetting,
                      check_max: bool = True) -> QuantumReference:
    """CHSH of the fine measurements on the Werner state conditioned on both coarse projectors."""
    if alice.coarse.rank != 2 or bob.coarse.rank != 2:
        raise PreconditionError("coarse projectors must have rank 2")
    if alice.dim != d or bob.dim != d:
        raise PreconditionError("settings dimension differs from d")
    rho = werner_family(d, phi)
    eff, prob = postselect_state(rho, alice.coarse.projector(), bob.coarse.projector(),
                                 alice.subspace_vectors.T, bob.subspace_vectors.T)
    arms_val = chsh_for_observables(eff, [_subspace_coords(alice, 0), _subspace_coords(alice, 1)],
                                    [_subspace_coords(bob, 0), _subspace_coords(bob, 1)])
    best = chsh_quantum_max(eff) if check_max else chsh_closed_form(eff)
    return QuantumReference(arms_val, best, prob, eff)


# --------------------------------------------------------------------------
# Settings search
# --------------------------------------------------------------------------

def frame_from_params(params: np.ndarray, d: int, k: int = 2) -> np.ndarray:
    """Orthonormal k-frame (columns) from 2*d*k unconstrained reals, phase-fixed per column."""
    z = params[: d * k].reshape(d, k) + 1j * params[d * k: 2 * d * k].reshape(d, k)
    q, _ = np.linalg.qr(z)
    return np.stack([fix_phase(q[:, j]) for j in range(k)], axis=1)


def complete_basis(frame: np.ndarray) -> np.ndarray:
    """Rows: the frame vectors followed by a deterministic orthonormal complement."""
    d, k = frame.shape
    q, _ = np.linalg.qr(np.concatenate([frame, np.eye(d, dtype=complex)], axis=1))
    comp = np.array([fix_phase(q[:, j]) for j in range(k, d)]).reshape(d - k, d)
    return np.concatenate([frame.T, comp], axis=0)


def _qubit_pair(bloch: np.ndarray) -> np.ndarray:
    up = spin_up_vector(bloch)
    down = np.array([-np.conj(up[1]), np.conj(up[0])])
    return np.array([up, down])


def optimal_bloch_settings(eff: DensityMatrix):
    """Closed-form CHSH-optimal spin directions (a, a', b, b') for a two-qubit state."""
    t = correlation_matrix(eff)
    w, e = np.linalg.eigh(t @ t.T)
    order = np.argsort(-w)
    m1, m2 = max(w[order[0]], 0.0), max(w[order[1]], 0.0)
    e1, e2 = e[:, order[0]], e[:, order[1]]
    theta = np.arctan2(np.sqrt(m2), np.sqrt(m1))
    a = np.cos(theta) * e1 + np.sin(theta) * e2
    ap = np.cos(theta) * e1 - np.sin(theta) * e2

    def unit(v, fallback):
        n = np.linalg.norm(v)
        return v / n if n > 1e-12 else fallback

    b = unit(t.T @ e1, np.array([0.0, 0.0, 1.0]))
    bp = unit(t.T @ e2, np.array([1.0, 0.0, 0.0]))
    return a, ap, b, bp


def settings_from_frames(frame_a: np.ndarray, frame_b: np.ndarray, phi: float) -> tuple[SequentialSetting, SequentialSetting]:
    """Coarse decompositions from the frames, fine pairs chosen CHSH-optimally for the filtered state."""
    d = frame_a.shape[0]
    basis_a = OrthonormalBasis(complete_basis(frame_a))
    basis_b = OrthonormalBasis(complete_basis(frame_b))
    dec_a = PrivilegedDecomposition(basis_a, (0, 1))
    dec_b = PrivilegedDecomposition(basis_b, (0, 1))
    eff, _ = postselect_state(werner_family(d, phi), dec_a.projector(), dec_b.projector(), frame_a, frame_b)
    a, ap, b, bp = optimal_bloch_settings(eff)
    lift_a = lambda bloch: _qubit_pair(bloch) @ frame_a.T  # noqa: E731
    lift_b = lambda bloch: _qubit_pair(bloch) @ frame_b.T  # noqa: E731
    alice = SequentialSetting(dec_a, (lift_a(a), lift_a(ap)))
    bob = SequentialSetting(dec_b, (lift_b(b), lift_b(bp)))
    return alice, bob


class _Objective:
    def __init__(self, d: int, phi: float):
        self.d = d
        self.rho = werner_family(d, phi).matrix
        self.count = 0

    def __call__(self, x: np.ndarray) -> float:
        self.count += 1
        d = self.d
        fa = frame_from_params(x[: 4 * d], d)
        fb = frame_from_params(x[4 * d:], d)
        w = np.kron(fa, fb)
        m = w.conj().T @ self.rho @ w
        p = np.trace(m).real
        if p <= 1e-12:
            return 0.0
        eff = DensityMatrix(m / p, (2, 2))
        return chsh_closed_form(eff)


@dataclass
class SearchIteration:
    iteration: int
    evaluations: int
    best_quantum: float
    hv_chsh: float
    hv_std_error: float
    retention: float
    escaped_fraction: float


@dataclass
class SearchResult:
    d: int
    phi: float
    alice: SequentialSetting
    bob: SequentialSetting
    best_quantum: float
    quantum: QuantumReference
    hv: PostselectedStatistics
    history: list[SearchIteration]
    evaluations: int

    @property
    def violation_found(self) -> bool:
        return self.best_quantum > 2.0


def search_settings(d: int, phi: Optional[float] = None, budget: int = 10_000, seed: int = 0,
                    restarts: int = 5, hv_trials: int = 100_000) -> SearchResult:
    """Random-restart coordinate ascent over both parties' coarse frames.

    For each candidate pair of rank-2 subspaces the fine pairs are the CHSH
    optimal ones for the filtered Werner state, so the objective is that
    state's CHSH value.  Every time the best configuration improves at the end
    of a coordinate sweep, the hidden-variable side is simulated at it and
    recorded in ``history``.
    """
    if d < 2:
        raise ArgumentError("d must be >= 2")
    if budget < 1000:
        raise ArgumentError("budget must be >= 1000 evaluations")
    if phi is None:
        phi = werner_model_phi(d)
    rng = np.random.default_rng([int(seed), _TAG, d])
    obj = _Objective(d, phi)
    n_par = 8 * d
    per_restart = budget // restarts
    best_x, best_val = None, -np.inf
    history: list[SearchIteration] = []
    hv_cache: Optional[tuple[float, float, float, float]] = None

    def hv_summary(x):
        alice, bob = settings_from_frames(frame_from_params(x[: 4 * d], d), frame_from_params(x[4 * d:], d), phi)
        stats = postselected_statistics(alice, bob, hv_trials, seed)
        chsh = stats.chsh
        esc = sum(a.n_escaped for a in stats.arms) / max(1, sum(a.n_retained for a in stats.arms))
        return chsh.value, chsh.std_error, stats.retention_rate, esc

    for _ in range(restarts):
        x = rng.standard_normal(n_par)
        val = obj(x)
        step = 0.5
        stop = obj.count + per_restart - 1
        while obj.count < stop and step > 1e-7:
            improved = False
            for k in rng.permutation(n_par):
                if obj.count >= stop:
                    break
                for delta in (step, -step):
                    if obj.count >= stop:
                        break
                    trial = x.copy()
                    trial[k] += delta
                    tv = obj(trial)
                    if tv > val:
                        x, val = trial, tv
                        improved = True
                        break
            if not improved:
                step *= 0.5
            if val > best_val:
                best_x, best_val = x.copy(), val
                hv_cache = hv_summary(best_x)
            history.append(SearchIteration(len(history), obj.count, best_val, *hv_cache))

    alice, bob = settings_from_frames(frame_from_params(best_x[: 4 * d], d),
                                      frame_from_params(best_x[4 * d:], d), phi)
    qref = quantum_reference(phi, d, alice, bob)
    hv = postselected_statistics(alice, bob, hv_trials, seed)
    return SearchResult(d, phi, alice, bob, best_val, qref, hv, history, obj.count)
