"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed in the summary."""
import contextlib
import filecmp
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from postselect_bell.chsh import TSIRELSON_BOUND, chsh_value, estimate_correlation, figure_config, scan_classical_chsh
from postselect_bell.classical import Direction3, ReadoutConvention, oracle_correlation, run_block
from postselect_bell.quantum import (DensityMatrix, chsh_quantum_max, make_state, ppt_min_eigenvalue,
                                     random_density_matrix, spin_correlation)
from postselect_bell.runner import EXPERIMENTS, run_experiment, validate_config
from postselect_bell.sequential import search_settings
from postselect_bell.werner_hv import (PrivilegedDecomposition, alice_outcome, averaging_identity, coarse_value,
                                       find_paradox, rotated_bases, validate_against_quantum)


@contextlib.contextmanager
def criterion(number, title):
    start = time.perf_counter()
    notes = []
    try:
        yield notes
    except BaseException as exc:
        detail = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        line = f"[{number}] FAIL {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    extra = f" ({'; '.join(notes)})" if notes else ""
    line = f"[{number}] PASS {title} in {time.perf_counter() - start:.1f}s{extra}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_1_classical_bound():
    with criterion(1, "unpostselected classical CHSH <= 2 on 200 random settings") as notes:
        t0 = time.perf_counter()
        vals = scan_classical_chsh(200, seed=0, include_figure=False)
        elapsed = time.perf_counter() - t0
        top = max(v.max_over_placements for _, v in vals)
        notes.append(f"max {top:.6f}")
        assert len(vals) == 200
        assert top <= 2 + 1e-9, f"max CHSH {top}"
        assert elapsed < 10, f"runtime {elapsed:.1f}s"


def test_2_postselected_violation():
    with criterion(2, "postselected figure configuration gives CHSH = 4") as notes:
        t0 = time.perf_counter()
        cfg = figure_config()
        recs = run_block([cfg.a, cfg.a_prime], [cfg.b, cfg.b_prime], 1_000_000, seed=0,
                         convention=ReadoutConvention(flip_bob=True))
        ests = [estimate_correlation(recs, p, postselect=True) for p in ((0, 0), (0, 1), (1, 0), (1, 1))]
        elapsed = time.perf_counter() - t0
        for e in ests:
            assert abs(e.mean) == 1.0 and e.std_error == 0.0, f"estimate {e}"
        value = chsh_value(*ests)
        notes.append(f"value {value.value}, retained {min(e.n_kept for e in ests)}+ per pair")
        assert value.value == 4.0
        assert value.value > TSIRELSON_BOUND
        assert elapsed < 30, f"runtime {elapsed:.1f}s"


def test_3_correlation_endpoints():
    with criterion(3, "classical correlation endpoints 1 - 2^-1/2 and Monte Carlo agreement") as notes:
        z, mz = Direction3(0, 0, 1), Direction3(0, 0, -1)
        endpoint = 1 - 2 ** -0.5
        up = oracle_correlation(z, z)
        down = oracle_correlation(z, mz)
        assert abs(up - endpoint) < 1e-6, up
        assert abs(down + endpoint) < 1e-6, down
        worst = 0.0
        for a, b in ((z, z), (z, mz), (Direction3.in_plane(0), Direction3.in_plane(30)), (Direction3.in_plane(0), Direction3.in_plane(120))):
            recs = run_block([a], [b], 1_000_000, seed=1)
            est = estimate_correlation(recs, (0, 0))
            dev = abs(est.mean - oracle_correlation(a, b)) / est.std_error
            worst = max(worst, dev)
            assert dev < 4, f"Monte Carlo off by {dev:.2f} SE"
        notes.append(f"oracle {up:.9f}, worst MC deviation {worst:.2f} SE")


def test_4_quantum_core():
    with criterion(4, "Werner and singlet correlations, CHSH maxima, Tsirelson bound") as notes:
        rng = np.random.default_rng(4)
        rho = make_state("werner_qubit")
        for _ in range(50):
            a = Direction3.from_vector(rng.standard_normal(3))
            b = Direction3.from_vector(rng.standard_normal(3))
            assert abs(spin_correlation(rho, a, b) + a.dot(b) / 2) < 1e-10
        w = chsh_quantum_max(rho)
        s = chsh_quantum_max(make_state("singlet"))
        assert abs(w - np.sqrt(2)) < 1e-6, w
        assert abs(s - 2 * np.sqrt(2)) < 1e-6, s
        top = max(chsh_quantum_max(DensityMatrix(random_density_matrix(4, rng, rank=1 + k % 4), (2, 2)))
                  for k in range(200))
        assert top <= 2 * np.sqrt(2) + 1e-9, top
        notes.append(f"werner {w:.9f}, singlet {s:.9f}, random max {top:.6f}")


def test_5_ppt_witness():
    with criterion(5, "partial-transpose witness values") as notes:
        w = ppt_min_eigenvalue(make_state("werner_qubit"))
        s = ppt_min_eigenvalue(make_state("singlet"))
        notes.append(f"werner {w:.12f}, singlet {s:.12f}")
        assert abs(w + 1 / 8) < 1e-10, f"werner {w}"
        assert abs(s + 1 / 4) < 1e-10, f"singlet minimum eigenvalue is {s:.12f}, criterion expects -0.25"


def test_6_hidden_variable_validation():
    with criterion(6, "hidden-variable model reproduces Werner joint probabilities") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(6)
        pairs = [(Direction3.from_vector(rng.standard_normal(3)), Direction3.from_vector(rng.standard_normal(3)))
                 for _ in range(10)]
        rep = validate_against_quantum(pairs, n_samples=1_000_000, seed=6, conjugation="both")
        elapsed = time.perf_counter() - t0
        worst = {c: max(r.deviation_in_se for r in rep.rows if r.conjugation == c) for c in ("none", "second_factor")}
        notes.append(f"matching {rep.matching_conventions or 'none (mismatch reported)'}; "
                     f"worst deviation none={worst['none']:.2f} SE, second_factor={worst['second_factor']:.2f} SE")
        assert rep.matching_conventions or rep.mismatch
        assert rep.matching_conventions, "structured mismatch report"
        assert elapsed < 120, f"runtime {elapsed:.1f}s"


def test_7_paradox_demo():
    with criterion(7, "paradoxical hidden vector and averaging identity") as notes:
        u_basis, xyz = rotated_bases(45)
        r = find_paradox(u_basis, xyz, seed=7)
        assert alice_outcome(r, u_basis) == 0
        assert coarse_value(r, PrivilegedDecomposition(xyz, (0, 1))) == 0
        rep = averaging_identity(u_basis, xyz, 1_000_000, seed=7)
        notes.append(f"<P_u>={rep.p_u:.4f} <P_v>={rep.p_v:.4f} <P_uv>={rep.p_uv:.4f} "
                     f"deviation {rep.deviation_in_se:.2f} SE")
        assert rep.deviation_in_se <= 4
        assert abs(rep.p_u - 1 / 3) < 4 * rep.se_u
        assert abs(rep.p_uv - 2 / 3) < 4 * rep.se_uv


def test_8_sequential_divergence():
    with criterion(8, "postselected sequential measurements: quantum exceeds 2, hidden variables do not") as notes:
        t0 = time.perf_counter()
        res = search_settings(5, budget=10_000, seed=0)
        elapsed = time.perf_counter() - t0
        for h in res.history:
            assert h.hv_chsh <= 2 + 4 * h.hv_std_error, f"iteration {h.iteration}: {h.hv_chsh} +- {h.hv_std_error}"
        hv = res.hv.chsh
        assert hv.value <= 2 + 4 * hv.std_error
        case = "a" if res.violation_found else "b"
        notes.append(f"case ({case}): best quantum {res.best_quantum:.6f}, hidden-variable "
                     f"{hv.value:.4f} +- {hv.std_error:.4f}, {res.evaluations} evaluations")
        assert res.history and np.isfinite(res.best_quantum)
        assert elapsed < 900, f"runtime {elapsed:.1f}s"


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_9_reproducibility(tmp_path, name):
    with criterion(9, f"byte-identical reruns of {name}"):
        outs = []
        for run in ("first", "second"):
            cfg = validate_config({"experiment": name, "seed": 9, "out": str(tmp_path / run)})
            outcome = run_experiment(cfg)
            assert outcome.status == 0, outcome.message
            outs.append(sorted(p.name for p in outcome.files))
        assert outs[0] == outs[1] and outs[0]
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "first", tmp_path / "second", outs[0], shallow=False)
        assert not mismatch and not errors, f"differing files {mismatch + errors}"
