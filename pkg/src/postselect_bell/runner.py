"""Batch experiment runner: config files in, CSV tables out."""
from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import yaml

from . import chsh as chsh_mod
from .chsh import CorrelationEstimate, bound_flags, chsh_value, estimate_correlation, figure_config
from .classical import Direction3, ReadoutConvention, run_block
from .errors import ConfigError, PostselectError
from .quantum import (chsh_closed_form, chsh_quantum_max, make_state, ppt_min_eigenvalue,
                      spin_correlation, werner_family)
from .sequential import ARM_ORDER, search_settings, single_measurement_outcomes
from .werner_hv import (CONJUGATIONS, PrivilegedDecomposition, alice_outcome, averaging_identity,
                        coarse_value, find_paradox, paradox_acceptance_rate, qubit_basis,
                        rotated_bases, validate_against_quantum, werner_model_phi)

EXPERIMENTS = ("classical", "classical-postselected", "quantum-werner", "hv-validate",
               "paradox-demo", "popescu-search")

_DEFAULT_D = {"quantum-werner": 2, "hv-validate": 2, "paradox-demo": 3, "popescu-search": 5}


def _figure_settings() -> tuple[list[list[float]], list[list[float]]]:
    cfg = figure_config()
    vec = lambda d: [d.x, d.y, d.z]  # noqa: E731
    return [vec(cfg.a), vec(cfg.a_prime)], [vec(cfg.b), vec(cfg.b_prime)]


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    trials: int = 1_000_000
    flip_bob: bool = True
    conjugation: str = "both"
    d: Optional[int] = None
    phi: Optional[float] = None
    phi_grid: Optional[list[float]] = None
    settings_a: Optional[list[list[float]]] = None
    settings_b: Optional[list[list[float]]] = None
    n_configs: int = 200
    n_pairs: int = 10
    rotation_deg: float = 45.0
    budget: int = 10_000
    restarts: int = 5
    hv_trials: int = 100_000
    out: str = "results"

    def directions_a(self) -> list[Direction3]:
        return [Direction3.from_vector(v) for v in self.settings_a or []]

    def directions_b(self) -> list[Direction3]:
        return [Direction3.from_vector(v) for v in self.settings_b or []]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_POSITIVE = ("trials", "n_configs", "n_pairs", "budget", "restarts", "hv_trials")


def _check_vectors(name: str, value) -> list[list[float]]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(name, "expected a non-empty list of 3-vectors")
    out = []
    for i, v in enumerate(value):
        path = f"{name}[{i}]"
        if not isinstance(v, (list, tuple)) or len(v) != 3:
            raise ConfigError(path, "expected three numbers")
        try:
            arr = [float(x) for x in v]
        except (TypeError, ValueError):
            raise ConfigError(path, "components must be numbers") from None
        norm = float(np.linalg.norm(arr))
        if not np.isfinite(norm) or norm == 0.0:
            raise ConfigError(path, "vector cannot be normalized (zero or non-finite)")
        out.append(arr)
    return out


def _as_bool(name: str, value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no", "1", "0"):
        return value.lower() in ("true", "yes", "1")
    raise ConfigError(name, f"expected a boolean, got {value!r}")


def validate_config(raw: dict) -> ExperimentConfig:
    """Check types and ranges, apply per-experiment defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    vals: dict[str, Any] = dict(raw)
    for key in ("seed", "trials", "n_configs", "n_pairs", "budget", "restarts", "hv_trials", "d"):
        if vals.get(key) is not None:
            v = vals[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
                raise ConfigError(key, f"expected an integer, got {v!r}")
            vals[key] = int(v)
    for key in _POSITIVE:
        if key in vals and vals[key] < 1:
            raise ConfigError(key, "must be positive")
    if "flip_bob" in vals:
        vals["flip_bob"] = _as_bool("flip_bob", vals["flip_bob"])
    if "conjugation" in vals and vals["conjugation"] not in CONJUGATIONS + ("both",):
        raise ConfigError("conjugation", f"expected none, second_factor or both, got {vals['conjugation']!r}")
    for key in ("phi", "rotation_deg"):
        if vals.get(key) is not None:
            try:
                vals[key] = float(vals[key])
            except (TypeError, ValueError):
                raise ConfigError(key, "expected a number") from None
    if vals.get("phi") is not None and not -1.0 <= vals["phi"] <= 1.0:
        raise ConfigError("phi", "flip parameter must lie in [-1, 1]")
    if vals.get("phi_grid") is not None:
        grid = vals["phi_grid"]
        if not isinstance(grid, list) or not grid:
            raise ConfigError("phi_grid", "expected a non-empty list of numbers")
        for i, p in enumerate(grid):
            if not isinstance(p, (int, float)) or isinstance(p, bool) or not -1.0 <= p <= 1.0:
                raise ConfigError(f"phi_grid[{i}]", "flip parameter must be a number in [-1, 1]")
        vals["phi_grid"] = [float(p) for p in grid]
    for key in ("settings_a", "settings_b"):
        if vals.get(key) is not None:
            vals[key] = _check_vectors(key, vals[key])
    if "out" in vals:
        vals["out"] = str(vals["out"])

    cfg = ExperimentConfig(**vals)
    if cfg.d is None:
        cfg.d = _DEFAULT_D.get(name)
    if cfg.d is not None and cfg.d < 2:
        raise ConfigError("d", "dimension must be >= 2")
    if name in ("classical", "classical-postselected", "quantum-werner"):
        fa, fb = _figure_settings()
        if cfg.settings_a is None:
            cfg.settings_a = fa
        if cfg.settings_b is None:
            cfg.settings_b = fb
    if name == "hv-validate" and (cfg.settings_a is None) != (cfg.settings_b is None):
        raise ConfigError("settings_b", "hv-validate needs both settings lists or neither")
    if name == "hv-validate" and cfg.settings_a is not None and len(cfg.settings_a) != len(cfg.settings_b):
        raise ConfigError("settings_b", "hv-validate pairs settings_a[i] with settings_b[i]; lengths differ")
    if name in ("quantum-werner", "hv-validate") and cfg.d != 2:
        raise ConfigError("d", f"{name} works on qubit pairs (d = 2)")
    if name == "paradox-demo" and cfg.d != 3:
        raise ConfigError("d", "paradox-demo works in a real 3-dimensional space")
    if cfg.phi is None:
        if name in ("quantum-werner", "hv-validate"):
            cfg.phi = -0.25
        elif name == "popescu-search":
            cfg.phi = werner_model_phi(cfg.d)
    if name == "popescu-search" and cfg.phi_grid is None:
        cfg.phi_grid = [cfg.phi]
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid structured text: {exc}") from exc
    return validate_config(raw or {})


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

class SchemaError(PostselectError, ValueError):
    def __init__(self, column, message):
        self.column = column
        super().__init__(f"column {column!r}: {message}")


def format_value(value, kind) -> str:
    if kind is float:
        return format(float(value), ".12g")
    if kind is int:
        return str(int(value))
    if kind is bool:
        return "true" if value else "false"
    return str(value)


def write_csv(rows: Sequence[dict], schema: Sequence[tuple[str, type]], path) -> None:
    """Header plus one line per row; floats carry 12 significant digits."""
    names = [n for n, _ in schema]
    lines = []
    for i, row in enumerate(rows):
        missing = [n for n in names if n not in row]
        if missing:
            raise SchemaError(missing[0], f"missing from row {i}")
        extra = [k for k in row if k not in names]
        if extra:
            raise SchemaError(extra[0], f"not in schema (row {i})")
        out = []
        for name, kind in schema:
            v = row[name]
            if kind in (int, float) and (isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating))):
                raise SchemaError(name, f"expected a number in row {i}, got {v!r}")
            out.append(format_value(v, kind))
        lines.append(out)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        w.writerows(lines)


CORRELATION_SCHEMA = [("setting_pair", str), ("mean", float), ("std_error", float),
                      ("n_total", int), ("n_kept", int)]
CHSH_SCHEMA = [("config_id", str), ("value", float), ("std_error", float),
               ("term_ab", float), ("term_ab_prime", float), ("term_a_prime_b", float),
               ("term_a_prime_b_prime", float), ("max_over_placements", float),
               ("vs_classical", str), ("vs_tsirelson", str)]
PARADOX_SCHEMA = [("r_x", float), ("r_y", float), ("r_z", float),
                  ("abs_r_u", float), ("abs_r_z", float), ("abs_r_v", float),
                  ("abs_r_x", float), ("abs_r_y", float),
                  ("chain_u_z_v", bool), ("chain_z_x_y", bool),
                  ("fine_outcome", str), ("coarse_uv_value", int),
                  ("acceptance_rate", float), ("acceptance_std_error", float)]
AVERAGES_SCHEMA = [("quantity", str), ("mean", float), ("std_error", float), ("n_total", int)]
SEARCH_SCHEMA = [("phi", float), ("iteration", int), ("evaluations", int), ("best_quantum_chsh", float),
                 ("hv_chsh", float), ("hv_std_error", float), ("retention", float),
                 ("escaped_fraction", float)]
ARMS_SCHEMA = [("phi", float), ("arm", str), ("n_trials", int), ("n_retained", int), ("n_escaped", int),
               ("retention_rate", float), ("escaped_fraction", float)]
VALIDATION_SCHEMA = [("pair_index", int), ("conjugation", str), ("a_dot_b", float), ("estimate", float),
                     ("std_error", float), ("target", float), ("deviation_se", float),
                     ("within_tolerance", bool)]
QUANTUM_SCHEMA = [("quantity", str), ("value", float)]


def _corr_row(label: str, e: CorrelationEstimate) -> dict:
    return {"setting_pair": label, "mean": e.mean, "std_error": e.std_error,
            "n_total": e.n_total, "n_kept": e.n_kept}


def _chsh_row(config_id: str, v) -> dict:
    c2, ct = bound_flags(v.value)
    return {"config_id": config_id, "value": v.value, "std_error": v.std_error,
            "term_ab": v.terms[0], "term_ab_prime": v.terms[1], "term_a_prime_b": v.terms[2],
            "term_a_prime_b_prime": v.terms[3], "max_over_placements": v.max_over_placements,
            "vs_classical": c2, "vs_tsirelson": ct}


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

class _Outputs:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: list[Path] = []

    def write(self, name: str, rows, schema) -> None:
        path = self.dir / name
        self.files.append(path)
        write_csv(rows, schema, path)

    def remove(self) -> None:
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _classical(cfg: ExperimentConfig, out: _Outputs, postselect: bool) -> None:
    conv = ReadoutConvention(cfg.flip_bob)
    sa, sb = cfg.directions_a(), cfg.directions_b()
    records = run_block(sa, sb, cfg.trials, cfg.seed, conv)
    est = {}
    rows = []
    for i in range(len(sa)):
        for j in range(len(sb)):
            est[i, j] = estimate_correlation(records, (i, j), postselect)
            rows.append(_corr_row(f"a{i}-b{j}", est[i, j]))
    out.write("correlations.csv", rows, CORRELATION_SCHEMA)

    chsh_rows = []
    if len(sa) == 2 and len(sb) == 2:
        mc = chsh_value(est[0, 0], est[0, 1], est[1, 0], est[1, 1])
        chsh_rows.append(_chsh_row("monte-carlo", mc))
        own = chsh_mod.ChshConfig(sa[0], sa[1], sb[0], sb[1])
        chsh_rows.append(_chsh_row("oracle", chsh_mod.oracle_chsh(own, postselect, conv)))
    scan = chsh_mod.scan_classical_chsh(cfg.n_configs, cfg.seed, postselect, conv)
    chsh_rows.extend(_chsh_row(f"scan-{k:04d}", v) for k, (_, v) in enumerate(scan))
    out.write("chsh.csv", chsh_rows, CHSH_SCHEMA)


def _quantum_werner(cfg: ExperimentConfig, out: _Outputs) -> None:
    rho = werner_family(2, cfg.phi)
    sa, sb = cfg.directions_a(), cfg.directions_b()
    vals = {}
    rows = []
    for i, a in enumerate(sa):
        for j, b in enumerate(sb):
            vals[i, j] = spin_correlation(rho, a, b)
            rows.append(_corr_row(f"a{i}-b{j}", CorrelationEstimate.exact(vals[i, j])))
    out.write("correlations.csv", rows, CORRELATION_SCHEMA)
    chsh_rows = []
    if len(sa) == 2 and len(sb) == 2:
        chsh_rows.append(_chsh_row("settings", chsh_value(vals[0, 0], vals[0, 1], vals[1, 0], vals[1, 1])))
    best = chsh_quantum_max(rho)
    flags = bound_flags(best)
    chsh_rows.append({"config_id": "optimal", "value": best, "std_error": 0.0, "term_ab": float("nan"),
                      "term_ab_prime": float("nan"), "term_a_prime_b": float("nan"),
                      "term_a_prime_b_prime": float("nan"), "max_over_placements": best,
                      "vs_classical": flags[0], "vs_tsirelson": flags[1]})
    out.write("chsh.csv", chsh_rows, CHSH_SCHEMA)
    singlet = make_state("singlet")
    out.write("quantum.csv", [
        {"quantity": "flip_parameter", "value": cfg.phi},
        {"quantity": "purity", "value": rho.purity()},
        {"quantity": "chsh_max", "value": best},
        {"quantity": "chsh_closed_form", "value": chsh_closed_form(rho)},
        {"quantity": "ppt_min_eigenvalue", "value": ppt_min_eigenvalue(rho)},
        {"quantity": "singlet_chsh_max", "value": chsh_quantum_max(singlet)},
        {"quantity": "singlet_ppt_min_eigenvalue", "value": ppt_min_eigenvalue(singlet)},
    ], QUANTUM_SCHEMA)


def _random_pairs(n: int, seed: int) -> list[tuple[Direction3, Direction3]]:
    rng = np.random.default_rng([int(seed), 0xB0])
    return [(Direction3.from_vector(rng.standard_normal(3)), Direction3.from_vector(rng.standard_normal(3)))
            for _ in range(n)]


def _hv_validate(cfg: ExperimentConfig, out: _Outputs) -> None:
    if cfg.settings_a is not None:
        pairs = list(zip(cfg.directions_a(), cfg.directions_b()))
    else:
        pairs = _random_pairs(cfg.n_pairs, cfg.seed)
    report = validate_against_quantum(pairs, cfg.phi, cfg.trials, cfg.seed, cfg.conjugation)
    out.write("validation.csv", [
        {"pair_index": r.pair_index, "conjugation": r.conjugation, "a_dot_b": pairs[r.pair_index][0].dot(pairs[r.pair_index][1]),
         "estimate": r.estimate, "std_error": r.std_error, "target": r.target,
         "deviation_se": r.deviation_in_se, "within_tolerance": r.deviation_in_se <= report.tolerance_se}
        for r in report.rows], VALIDATION_SCHEMA)
    rows = []
    for k, (a, b) in enumerate(pairs):
        al, be = single_measurement_outcomes(qubit_basis(a).vectors, qubit_basis(b).vectors,
                                             cfg.trials, cfg.seed, k, 0)
        est = CorrelationEstimate.from_products(al.astype(float) * be, cfg.trials)
        rows.append(_corr_row(f"pair{k}", est))
    out.write("correlations.csv", rows, CORRELATION_SCHEMA)


def _paradox(cfg: ExperimentConfig, out: _Outputs) -> None:
    u_basis, xyz = rotated_bases(cfg.rotation_deg)
    r = find_paradox(u_basis, xyz, cfg.seed)
    c = r.components
    ru, rv, rz = np.abs(u_basis.vectors.real @ c)
    rx, ry, _ = np.abs(xyz.vectors.real @ c)
    rate, rate_se = paradox_acceptance_rate(u_basis, xyz, cfg.trials, cfg.seed)
    fine = "uvz"[alice_outcome(r, u_basis)]
    coarse = coarse_value(r, PrivilegedDecomposition(xyz, (0, 1)))
    out.write("paradox.csv", [{
        "r_x": c[0], "r_y": c[1], "r_z": c[2], "abs_r_u": ru, "abs_r_z": rz, "abs_r_v": rv,
        "abs_r_x": rx, "abs_r_y": ry, "chain_u_z_v": bool(ru < rz < rv), "chain_z_x_y": bool(rz < rx < ry),
        "fine_outcome": fine, "coarse_uv_value": coarse, "acceptance_rate": rate,
        "acceptance_std_error": rate_se}], PARADOX_SCHEMA)
    avg = averaging_identity(u_basis, xyz, cfg.trials, cfg.seed)
    out.write("averages.csv", [
        {"quantity": "P_u", "mean": avg.p_u, "std_error": avg.se_u, "n_total": avg.n_samples},
        {"quantity": "P_v", "mean": avg.p_v, "std_error": avg.se_v, "n_total": avg.n_samples},
        {"quantity": "P_uv", "mean": avg.p_uv, "std_error": avg.se_uv, "n_total": avg.n_samples},
        {"quantity": "P_u+P_v-P_uv", "mean": avg.difference, "std_error": avg.se_difference,
         "n_total": avg.n_samples},
    ], AVERAGES_SCHEMA)


def _popescu(cfg: ExperimentConfig, out: _Outputs) -> None:
    search_rows, chsh_rows, corr_rows, arm_rows = [], [], [], []
    for phi in cfg.phi_grid:
        res = search_settings(cfg.d, phi, cfg.budget, cfg.seed, cfg.restarts, cfg.hv_trials)
        for h in res.history:
            search_rows.append({"phi": phi, "iteration": h.iteration, "evaluations": h.evaluations,
                                "best_quantum_chsh": h.best_quantum, "hv_chsh": h.hv_chsh,
                                "hv_std_error": h.hv_std_error, "retention": h.retention,
                                "escaped_fraction": h.escaped_fraction})
        tag = f"phi={phi:.6g}"
        q = res.quantum
        qflags = bound_flags(q.chsh_arms)
        chsh_rows.append({"config_id": f"quantum:{tag}", "value": q.chsh_arms, "std_error": 0.0,
                          "term_ab": float("nan"), "term_ab_prime": float("nan"),
                          "term_a_prime_b": float("nan"), "term_a_prime_b_prime": float("nan"),
                          "max_over_placements": q.chsh_max, "vs_classical": qflags[0],
                          "vs_tsirelson": qflags[1]})
        chsh_rows.append(_chsh_row(f"hidden-variable:{tag}", res.hv.chsh))
        for (i, j), arm in zip(ARM_ORDER, res.hv.arms):
            corr_rows.append(_corr_row(f"{tag}:a{i}-b{j}", arm.estimate))
            arm_rows.append({"phi": phi, "arm": f"a{i}-b{j}", "n_trials": arm.n_trials,
                             "n_retained": arm.n_retained, "n_escaped": arm.n_escaped,
                             "retention_rate": arm.retention_rate, "escaped_fraction": arm.escaped_fraction})
    out.write("search.csv", search_rows, SEARCH_SCHEMA)
    out.write("chsh.csv", chsh_rows, CHSH_SCHEMA)
    out.write("correlations.csv", corr_rows, CORRELATION_SCHEMA)
    out.write("arms.csv", arm_rows, ARMS_SCHEMA)


_RUNNERS: dict[str, Callable[[ExperimentConfig, _Outputs], None]] = {
    "classical": lambda c, o: _classical(c, o, False),
    "classical-postselected": lambda c, o: _classical(c, o, True),
    "quantum-werner": _quantum_werner,
    "hv-validate": _hv_validate,
    "paradox-demo": _paradox,
    "popescu-search": _popescu,
}


@dataclass
class ExperimentOutcome:
    status: int
    files: list[Path] = field(default_factory=list)
    message: str = ""


def run_experiment(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Run the named experiment; on any error remove partial outputs and return a nonzero status."""
    out_dir = Path(cfg.out)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        return ExperimentOutcome(3, [], f"{cfg.experiment}: cannot create output directory: {exc}")
    outputs = _Outputs(out_dir)
    try:
        _RUNNERS[cfg.experiment](cfg, outputs)
    except (PostselectError, OSError) as exc:
        outputs.remove()
        return ExperimentOutcome(1, [], f"{cfg.experiment}: {type(exc).__name__}: {exc}")
    return ExperimentOutcome(0, outputs.files, f"{cfg.experiment}: wrote {len(outputs.files)} files to {out_dir}")
