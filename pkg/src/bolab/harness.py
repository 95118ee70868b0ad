"""Sweep orchestration: validated configs, cached solves, slope fits, reports.

The laboratory's entry point for batch work.  A run takes one JSON config
describing a model and a set of experiments, executes each experiment
(eigenvalue sweeps over lists of semiclassical parameters), fits observed
convergence rates against the claimed ones, and emits a CSV per experiment,
a JSON report, and a gnuplot script.  Identical config and seed must
reproduce the CSV files byte for byte, so nothing time- or host-dependent
may reach them; timestamps live in the JSON report only.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
import re
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretize import choose_extent
from .effective import low_band_levels, middle_band_level, predict_low, reduced_lowest
from .errors import (
    BolabError,
    ConfigError,
    InsufficientPoints,
    NonPositiveError,
)
from .expr import parse_expr
from .hypersurface import build_surface_well, verify_surface
from .model import ModelSpec, SemiclassicalParams, h_of_hbar, validate_model
from .transverse import transverse_spectrum

SCHEMA_VERSION = 1

CSV_HEADER = "regime,j,k_or_alpha,h,hbar,predicted,computed,error,disc_budget"

#: Fraction of |error| the discretization budget may reach before the row is
#: dropped from a convergence fit.
BUDGET_WINDOW = 0.1


# ---------------------------------------------------------------------------
# slope fitting


@dataclass(frozen=True)
class FitResult:
    """Least-squares power law  err ~ exp(intercept) * x**slope."""

    slope: float
    intercept: float
    residual: float
    n_used: int
    notes: tuple = ()


def fit_slope(x, err) -> FitResult:
    """Fit log(err) against log(x) and return slope, intercept, RMS residual.

    Exactly-zero errors are excluded (with a note); negative errors are the
    caller's sign bookkeeping leaking through and raise NonPositiveError.
    Fewer than three usable points raise InsufficientPoints.
    """
    x = np.asarray(x, dtype=float)
    err = np.asarray(err, dtype=float)
    if x.shape != err.shape or x.ndim != 1:
        raise ValueError("x and err must be 1-d arrays of equal length")
    if np.any(x <= 0.0):
        raise ValueError("x values must be positive")
    negative = np.flatnonzero(err < 0.0)
    if negative.size:
        raise NonPositiveError(
            f"negative error at x = {x[negative[0]]:.6g}; "
            "fit_slope expects magnitudes — resolve signs first")
    notes = []
    keep = err > 0.0
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        notes.append(f"excluded {dropped} zero-error point(s)")
    x, err = x[keep], err[keep]
    if x.size < 3:
        raise InsufficientPoints(
            f"slope fit needs at least 3 positive points, got {x.size}")
    logs = np.log(x)
    design = np.column_stack([logs, np.ones_like(logs)])
    coeffs, _, _, _ = np.linalg.lstsq(design, np.log(err), rcond=None)
    fitted = design @ coeffs
    residual = float(np.sqrt(np.mean((np.log(err) - fitted) ** 2)))
    return FitResult(
        slope=float(coeffs[0]),
        intercept=float(coeffs[1]),
        residual=residual,
        n_used=int(x.size),
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# caching


def canonical_json(obj) -> str:
    """Deterministic JSON used for cache keys and config hashes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_key(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def _hex_floats(values) -> list:
    return [float(v).hex() for v in values]


def _unhex_floats(values) -> list:
    return [float.fromhex(v) for v in values]


class SolveCache:
    """Content-addressed store of solved sweep points.

    Keys hash the operator description (model text, parameters, grid rule,
    solver settings); values hold the extrapolated eigenvalues and their
    budgets, serialized as float hex strings so a hit reproduces the cold
    run bit for bit.  Writes go through a temp file and an atomic rename.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, payload) -> dict | None:
        path = self._path(content_key(payload))
        try:
            entry = json.loads(path.read_text())
        except (FileNotFoundError, json.JSONDecodeError):
            self.misses += 1
            return None
        self.hits += 1
        return entry["result"]

    def put(self, payload, result: dict) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        entry = {"payload": payload, "result": result}
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as handle:
                json.dump(entry, handle, sort_keys=True)
            os.replace(tmp, self._path(content_key(payload)))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def stats(self) -> dict:
        files = sorted(self.directory.glob("*.json"))
        return {
            "directory": str(self.directory),
            "entries": len(files),
            "bytes": sum(f.stat().st_size for f in files),
        }

    def clear(self) -> int:
        files = sorted(self.directory.glob("*.json"))
        for f in files:
            f.unlink()
        return len(files)


class _NullCache:
    """Stand-in used with --no-cache: every lookup misses, writes vanish."""

    hits = 0

    def __init__(self):
        self.misses = 0

    def get(self, payload):
        self.misses += 1
        return None

    def put(self, payload, result):
        pass


def _cached(cache, payload, compute):
    found = cache.get(payload)
    if found is not None:
        return found
    result = compute()
    cache.put(payload, result)
    return result


# ---------------------------------------------------------------------------
# config validation

_TOP_KEYS = {"version", "seed", "model", "experiments"}
_NAME_OK = re.compile(r"[A-Za-z0-9_-]+")
_MODEL_KEYS = {"n", "a", "f", "g", "f_infinity", "validation_box",
               "validation_samples"}

_COMMON_EXP_KEYS = {"kind"}
_EXP_KEYS = {
    "low": _COMMON_EXP_KEYS | {
        "j", "k_max", "hbar", "compare", "dx0", "dx_power", "dx_ref", "dy",
        "reduced_delta", "min_slope", "claimed_order", "tol"},
    "middle": _COMMON_EXP_KEYS | {
        "j", "hbar", "deltas", "k_window", "reduced_delta", "max_spread",
        "tol"},
    "surface": _COMMON_EXP_KEYS | {
        "m", "v", "curve_x", "curve_y", "orientation", "h", "j_max",
        "alpha_max", "n_theta", "step_scale", "delta", "max_spread", "tol"},
    "transverse": _COMMON_EXP_KEYS | {"g", "a", "j_max", "expected",
                                      "tolerance"},
}


def _require(mapping, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}: missing required key '{key}'")
    return mapping[key]


def _number(value, path: str, *, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if positive and not value > 0.0:
        raise ConfigError(f"{path}: must be positive, got {value:g}")
    return value


def _integer(value, path: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be at least {minimum}, got {value}")
    return value


def _string(value, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{path}: expected a non-empty string, got {value!r}")
    return value


def _number_list(value, path: str, *, positive: bool = False) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of numbers")
    return [_number(v, f"{path}[{i}]", positive=positive)
            for i, v in enumerate(value)]


def _check_keys(mapping, allowed, path: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{path}: unknown key '{key}'")


@dataclass(frozen=True)
class ValidatedConfig:
    seed: int
    model_raw: dict | None
    model: ModelSpec | None
    experiments: tuple  # of (name, dict with defaults filled in)
    raw: dict


def validate_config(raw) -> ValidatedConfig:
    """Check a parsed config against the schema; unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config")
    version = _require(raw, "version", "config")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config.version: expected {SCHEMA_VERSION}, got {version!r}")
    seed = _integer(raw.get("seed", 0), "config.seed", minimum=0)

    model_raw = raw.get("model")
    model = None
    if model_raw is not None:
        if not isinstance(model_raw, dict):
            raise ConfigError("config.model: expected an object")
        _check_keys(model_raw, _MODEL_KEYS, "model")
        try:
            model = validate_model(model_raw)
        except BolabError as exc:
            raise ConfigError(f"model: {exc}") from exc

    experiments_raw = _require(raw, "experiments", "config")
    if not isinstance(experiments_raw, dict) or not experiments_raw:
        raise ConfigError(
            "config.experiments: expected a non-empty object of named experiments")
    experiments = []
    for name, spec in experiments_raw.items():
        path = f"experiments.{name}"
        if not _NAME_OK.fullmatch(str(name)):
            raise ConfigError(
                f"{path}: experiment names must match [A-Za-z0-9_-]+ "
                "(they become CSV file names)")
        if not isinstance(spec, dict):
            raise ConfigError(f"{path}: expected an object")
        kind = _string(_require(spec, "kind", path), f"{path}.kind")
        if kind not in _EXP_KEYS:
            raise ConfigError(
                f"{path}.kind: unknown experiment kind {kind!r}; "
                f"expected one of {sorted(_EXP_KEYS)}")
        _check_keys(spec, _EXP_KEYS[kind], path)
        normalized = _VALIDATORS[kind](spec, path, model)
        normalized["kind"] = kind
        experiments.append((str(name), normalized))
    return ValidatedConfig(seed=seed, model_raw=model_raw, model=model,
                           experiments=tuple(experiments), raw=raw)


def _need_model(model, path: str):
    if model is None:
        raise ConfigError(f"{path}: requires a top-level 'model' section")
    return model


def _validate_low(spec, path, model) -> dict:
    _need_model(model, path)
    out = {
        "j": _integer(spec.get("j", 1), f"{path}.j", minimum=1),
        "k_max": _integer(spec.get("k_max", 1), f"{path}.k_max", minimum=1),
        "hbar": _number_list(_require(spec, "hbar", path), f"{path}.hbar",
                             positive=True),
        "compare": spec.get("compare", "prediction"),
        "dx0": _number(spec.get("dx0", 0.06), f"{path}.dx0", positive=True),
        "dx_power": _number(spec.get("dx_power", 0.75), f"{path}.dx_power"),
        "dx_ref": _number(spec.get("dx_ref", 0.2), f"{path}.dx_ref",
                          positive=True),
        "dy": _number(spec.get("dy", 0.10), f"{path}.dy", positive=True),
        "reduced_delta": _number(spec.get("reduced_delta", 0.01),
                                 f"{path}.reduced_delta", positive=True),
        "min_slope": _number(spec.get("min_slope", 1.8), f"{path}.min_slope"),
        "claimed_order": _number(spec.get("claimed_order", 2.0),
                                 f"{path}.claimed_order"),
        "tol": _number(spec.get("tol", 1e-9), f"{path}.tol", positive=True),
    }
    if out["compare"] not in ("prediction", "reduced"):
        raise ConfigError(
            f"{path}.compare: expected 'prediction' or 'reduced', "
            f"got {spec.get('compare')!r}")
    if len(set(out["hbar"])) != len(out["hbar"]):
        raise ConfigError(f"{path}.hbar: values must be distinct")
    return out


def _validate_middle(spec, path, model) -> dict:
    model = _need_model(model, path)
    j_raw = _require(spec, "j", path)
    if isinstance(j_raw, list):
        j_list = [_integer(v, f"{path}.j[{i}]", minimum=1)
                  for i, v in enumerate(j_raw)]
    else:
        j_list = [_integer(j_raw, f"{path}.j", minimum=1)]
    deltas_raw = spec.get("deltas", [0.05, 0.05])
    deltas = {}
    if isinstance(deltas_raw, dict):
        for key, pair in deltas_raw.items():
            try:
                j_key = int(key)
            except ValueError:
                raise ConfigError(
                    f"{path}.deltas: keys must name bands, got {key!r}") from None
            deltas[j_key] = _number_list(pair, f"{path}.deltas.{key}",
                                         positive=True)
    else:
        pair = _number_list(deltas_raw, f"{path}.deltas", positive=True)
        deltas = {j: pair for j in j_list}
    for j in j_list:
        if j not in deltas:
            raise ConfigError(f"{path}.deltas: no grid spacings for band {j}")
        if len(deltas[j]) != 2:
            raise ConfigError(
                f"{path}.deltas: band {j} needs exactly 2 spacings")
    k_window_raw = spec.get("k_window", 24)
    if isinstance(k_window_raw, dict):
        k_window = {int(k): _integer(v, f"{path}.k_window.{k}", minimum=2)
                    for k, v in k_window_raw.items()}
    else:
        kw = _integer(k_window_raw, f"{path}.k_window", minimum=2)
        k_window = {j: kw for j in j_list}
    return {
        "j": j_list,
        "hbar": _number(_require(spec, "hbar", path), f"{path}.hbar",
                        positive=True),
        "deltas": deltas,
        "k_window": k_window,
        "reduced_delta": _number(spec.get("reduced_delta", 0.01),
                                 f"{path}.reduced_delta", positive=True),
        "max_spread": _number(spec.get("max_spread", 10.0),
                              f"{path}.max_spread", positive=True),
        "tol": _number(spec.get("tol", 1e-8), f"{path}.tol", positive=True),
    }


def _validate_surface(spec, path, model) -> dict:
    out = {
        "m": _integer(_require(spec, "m", path), f"{path}.m", minimum=1),
        "v": _string(_require(spec, "v", path), f"{path}.v"),
        "curve_x": _string(_require(spec, "curve_x", path), f"{path}.curve_x"),
        "curve_y": _string(_require(spec, "curve_y", path), f"{path}.curve_y"),
        "orientation": _integer(spec.get("orientation", 1),
                                f"{path}.orientation"),
        "h": _number_list(_require(spec, "h", path), f"{path}.h",
                          positive=True),
        "j_max": _integer(spec.get("j_max", 1), f"{path}.j_max", minimum=1),
        "alpha_max": _integer(spec.get("alpha_max", 1), f"{path}.alpha_max",
                              minimum=0),
        "n_theta": _integer(spec.get("n_theta", 1024), f"{path}.n_theta",
                            minimum=64),
        "step_scale": _number(spec.get("step_scale", 0.02),
                              f"{path}.step_scale", positive=True),
        "delta": None if spec.get("delta") is None else _number(
            spec["delta"], f"{path}.delta", positive=True),
        "max_spread": _number(spec.get("max_spread", 10.0),
                              f"{path}.max_spread", positive=True),
        "tol": _number(spec.get("tol", 1e-8), f"{path}.tol", positive=True),
    }
    if out["orientation"] not in (1, -1):
        raise ConfigError(f"{path}.orientation: expected 1 or -1")
    for text, key in ((out["v"], "v"), (out["curve_x"], "curve_x"),
                      (out["curve_y"], "curve_y")):
        variables = ("x", "y") if key == "v" else ("theta",)
        try:
            parse_expr(text, variables)
        except BolabError as exc:
            raise ConfigError(f"{path}.{key}: {exc}") from exc
    return out


def _validate_transverse(spec, path, model) -> dict:
    a = _number(_require(spec, "a", path), f"{path}.a", positive=True)
    g_text = _string(_require(spec, "g", path), f"{path}.g")
    try:
        parse_expr(g_text, ("t",))
    except BolabError as exc:
        raise ConfigError(f"{path}.g: {exc}") from exc
    j_max = _integer(spec.get("j_max", 4), f"{path}.j_max", minimum=1)
    expected = _number_list(_require(spec, "expected", path),
                            f"{path}.expected")
    if len(expected) < j_max:
        raise ConfigError(
            f"{path}.expected: need {j_max} values, got {len(expected)}")
    return {
        "g": g_text,
        "a": a,
        "j_max": j_max,
        "expected": expected,
        "tolerance": _number(spec.get("tolerance", 1e-8),
                             f"{path}.tolerance", positive=True),
    }


_VALIDATORS = {
    "low": _validate_low,
    "middle": _validate_middle,
    "surface": _validate_surface,
    "transverse": _validate_transverse,
}


def load_config(path) -> tuple[dict, bytes]:
    """Read and parse a config file; returns (parsed, raw bytes)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        parsed = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parsed, blob


# ---------------------------------------------------------------------------
# report types


@dataclass(frozen=True)
class SweepRow:
    regime: str
    j: int
    k_or_alpha: int
    h: float
    hbar: float
    predicted: float
    computed: float
    error: float
    disc_budget: float


@dataclass(frozen=True)
class SeriesFit:
    """Verdict for one (j, k) series inside an experiment."""

    series: str
    kind: str                    # "slope" | "spread" | "bound"
    passed: bool
    slope: float = math.nan
    intercept: float = math.nan
    residual: float = math.nan
    spread: float = math.nan
    max_error: float = math.nan
    threshold: float = math.nan
    claimed: float = math.nan
    n_used: int = 0
    notes: tuple = ()


@dataclass(frozen=True)
class ExperimentReport:
    name: str
    kind: str
    rows: tuple
    fits: tuple
    passed: bool
    error: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SweepReport:
    experiments: tuple
    passed: bool
    provenance: dict

    @property
    def computation_errors(self) -> tuple:
        return tuple(e for e in self.experiments if e.error is not None)


def _sorted_rows(rows) -> tuple:
    return tuple(sorted(rows, key=lambda r: (-r.h, r.regime, r.j,
                                             r.k_or_alpha)))


def _window(rows) -> tuple[list, list]:
    """Split rows into (fittable, excluded) by the discretization-budget rule."""
    good, bad = [], []
    for row in rows:
        if row.disc_budget <= BUDGET_WINDOW * abs(row.error):
            good.append(row)
        else:
            bad.append(row)
    return good, bad


def _series_slope_fit(series: str, rows, *, variable, min_slope: float,
                      claimed: float) -> SeriesFit:
    """Sign-check, budget-window, and log-log fit one error series."""
    rows = sorted(rows, key=lambda r: -variable(r))
    signs = {math.copysign(1.0, r.error) for r in rows if r.error != 0.0}
    if len(signs) > 1:
        flip = next(
            (rows[i], rows[i + 1]) for i in range(len(rows) - 1)
            if rows[i].error * rows[i + 1].error < 0.0)
        note = (f"errors change sign between {variable(flip[0]):.6g} and "
                f"{variable(flip[1]):.6g}; the sweep crosses the prediction "
                "and no slope was fitted")
        return SeriesFit(series=series, kind="slope", passed=False,
                         claimed=claimed, notes=(note,))
    good, excluded = _window(rows)
    notes = []
    if excluded:
        notes.append(
            f"dropped {len(excluded)} point(s) whose discretization budget "
            f"exceeds {BUDGET_WINDOW:.0%} of the error")
    try:
        fit = fit_slope([variable(r) for r in good],
                        [abs(r.error) for r in good])
    except (InsufficientPoints, NonPositiveError) as exc:
        notes.append(str(exc))
        return SeriesFit(series=series, kind="slope", passed=False,
                         claimed=claimed, notes=tuple(notes))
    notes.extend(fit.notes)
    return SeriesFit(
        series=series, kind="slope",
        passed=bool(fit.slope >= min_slope),
        slope=fit.slope, intercept=fit.intercept, residual=fit.residual,
        threshold=min_slope, claimed=claimed, n_used=fit.n_used,
        notes=tuple(notes),
    )


def _spread_fit(series: str, rows, denominators, *, max_spread: float) -> SeriesFit:
    """Max/min check of |error| over its claimed remainder shape."""
    ratios, notes, used = [], [], 0
    for row, denom in zip(rows, denominators):
        if row.disc_budget > BUDGET_WINDOW * abs(row.error):
            notes.append(
                f"h={row.h:.6g} j={row.j} k={row.k_or_alpha}: budget above "
                f"{BUDGET_WINDOW:.0%} of error; excluded from the spread")
            continue
        ratios.append(abs(row.error) / denom)
        used += 1
    if used < 2:
        notes.append("fewer than 2 resolved rows; spread is undecidable")
        return SeriesFit(series=series, kind="spread", passed=False,
                         notes=tuple(notes))
    spread = max(ratios) / min(ratios)
    return SeriesFit(series=series, kind="spread",
                     passed=bool(spread <= max_spread), spread=float(spread),
                     threshold=max_spread, n_used=used, notes=tuple(notes))


# ---------------------------------------------------------------------------
# experiment execution


def _model_key(model_raw: dict) -> dict:
    return {k: model_raw[k] for k in sorted(model_raw)}


def _low_point(model, model_raw, exp, hbar: float, seed: int, cache) -> dict:
    deltas = (exp["dx0"] * (hbar / exp["dx_ref"]) ** exp["dx_power"],
              exp["dy"])
    payload = {
        "task": "low-point",
        "schema": SCHEMA_VERSION,
        "model": _model_key(model_raw),
        "hbar": hbar.hex(),
        "j": exp["j"],
        "k_max": exp["k_max"],
        "deltas": _hex_floats(deltas),
        "reduced_delta": exp["reduced_delta"].hex(),
        "tol": exp["tol"].hex(),
        "seed": seed,
    }

    def compute() -> dict:
        params = h_of_hbar(hbar, model.a)
        levels = low_band_levels(
            model, params, exp["j"], exp["k_max"], deltas=deltas,
            reduced_delta=exp["reduced_delta"], seed=seed, tol=exp["tol"])
        return {
            "full": _hex_floats(levels.full),
            "full_budgets": _hex_floats(levels.full_budgets),
            "reduced": _hex_floats(levels.reduced),
            "reduced_budgets": _hex_floats(levels.reduced_budgets),
        }

    return _cached(cache, payload, compute)


def _run_low(name, exp, model, model_raw, seed, cache, jobs):
    hbars = sorted(exp["hbar"], reverse=True)
    worker = lambda hb: _low_point(model, model_raw, exp, hb, seed, cache)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(worker, hbars))
    else:
        points = [worker(hb) for hb in hbars]

    mu = transverse_spectrum(model.g_expr, model.a, exp["j"]).mu
    rows = []
    for hbar, point in zip(hbars, points):
        params = h_of_hbar(hbar, model.a)
        full = _unhex_floats(point["full"])
        full_b = _unhex_floats(point["full_budgets"])
        red = _unhex_floats(point["reduced"])
        red_b = _unhex_floats(point["reduced_budgets"])
        for k in range(1, exp["k_max"] + 1):
            if exp["compare"] == "reduced":
                predicted = red[k - 1]
                budget = full_b[k - 1] + red_b[k - 1]
            else:
                predicted = predict_low(model, params, exp["j"], k,
                                        mu=mu).value
                budget = full_b[k - 1]
            rows.append(SweepRow(
                regime="low", j=exp["j"], k_or_alpha=k, h=params.h,
                hbar=hbar, predicted=predicted, computed=full[k - 1],
                error=full[k - 1] - predicted, disc_budget=budget))

    fits = []
    for k in range(1, exp["k_max"] + 1):
        series_rows = [r for r in rows if r.k_or_alpha == k]
        fits.append(_series_slope_fit(
            f"j={exp['j']},k={k}", series_rows, variable=lambda r: r.hbar,
            min_slope=exp["min_slope"], claimed=exp["claimed_order"]))
    return _sorted_rows(rows), tuple(fits), {"compare": exp["compare"]}


def _middle_point(model, model_raw, exp, j: int, seed: int, cache) -> dict:
    hbar = exp["hbar"]
    deltas = exp["deltas"][j]
    payload = {
        "task": "middle-point",
        "schema": SCHEMA_VERSION,
        "model": _model_key(model_raw),
        "hbar": hbar.hex(),
        "j": j,
        "deltas": _hex_floats(deltas),
        "k_window": exp["k_window"][j],
        "reduced_delta": exp["reduced_delta"].hex(),
        "tol": exp["tol"].hex(),
        "seed": seed,
    }

    def compute() -> dict:
        params = h_of_hbar(hbar, model.a)
        spec = transverse_spectrum(model.g_expr, model.a, j)
        mu_j = float(spec.mu[j - 1])
        level = middle_band_level(
            model, params, j, deltas=tuple(deltas),
            k_window=exp["k_window"][j], seed=seed, tol=exp["tol"])
        extents = choose_extent(model, params, j, 3, spec.mu)[:-1]
        red = reduced_lowest(model, params, mu_j, 1, extents=extents,
                             delta=exp["reduced_delta"], seed=seed)
        return {
            "mu_j": mu_j.hex(),
            "value": float(level.value).hex(),
            "budget": float(level.budget).hex(),
            "weight": float(level.weight).hex(),
            "reduced": float(red.values[0]).hex(),
            "reduced_budget": float(red.budgets[0]).hex(),
        }

    return _cached(cache, payload, compute)


def _run_middle(name, exp, model, model_raw, seed, cache, jobs):
    worker = lambda j: _middle_point(model, model_raw, exp, j, seed, cache)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(worker, exp["j"]))
    else:
        points = [worker(j) for j in exp["j"]]

    hbar = exp["hbar"]
    params = h_of_hbar(hbar, model.a)
    rows, denoms, weights = [], [], []
    for j, point in zip(exp["j"], points):
        mu_j = float.fromhex(point["mu_j"])
        computed = float.fromhex(point["value"])
        predicted = float.fromhex(point["reduced"])
        budget = (float.fromhex(point["budget"])
                  + float.fromhex(point["reduced_budget"]))
        rows.append(SweepRow(
            regime="middle", j=j, k_or_alpha=1, h=params.h, hbar=hbar,
            predicted=predicted, computed=computed,
            error=computed - predicted, disc_budget=budget))
        denoms.append(mu_j * hbar**2)
        weights.append(float.fromhex(point["weight"]))
    fit = _spread_fit(f"bands {exp['j']}", rows, denoms,
                      max_spread=exp["max_spread"])
    meta = {"band_weights": dict(zip(map(str, exp["j"]), weights))}
    return _sorted_rows(rows), (fit,), meta


def _run_surface(name, exp, model, model_raw, seed, cache, jobs):
    payload = {
        "task": "surface-sweep",
        "schema": SCHEMA_VERSION,
        "m": exp["m"],
        "v": exp["v"],
        "curve": [exp["curve_x"], exp["curve_y"], exp["orientation"]],
        "n_theta": exp["n_theta"],
        "step_scale": exp["step_scale"].hex(),
        "h": _hex_floats(exp["h"]),
        "j_max": exp["j_max"],
        "alpha_max": exp["alpha_max"],
        "delta": None if exp["delta"] is None else exp["delta"].hex(),
        "tol": exp["tol"].hex(),
        "seed": seed,
    }

    def compute() -> dict:
        well = build_surface_well(
            exp["v"], exp["m"], exp["curve_x"], exp["curve_y"],
            orientation=exp["orientation"], n_theta=exp["n_theta"],
            step_scale=exp["step_scale"])
        sweep = verify_surface(
            well, exp["j_max"], exp["alpha_max"], exp["h"],
            delta=exp["delta"], seed=seed, tol=exp["tol"], jobs=jobs)
        return {
            "eta0": float(well.eta0).hex(),
            "rows": [{
                "h": r.h.hex(), "j": r.j, "alpha": r.alpha,
                "mu": r.mu.hex(), "predicted": r.predicted.hex(),
                "computed": r.computed.hex(), "budget": r.budget.hex(),
            } for r in sweep.rows],
            "skipped": len(sweep.meta.get("skipped", ())),
        }

    result = _cached(cache, payload, compute)
    m = exp["m"]
    rows, denoms = [], []
    for entry in result["rows"]:
        h = float.fromhex(entry["h"])
        mu = float.fromhex(entry["mu"])
        predicted = float.fromhex(entry["predicted"])
        computed = float.fromhex(entry["computed"])
        rows.append(SweepRow(
            regime="surface", j=entry["j"], k_or_alpha=entry["alpha"], h=h,
            hbar=h ** (1.0 / (m + 1.0)) / math.sqrt(mu),
            predicted=predicted, computed=computed,
            error=computed - predicted,
            disc_budget=float.fromhex(entry["budget"])))
        denoms.append(h**2 * mu ** (2.0 + 1.5 / m))
    fit = _spread_fit("all levels", rows, denoms,
                      max_spread=exp["max_spread"])
    meta = {"eta0": float.fromhex(result["eta0"]),
            "skipped_bands": result["skipped"]}
    return _sorted_rows(rows), (fit,), meta


def _run_transverse(name, exp, model, model_raw, seed, cache, jobs):
    g = parse_expr(exp["g"], ("t",))
    spectrum = transverse_spectrum(g, exp["a"], exp["j_max"])
    rows = []
    for j in range(1, exp["j_max"] + 1):
        computed = float(spectrum.mu[j - 1])
        predicted = float(exp["expected"][j - 1])
        rows.append(SweepRow(
            regime="transverse", j=j, k_or_alpha=0, h=0.0, hbar=0.0,
            predicted=predicted, computed=computed,
            error=computed - predicted,
            disc_budget=float(spectrum.budgets[j - 1])))
    worst = max(abs(r.error) for r in rows)
    fit = SeriesFit(
        series=f"j<={exp['j_max']}", kind="bound",
        passed=bool(worst <= exp["tolerance"]),
        max_error=worst, threshold=exp["tolerance"], n_used=len(rows))
    return tuple(rows), (fit,), {}


_RUNNERS = {
    "low": _run_low,
    "middle": _run_middle,
    "surface": _run_surface,
    "transverse": _run_transverse,
}


# ---------------------------------------------------------------------------
# emission


def _csv_text(rows) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join(
            [r.regime, str(r.j), str(r.k_or_alpha)]
            + [repr(float(v)) for v in (r.h, r.hbar, r.predicted, r.computed,
                                        r.error, r.disc_budget)]))
    return "\n".join(lines) + "\n"


def read_rows(path) -> list:
    """Parse an emitted CSV back into SweepRow values (exact round trip)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path} does not carry the sweep-row header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        rows.append(SweepRow(
            regime=parts[0], j=int(parts[1]), k_or_alpha=int(parts[2]),
            h=float(parts[3]), hbar=float(parts[4]),
            predicted=float(parts[5]), computed=float(parts[6]),
            error=float(parts[7]), disc_budget=float(parts[8])))
    return rows


def _plot_script(report: "SweepReport", csv_names: dict) -> str:
    lines = [
        "# Log-log error plots with claimed-rate reference lines.",
        "set datafile separator ','",
        "set logscale xy",
        "set key left top",
        "set grid",
    ]
    plots = 0
    for exp in report.experiments:
        if exp.kind not in ("low", "surface") or not exp.rows:
            continue
        csv = csv_names[exp.name]
        xcol = 5 if exp.kind == "low" else 4   # hbar for low, h for surface
        xlabel = "hbar" if exp.kind == "low" else "h"
        claimed = 2.0
        for fit in exp.fits:
            if fit.kind == "slope" and math.isfinite(fit.claimed):
                claimed = fit.claimed
                break
        anchor = max(exp.rows, key=lambda r: r.h)
        scale = abs(anchor.error)
        x0 = anchor.hbar if exp.kind == "low" else anchor.h
        lines += [
            "",
            f"# experiment '{exp.name}'",
            f"set xlabel '{xlabel}'",
            "set ylabel '|error|'",
            f"set title '{exp.name}: observed error vs claimed rate "
            f"{claimed:g}'",
            f"ref_{plots}(x) = {scale!r} * (x / {x0!r}) ** {claimed!r}",
            f"plot '{csv}' using {xcol}:(abs(column(8))) with points "
            f"pt 7 title 'measured', \\",
            f"     ref_{plots}(x) with lines dt 2 title 'slope "
            f"{claimed:g} reference'",
            "pause -1",
        ]
        plots += 1
    if plots == 0:
        lines.append("# no h-sweep experiments in this run; nothing to plot")
    return "\n".join(lines) + "\n"


def _fit_json(fit: SeriesFit) -> dict:
    out = {"series": fit.series, "kind": fit.kind, "passed": fit.passed,
           "n_used": fit.n_used, "notes": list(fit.notes)}
    for key in ("slope", "intercept", "residual", "spread", "max_error",
                "threshold", "claimed"):
        value = getattr(fit, key)
        if math.isfinite(value):
            out[key] = value
    return out


def emit(report: SweepReport, out_dir) -> dict:
    """Write per-experiment CSVs, the JSON report, and the gnuplot script.

    Returns a mapping of artifact names to paths.  CSV content is a pure
    function of the rows; everything host- or time-dependent goes into the
    JSON report only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    csv_names = {}
    for exp in report.experiments:
        path = out / f"{exp.name}.csv"
        path.write_text(_csv_text(exp.rows))
        artifacts[f"csv:{exp.name}"] = path
        csv_names[exp.name] = path.name

    payload = {
        "schema": SCHEMA_VERSION,
        "passed": report.passed,
        "provenance": report.provenance,
        "experiments": [{
            "name": exp.name,
            "kind": exp.kind,
            "passed": exp.passed,
            "error": exp.error,
            "rows": len(exp.rows),
            "csv": csv_names[exp.name],
            "fits": [_fit_json(f) for f in exp.fits],
            "meta": exp.meta,
        } for exp in report.experiments],
    }
    json_path = out / "report.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    artifacts["report"] = json_path

    plot_path = out / "plots.gp"
    plot_path.write_text(_plot_script(report, csv_names))
    artifacts["plots"] = plot_path
    return artifacts


# ---------------------------------------------------------------------------
# orchestration


def run_config(config, *, cache=None, jobs: int | None = None,
               config_bytes: bytes | None = None) -> SweepReport:
    """Execute every experiment in a validated (or raw) config.

    A computation failure inside one experiment is recorded on that
    experiment and does not stop the others.  Report assembly is
    single-threaded; only the solves inside an experiment may fan out over
    ``jobs`` workers.
    """
    validated = config if isinstance(config, ValidatedConfig) else (
        validate_config(config))
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    if cache is None:
        cache = _NullCache()
    blob = config_bytes if config_bytes is not None else (
        canonical_json(validated.raw).encode())
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()

    experiments = []
    for name, exp in validated.experiments:
        runner = _RUNNERS[exp["kind"]]
        try:
            rows, fits, meta = runner(name, exp, validated.model,
                                      validated.model_raw, validated.seed,
                                      cache, jobs)
        except BolabError as exc:
            experiments.append(ExperimentReport(
                name=name, kind=exp["kind"], rows=(), fits=(), passed=False,
                error=f"{type(exc).__name__}: {exc}"))
            continue
        passed = bool(fits) and all(f.passed for f in fits)
        experiments.append(ExperimentReport(
            name=name, kind=exp["kind"], rows=rows, fits=fits,
            passed=passed, meta=meta))

    finished = _dt.datetime.now(_dt.timezone.utc).isoformat()
    provenance = {
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": validated.seed,
        "jobs": jobs,
        "started_at": started,
        "finished_at": finished,
        "cache": {"hits": cache.hits, "misses": cache.misses},
    }
    return SweepReport(
        experiments=tuple(experiments),
        passed=all(e.passed for e in experiments),
        provenance=provenance,
    )


def run_file(path, *, out_dir, jobs: int | None = None,
             use_cache: bool = True) -> tuple[SweepReport, dict]:
    """Load, validate, run, and emit a config file.  Returns (report, artifacts)."""
    parsed, blob = load_config(path)
    validated = validate_config(parsed)
    out = Path(out_dir)
    cache = SolveCache(out / "cache") if use_cache else None
    report = run_config(validated, cache=cache, jobs=jobs, config_bytes=blob)
    artifacts = emit(report, out)
    return report, artifacts
