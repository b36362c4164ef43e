"""Config-driven experiment runs: parsing, caching, and reproducible reports.

A run is a pure function of (config, seed, package version).  The config
is one JSON document naming the group, the measure, the numeric budgets,
and the experiment; parsing validates everything up front and reports
schema errors with their location.  Runners emit CSV tables whose header
names the operation that produced each column, plus JSON reports, and
finish by writing a manifest; the manifest is written last, so its
presence marks a completed run and its stage records hold the timings,
cache outcomes, and tolerances.

Heavy intermediates (transition-probability curves, sweep rows) go
through a content-addressed cache of npz payloads with sha256 sidecars.
A corrupt or missing entry is a miss, never bad data; cold and warm runs
produce identical result files because both consume the same arrays.

Cross-checks are wired into the runners: whenever two routes to the same
number exist (product-formula Green values against direct series, finite-n
kernels against iterated-sum kernels, factorization identities against
closed forms), the delta is compared to a pinned tolerance and a failure
raises InconsistencyError rather than shipping a wrong table.
"""

import hashlib
import io
import json
import math
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .ancona import (
    one_room_scan,
    perturbed_triple_sampler,
    prefix_triple_sampler,
    shared_prefix_pair_sampler,
    strong_ancona_fit,
    weak_ancona_scan,
)
from .boundary import (
    KernelProfile,
    RaySpec,
    h_finite_n,
    h_via_sums,
    hk_ratio_along_ray,
    llt_fit,
    radical_scan,
)
from .factor_green import FactorGreenEvaluator
from .groups import (
    IDENTITY,
    BudgetExceededError,
    Element,
    FreeProductSpec,
    ball,
    format_element,
    inverse,
    multiply,
    parse,
)
from .measures import (
    AdaptedMeasure,
    ConvolutionTable,
    LatticeMeasure,
    lazy_spectral_radius,
)
from .product_green import PhiPsiSystem, direct_series_green

__all__ = [
    "ARTIFACT_VERSION",
    "CacheError",
    "ConfigError",
    "CurveTable",
    "ExperimentConfig",
    "InconsistencyError",
    "ResultTable",
    "RunManifest",
    "StageRecord",
    "cache_get",
    "cache_key",
    "cache_put",
    "canned_config",
    "experiment_kinds",
    "list_canned",
    "parse_config",
    "parse_config_dict",
    "run",
]

ARTIFACT_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Schema violations, reported with their config locations."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InconsistencyError(RuntimeError):
    """A cross-check delta exceeded its pinned tolerance."""

    def __init__(self, name: str, delta: float, tolerance: float):
        self.name = name
        self.delta = delta
        self.tolerance = tolerance
        super().__init__(
            f"cross-check {name!r} failed: delta {delta:.3e} > tolerance {tolerance:.3e}"
        )


class CacheError(RuntimeError):
    """Cache I/O failed in a way that must not be mistaken for a miss."""


# ---- config schema ----------------------------------------------------


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _as_fraction(v, path: str, errors: List[str]):
    """Numbers pass through; strings must be exact fractions like '1/4'."""
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        errors.append(f"{path}: expected a number or fraction string, got {v!r}")
        return None
    if isinstance(v, str):
        try:
            return Fraction(v)
        except (ValueError, ZeroDivisionError):
            errors.append(f"{path}: cannot parse {v!r} as a fraction")
            return None
    if isinstance(v, int):
        return Fraction(v)
    return float(v)


def _check_int(v, path, errors, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, int):
        errors.append(f"{path}: expected an integer, got {v!r}")
        return None
    if lo is not None and v < lo:
        errors.append(f"{path}: must be >= {lo}, got {v}")
        return None
    if hi is not None and v > hi:
        errors.append(f"{path}: must be <= {hi}, got {v}")
        return None
    return v


def _check_unknown(raw: Mapping, known: Sequence[str], path: str, chk) -> None:
    for key in raw:
        if key not in known:
            chk.flag(f"{path}.{key}" if path else key, "unknown key")


class _Checker:
    def __init__(self, strict: bool):
        self.strict = strict
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def flag(self, path: str, msg: str) -> None:
        target = self.errors if self.strict else self.warnings
        target.append(f"{path}: {msg}")


_GRID_DEFAULT = (0.5, 0.8, 0.9, 0.95)

_BUDGET_DEFAULTS = {
    "ball_radius": 8,
    "index_radius": None,
    "n_max": 24,
    "r_grid": list(_GRID_DEFAULT),
    "element_budget": 5_000_000,
    "quadrature": None,
}


def _default_n_list(n_max: int) -> Tuple[int, ...]:
    """Last three even horizons below n_max, the package-wide default."""
    base = n_max - (n_max % 2)
    return tuple(n for n in (base - 4, base - 2, base) if n >= 2)


def _alpha_default_grid() -> List[float]:
    return [round(0.05 * k, 2) for k in range(1, 20)]


def _validate_element(value, path, errors, spec) -> Optional[Element]:
    if not isinstance(value, str):
        errors.append(f"{path}: expected an element string, got {value!r}")
        return None
    try:
        return parse(spec, value)
    except ValueError as exc:
        errors.append(f"{path}: {exc}")
        return None


def _validate_int_list(value, path, errors, lo=1, increasing=True):
    if not isinstance(value, list) or not value:
        errors.append(f"{path}: expected a nonempty list of integers")
        return None
    out = []
    for i, v in enumerate(value):
        iv = _check_int(v, f"{path}[{i}]", errors, lo=lo)
        if iv is None:
            return None
        out.append(iv)
    if increasing and any(b <= a for a, b in zip(out, out[1:])):
        errors.append(f"{path}: must be strictly increasing, got {out}")
        return None
    return out


# Per-kind parameter tables: name -> (default, validator).  Validators
# receive (value, path, errors, spec) and return the normalized value or
# None after recording an error.
def _params_schema(kind: str) -> Dict[str, Tuple[object, Callable]]:
    def num(lo=None, hi=None, strict_lo=False):
        def check(v, path, errors, spec):
            if not _is_num(v):
                errors.append(f"{path}: expected a number, got {v!r}")
                return None
            fv = float(v)
            if lo is not None and (fv <= lo if strict_lo else fv < lo):
                errors.append(f"{path}: must be {'>' if strict_lo else '>='} {lo}, got {v}")
                return None
            if hi is not None and fv > hi:
                errors.append(f"{path}: must be <= {hi}, got {v}")
                return None
            return fv

        return check

    def integer(lo=None, hi=None):
        def check(v, path, errors, spec):
            return _check_int(v, path, errors, lo=lo, hi=hi)

        return check

    def boolean(v, path, errors, spec):
        if not isinstance(v, bool):
            errors.append(f"{path}: expected true/false, got {v!r}")
            return None
        return v

    def element(v, path, errors, spec):
        return _validate_element(v, path, errors, spec)

    def element_list(v, path, errors, spec):
        if not isinstance(v, list) or not v:
            errors.append(f"{path}: expected a nonempty list of element strings")
            return None
        out = []
        for i, s in enumerate(v):
            e = _validate_element(s, f"{path}[{i}]", errors, spec)
            if e is None:
                return None
            out.append(e)
        return out

    def int_list(lo=1):
        def check(v, path, errors, spec):
            got = _validate_int_list(v, path, errors, lo=lo)
            return None if got is None else tuple(got)

        return check

    def optional(inner):
        def check(v, path, errors, spec):
            if v is None:
                return None
            return inner(v, path, errors, spec)

        return check

    def choice(*names):
        def check(v, path, errors, spec):
            if v not in names:
                errors.append(f"{path}: expected one of {names}, got {v!r}")
                return None
            return v

        return check

    def float_list_01(v, path, errors, spec):
        if not isinstance(v, list) or not v:
            errors.append(f"{path}: expected a nonempty list of numbers")
            return None
        out = []
        for i, x in enumerate(v):
            fx = num(lo=0.0, hi=1.0, strict_lo=True)(x, f"{path}[{i}]", errors, spec)
            if fx is None:
                return None
            out.append(fx)
        if any(b <= a for a, b in zip(out, out[1:])):
            errors.append(f"{path}: must be strictly increasing, got {out}")
            return None
        return tuple(out)

    schemas: Dict[str, Dict[str, Tuple[object, Callable]]] = {
        "spectral-report": {},
        "green-table": {
            "y_radius": (3, integer(lo=1)),
            "tolerance": (0.01, num(lo=0.0, strict_lo=True)),
            "check_count": (8, integer(lo=1)),
        },
        "ratio-limit": {
            "x": ("f1:(1)", element),
            "y": ("f1:(1).f2:(1)", element),
            "n_list": (None, optional(int_list(lo=1))),
            "sums": (True, boolean),
            "s": (None, optional(integer(lo=1))),
            "sums_radius": (5, integer(lo=1)),
            "tolerance": (0.1, num(lo=0.0, strict_lo=True)),
        },
        "ray-scan": {
            "head": ("e", element),
            "period": ("f1:(1).f2:(1)", element),
            "depths": ([1, 2, 3, 4, 6, 8], int_list(lo=0)),
            "x": (None, optional(element_list)),
            "x_radius": (1, integer(lo=0)),
            "method": ("sums", choice("finite_n", "sums")),
            "n_list": (None, optional(int_list(lo=1))),
            "s": (None, optional(integer(lo=1))),
            "sums_radius": (5, integer(lo=1)),
        },
        "ancona": {
            "count": (300, integer(lo=1)),
            "offset_radius": (2, integer(lo=0)),
            "max_syllables": (4, integer(lo=1)),
            "max_coord": (2, integer(lo=1)),
            "strong_depths": ([2, 3, 4, 5, 6, 7, 8], int_list(lo=1)),
            "strong_count": (40, integer(lo=1)),
            "dump_samples": (False, boolean),
        },
        "llt-fit": {
            "y": (None, optional(element_list)),
            "n_start": (8, integer(lo=1)),
        },
        "radical": {
            "ball_radius": (3, integer(lo=1)),
            "test_radius": (2, integer(lo=0)),
            "tol": (0.01, num(lo=0.0, strict_lo=True)),
            "n_list": (None, optional(int_list(lo=1))),
        },
        "reproduce-z5z": {
            "alpha_grid": (None, optional(float_list_01)),
            "spectral_endpoints": (True, boolean),
        },
        "selftest": {},
    }
    return schemas[kind]


def experiment_kinds() -> Tuple[str, ...]:
    return (
        "spectral-report",
        "green-table",
        "ratio-limit",
        "ray-scan",
        "ancona",
        "llt-fit",
        "radical",
        "reproduce-z5z",
        "selftest",
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description; the unit of reproducibility.

    All numeric content of a run is a function of this object plus the
    package version.  canonical() is the hashing form: defaults filled,
    fractions rendered exactly, keys sorted.
    """

    ranks: Tuple[int, ...]
    weights: Tuple[object, ...]  # Fractions and/or floats, summing to 1
    laziness: object
    atoms: Optional[Tuple[Optional[Tuple[Tuple[Tuple[int, ...], object], ...]], ...]]
    ball_radius: int
    index_radius: Optional[int]
    n_max: int
    r_grid: Tuple[float, ...]
    element_budget: int
    quadrature: Optional[int]
    kind: Optional[str]
    params: Dict[str, object]
    seed: int
    warnings: Tuple[str, ...] = ()

    # -- canonical form and hash ---------------------------------------

    @staticmethod
    def _render(v):
        if isinstance(v, Fraction):
            return str(v)
        return v

    def canonical(self) -> Dict:
        atoms = None
        if self.atoms is not None:
            atoms = [
                None
                if factor_atoms is None
                else [[list(vec), self._render(w)] for vec, w in factor_atoms]
                for factor_atoms in self.atoms
            ]
        return {
            "group": {"ranks": list(self.ranks)},
            "measure": {
                "weights": [self._render(w) for w in self.weights],
                "laziness": self._render(self.laziness),
                "atoms": atoms,
            },
            "budgets": {
                "ball_radius": self.ball_radius,
                "index_radius": self.index_radius,
                "n_max": self.n_max,
                "r_grid": list(self.r_grid),
                "element_budget": self.element_budget,
                "quadrature": self.quadrature,
            },
            "experiment": {
                "kind": self.kind,
                "params": _jsonable(self.params),
            },
            "seed": self.seed,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- builders ------------------------------------------------------

    @cached_property
    def spec(self) -> FreeProductSpec:
        return FreeProductSpec(self.ranks)

    def factor_measures(self) -> List[LatticeMeasure]:
        measures = []
        for i, d in enumerate(self.ranks):
            if self.atoms is None or self.atoms[i] is None:
                measures.append(LatticeMeasure.simple_walk(d))
            else:
                measures.append(LatticeMeasure(d, dict(self.atoms[i])))
        return measures

    @cached_property
    def adapted(self) -> AdaptedMeasure:
        return AdaptedMeasure(self.spec, list(self.weights), self.factor_measures())

    @cached_property
    def walk_measure(self) -> AdaptedMeasure:
        """The stepped measure: laziness applied on top of the adapted one."""
        eps = self.laziness
        if float(eps) == 0.0:
            return self.adapted
        return self.adapted.lazy(eps)

    @cached_property
    def system(self) -> PhiPsiSystem:
        """Green calculus of the non-lazy walk.

        Laziness rescales the spectral radius but leaves Green functions,
        Martin kernels, and ratio-limit kernels of interest attached to
        the underlying walk, so the analytic side always uses the plain
        measure; walk_spectral_radius carries the laziness correction.
        """
        evaluators = [
            FactorGreenEvaluator(m, nodes_per_axis=self.quadrature)
            for m in self.adapted.factor_measures
        ]
        return PhiPsiSystem(evaluators, [float(w) for w in self.weights])

    def walk_spectral_radius(self) -> float:
        return lazy_spectral_radius(self.system.R, float(self.laziness))

    def r_values(self) -> List[float]:
        R = self.system.R
        return [m * R for m in self.r_grid]

    def n_list_default(self) -> Tuple[int, ...]:
        return _default_n_list(self.n_max)


def _jsonable(value):
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in sorted(value.items())}
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def parse_config_dict(
    raw: Mapping, strict: bool = False, kind: Optional[str] = None
) -> ExperimentConfig:
    """Validate a config mapping; raises ConfigError listing every problem.

    `kind` is the experiment the caller intends to run.  A config may
    leave experiment.kind null and let the caller choose, but when both
    are present they must agree; params are validated against the chosen
    kind's table and missing entries are filled with defaults.
    """
    errors: List[str] = []
    chk = _Checker(strict)
    if not isinstance(raw, Mapping):
        raise ConfigError(["top level: expected a JSON object"])
    _check_unknown(raw, ("group", "measure", "budgets", "experiment", "seed"), "", chk)

    group = raw.get("group", {})
    ranks: Tuple[int, ...] = ()
    if not isinstance(group, Mapping):
        errors.append("group: expected an object")
    else:
        _check_unknown(group, ("ranks",), "group", chk)
        raw_ranks = group.get("ranks", [1, 1])
        got = _validate_int_list(raw_ranks, "group.ranks", errors, lo=1, increasing=False)
        if got is not None:
            if len(got) < 2:
                errors.append(f"group.ranks: a free product needs >= 2 factors, got {len(got)}")
            else:
                ranks = tuple(got)

    measure = raw.get("measure", {})
    weights: List[object] = []
    laziness: object = Fraction(0)
    atoms_norm = None
    if not isinstance(measure, Mapping):
        errors.append("measure: expected an object")
    elif ranks:
        _check_unknown(measure, ("weights", "laziness", "atoms"), "measure", chk)
        raw_weights = measure.get("weights")
        if raw_weights is None:
            weights = [Fraction(1, len(ranks))] * len(ranks)
        elif not isinstance(raw_weights, list) or len(raw_weights) != len(ranks):
            errors.append(
                f"measure.weights: expected {len(ranks)} entries, got {raw_weights!r}"
            )
        else:
            for i, w in enumerate(raw_weights):
                fw = _as_fraction(w, f"measure.weights[{i}]", errors)
                if fw is not None:
                    if fw <= 0:
                        errors.append(f"measure.weights[{i}]: must be positive, got {w!r}")
                    else:
                        weights.append(fw)
            if len(weights) == len(ranks):
                total = sum(weights)
                off = abs(float(total) - 1.0)
                if off > 1e-9:
                    chk.flag(
                        "measure.weights",
                        f"sum to {float(total):.12g}, normalized to 1",
                    )
                    weights = [w / total for w in weights]

        raw_lazy = measure.get("laziness", 0)
        fl = _as_fraction(raw_lazy, "measure.laziness", errors)
        if fl is not None:
            if not 0 <= float(fl) < 1:
                errors.append(f"measure.laziness: must be in [0, 1), got {raw_lazy!r}")
            else:
                laziness = fl

        raw_atoms = measure.get("atoms")
        if raw_atoms is not None:
            atoms_norm = _validate_atoms(raw_atoms, ranks, errors, chk)

    budgets = raw.get("budgets", {})
    bvals = dict(_BUDGET_DEFAULTS)
    if not isinstance(budgets, Mapping):
        errors.append("budgets: expected an object")
    else:
        _check_unknown(budgets, tuple(_BUDGET_DEFAULTS), "budgets", chk)
        for name in ("ball_radius", "n_max", "element_budget"):
            if name in budgets:
                got = _check_int(budgets[name], f"budgets.{name}", errors, lo=1)
                if got is not None:
                    bvals[name] = got
        if budgets.get("index_radius") is not None:
            got = _check_int(budgets["index_radius"], "budgets.index_radius", errors, lo=1)
            if got is not None:
                if got > bvals["ball_radius"]:
                    errors.append(
                        f"budgets.index_radius: must be <= ball_radius "
                        f"{bvals['ball_radius']}, got {got}"
                    )
                else:
                    bvals["index_radius"] = got
        if budgets.get("quadrature") is not None:
            got = _check_int(budgets["quadrature"], "budgets.quadrature", errors, lo=8)
            if got is not None:
                bvals["quadrature"] = got
        if "r_grid" in budgets:
            rg = budgets["r_grid"]
            ok = isinstance(rg, list) and rg and all(_is_num(v) for v in rg)
            if ok:
                vals = [float(v) for v in rg]
                ok = all(0.0 < v <= 1.0 for v in vals) and all(
                    b > a for a, b in zip(vals, vals[1:])
                )
            if not ok:
                errors.append(
                    "budgets.r_grid: expected strictly increasing multipliers of R "
                    f"in (0, 1], got {rg!r}"
                )
            else:
                bvals["r_grid"] = vals

    experiment = raw.get("experiment", {})
    config_kind = None
    raw_params: Mapping = {}
    if not isinstance(experiment, Mapping):
        errors.append("experiment: expected an object")
    else:
        _check_unknown(experiment, ("kind", "params"), "experiment", chk)
        config_kind = experiment.get("kind")
        if config_kind is not None and config_kind not in experiment_kinds():
            errors.append(
                f"experiment.kind: unknown experiment {config_kind!r}; "
                f"choose from {', '.join(experiment_kinds())}"
            )
            config_kind = None
        rp = experiment.get("params", {})
        if not isinstance(rp, Mapping):
            errors.append("experiment.params: expected an object")
        else:
            raw_params = rp

    if kind is not None and config_kind is not None and kind != config_kind:
        errors.append(
            f"experiment.kind: config says {config_kind!r} but the "
            f"requested experiment is {kind!r}"
        )
    chosen = kind or config_kind

    params: Dict[str, object] = {}
    if chosen is not None and not errors and ranks:
        spec = FreeProductSpec(ranks)
        schema = _params_schema(chosen)
        _check_unknown(raw_params, tuple(schema), "experiment.params", chk)
        for name, (default, validator) in schema.items():
            # defaults run through the same validator so element strings
            # and grids arrive in normalized form either way
            value = raw_params.get(name, default)
            if value is None:
                params[name] = None
            else:
                got = validator(value, f"experiment.params.{name}", errors, spec)
                if got is not None:
                    params[name] = got
    elif raw_params and chosen is None:
        chk.flag("experiment.params", "ignored because no experiment kind is set")

    seed = raw.get("seed", 0)
    seed_val = _check_int(seed, "seed", errors, lo=0)

    errors.extend(chk.errors)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        ranks=ranks,
        weights=tuple(weights),
        laziness=laziness,
        atoms=atoms_norm,
        ball_radius=bvals["ball_radius"],
        index_radius=bvals["index_radius"],
        n_max=bvals["n_max"],
        r_grid=tuple(bvals["r_grid"]),
        element_budget=bvals["element_budget"],
        quadrature=bvals["quadrature"],
        kind=chosen,
        params=params,
        seed=seed_val if seed_val is not None else 0,
        warnings=tuple(chk.warnings),
    )


def _validate_atoms(raw_atoms, ranks, errors, chk):
    if not isinstance(raw_atoms, list) or len(raw_atoms) != len(ranks):
        errors.append(
            f"measure.atoms: expected one entry per factor ({len(ranks)}), got {raw_atoms!r}"
        )
        return None
    out = []
    for i, (entry, rank) in enumerate(zip(raw_atoms, ranks)):
        path = f"measure.atoms[{i}]"
        if entry is None or entry == "simple":
            out.append(None)
            continue
        if not isinstance(entry, list) or not entry:
            errors.append(f"{path}: expected 'simple' or a list of [vector, weight] pairs")
            out.append(None)
            continue
        pairs: Dict[Tuple[int, ...], object] = {}
        bad = False
        for j, pair in enumerate(entry):
            ppath = f"{path}[{j}]"
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not isinstance(pair[0], list)
            ):
                errors.append(f"{ppath}: expected [vector, weight]")
                bad = True
                continue
            vec_raw, w_raw = pair
            if len(vec_raw) != rank or not all(
                isinstance(c, int) and not isinstance(c, bool) for c in vec_raw
            ):
                errors.append(f"{ppath}: vector must have {rank} integer coordinates")
                bad = True
                continue
            w = _as_fraction(w_raw, ppath, errors)
            if w is None or w <= 0:
                if w is not None:
                    errors.append(f"{ppath}: weight must be positive, got {w_raw!r}")
                bad = True
                continue
            vec = tuple(vec_raw)
            pairs[vec] = pairs.get(vec, 0) + w
        if bad:
            out.append(None)
            continue
        for vec, w in pairs.items():
            neg = tuple(-c for c in vec)
            if abs(float(pairs.get(neg, 0)) - float(w)) > 1e-12:
                errors.append(f"{path}: atoms must be symmetric; {vec} and {neg} differ")
                bad = True
                break
        if bad:
            out.append(None)
            continue
        total = sum(pairs.values())
        if abs(float(total) - 1.0) > 1e-9:
            chk.flag(path, f"atom weights sum to {float(total):.12g}, normalized to 1")
            pairs = {v: w / total for v, w in pairs.items()}
        measure = LatticeMeasure(rank, dict(pairs))
        if not measure.generates_lattice():
            errors.append(f"{path}: support does not generate Z^{rank}")
        out.append(tuple(sorted(pairs.items())))
    return tuple(out)


def parse_config(path, strict: bool = False, kind: Optional[str] = None) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"{p}: {exc}"]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            [f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"]
        ) from exc
    return parse_config_dict(raw, strict=strict, kind=kind)


def list_canned() -> List[str]:
    """Names of the configs shipped with the package."""
    root = resources.files("freewalk").joinpath("configs")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def canned_config(name: str) -> Dict:
    """Load a shipped config by name (e.g. 'f2', 'z5z') as a raw dict."""
    path = resources.files("freewalk").joinpath("configs", f"{name}.json")
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(
            [f"no canned config {name!r}; available: {', '.join(list_canned())}"]
        ) from None
    return json.loads(text)


# ---- cache ------------------------------------------------------------


def cache_key(meta: Mapping) -> str:
    """Content hash of a canonical-JSON metadata mapping."""
    blob = json.dumps(_jsonable(dict(meta)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def cache_put(cache_dir, key: str, arrays: Mapping[str, np.ndarray], meta: Mapping) -> Path:
    """Store arrays + metadata under the key, with a sha256 sidecar.

    Writes are staged and renamed so a concurrent reader never sees a
    half-written entry; I/O failures (disk full, permissions) raise
    CacheError instead of leaving a silently unusable entry.
    """
    directory = Path(cache_dir)
    payload = dict(arrays)
    payload["__meta__"] = np.array(json.dumps(_jsonable(dict(meta)), sort_keys=True))
    target = directory / f"{key}.npz"
    tmp = directory / f".{key}.tmp"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        np.savez_compressed(buf, **payload)
        blob = buf.getvalue()
        tmp.write_bytes(blob)
        os.replace(tmp, target)
        (directory / f"{key}.sha256").write_text(hashlib.sha256(blob).hexdigest() + "\n")
    except OSError as exc:
        raise CacheError(f"cache write failed for {target}: {exc}") from exc
    return target


def cache_get(cache_dir, key: str) -> Optional[Tuple[Dict[str, np.ndarray], Dict]]:
    """Load a cache entry; corrupt or absent entries are a miss (None)."""
    directory = Path(cache_dir)
    target = directory / f"{key}.npz"
    sidecar = directory / f"{key}.sha256"
    try:
        blob = target.read_bytes()
        expected = sidecar.read_text().strip()
    except OSError:
        return None
    if hashlib.sha256(blob).hexdigest() != expected:
        return None
    try:
        with np.load(io.BytesIO(blob), allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
            meta = json.loads(str(data["__meta__"]))
    except (OSError, ValueError, KeyError):
        return None
    return arrays, meta


class CurveTable:
    """Transition curves P^n(e, w) for a fixed target set.

    The cacheable extract of a convolution table: enough to evaluate
    transition(x, y, n) for every x^{-1}y in the target set, with the
    same lookup contract as the full table (KeyError on unknown targets).
    """

    def __init__(self, spec: FreeProductSpec, targets: Sequence[Element],
                 rows: np.ndarray, radius: int):
        if rows.shape[0] != len(targets):
            raise ValueError("need one curve per target")
        self.spec = spec
        self.targets = list(targets)
        self.rows = rows
        self.radius = radius
        self.n_max = rows.shape[1] - 1
        self._index = {t: i for i, t in enumerate(self.targets)}
        identity_row = self._index.get(IDENTITY)
        self.pn_return = rows[identity_row] if identity_row is not None else None

    def transition(self, x: Element, y: Element, n: int) -> float:
        if not 0 <= n <= self.n_max:
            raise ValueError(f"step count {n} outside the stored range 0..{self.n_max}")
        w = multiply(inverse(x), y)
        idx = self._index.get(w)
        if idx is None:
            raise KeyError(
                f"transition target {format_element(w)} is not among the stored curves"
            )
        return float(self.rows[idx, n])


def _compute_curves(
    config: ExperimentConfig, targets: List[Element]
) -> Tuple[np.ndarray, Dict]:
    adapted = config.walk_measure
    table = ConvolutionTable(
        adapted,
        radius=config.ball_radius,
        budget=config.element_budget,
        keep_powers=False,
        index_radius=config.index_radius,
    )
    for t in targets:
        try:
            table.register_target(t)
        except KeyError as exc:
            raise ConfigError(
                [f"budgets.ball_radius: transition target {format_element(t)} "
                 f"does not fit the table ({exc}); raise ball_radius or "
                 "index_radius, or shrink the experiment"]
            ) from exc
    table.run(config.n_max)
    rows = np.empty((len(targets), config.n_max + 1), dtype=np.float64)
    for i, t in enumerate(targets):
        for n in range(config.n_max + 1):
            rows[i, n] = table.transition(IDENTITY, t, n)
    diag = {"deficit_at_n_max": float(table.mass_deficit(config.n_max))}
    return rows, diag


def curves_for(
    config: ExperimentConfig,
    targets: Sequence[Element],
    cache_dir=None,
) -> Tuple[CurveTable, bool]:
    """Cache-aware transition curves for the config's walk.

    Returns (table, hit).  The cache key covers the measure, the budgets
    that shape the table, and the sorted target set, so any config change
    that could alter a number changes the key.
    """
    target_list = sorted(set(targets) | {IDENTITY})
    meta = {
        "payload": "convolution-curves",
        "group": list(config.ranks),
        "weights": [ExperimentConfig._render(w) for w in config.weights],
        "laziness": ExperimentConfig._render(config.laziness),
        "atoms": config.canonical()["measure"]["atoms"],
        "radius": config.ball_radius,
        "index_radius": config.index_radius,
        "n_max": config.n_max,
        "element_budget": config.element_budget,
        "targets": [format_element(t) for t in target_list],
        "version": ARTIFACT_VERSION,
    }
    key = cache_key(meta)
    if cache_dir is not None:
        found = cache_get(cache_dir, key)
        if found is not None:
            arrays, _ = found
            return (
                CurveTable(config.spec, target_list, arrays["rows"], config.ball_radius),
                True,
            )
    rows, diag = _compute_curves(config, target_list)
    if cache_dir is not None:
        cache_put(cache_dir, key, {"rows": rows}, {**meta, **diag})
    return CurveTable(config.spec, target_list, rows, config.ball_radius), False


# ---- result tables ----------------------------------------------------


@dataclass(frozen=True)
class Column:
    name: str
    unit: str
    produced_by: str
    values: Tuple


@dataclass(frozen=True)
class ResultTable:
    """Columns with units and per-column provenance, rendered as CSV.

    The header carries one comment line per column naming the operation
    that produced it, so a table can be read on its own.
    """

    columns: Tuple[Column, ...]

    def __post_init__(self):
        if not self.columns:
            raise ValueError("a result table needs at least one column")
        n = len(self.columns[0].values)
        if any(len(c.values) != n for c in self.columns):
            raise ValueError("all columns must have the same number of rows")

    @property
    def num_rows(self) -> int:
        return len(self.columns[0].values)

    def to_csv(self) -> str:
        lines = [
            f"# column {c.name}: unit={c.unit}; produced_by={c.produced_by}"
            for c in self.columns
        ]
        lines.append(",".join(c.name for c in self.columns))
        for i in range(self.num_rows):
            cells = []
            for c in self.columns:
                v = c.values[i]
                cells.append(repr(v) if isinstance(v, float) else str(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def table_from(rows: Sequence[Tuple], names: Sequence[str], units: Sequence[str],
               produced_by: Sequence[str]) -> ResultTable:
    cols = tuple(
        Column(n, u, p, tuple(row[i] for row in rows))
        for i, (n, u, p) in enumerate(zip(names, units, produced_by))
    )
    return ResultTable(cols)


# ---- run orchestration ------------------------------------------------


@dataclass(frozen=True)
class StageRecord:
    name: str
    seconds: float
    cache: str  # "hit", "miss", or "none"
    status: str  # "ok" or "failed: <reason>"


@dataclass(frozen=True)
class RunManifest:
    """The completion marker of a run, written after every result file."""

    config_hash: str
    version: str
    kind: str
    seed: int
    stages: Tuple[StageRecord, ...]
    tolerances: Dict[str, float]
    artifacts: Tuple[str, ...]
    partial: bool

    def to_json(self) -> str:
        payload = {
            "config_hash": self.config_hash,
            "version": self.version,
            "kind": self.kind,
            "seed": self.seed,
            "stages": [
                {
                    "name": s.name,
                    "seconds": round(s.seconds, 6),
                    "cache": s.cache,
                    "status": s.status,
                }
                for s in self.stages
            ],
            "tolerances": self.tolerances,
            "artifacts": list(self.artifacts),
            "partial": self.partial,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


class RunContext:
    """Mutable state a runner threads through its stages."""

    def __init__(self, config: ExperimentConfig, out_dir: Path,
                 cache_dir: Optional[Path], jobs: int):
        self.config = config
        self.out_dir = Path(out_dir)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.jobs = max(1, int(jobs))
        self.stages: List[StageRecord] = []
        self.tolerances: Dict[str, float] = {}
        self.artifacts: List[str] = []
        self._cache_flag = "none"

    @contextmanager
    def stage(self, name: str):
        self._cache_flag = "none"
        start = time.perf_counter()
        try:
            yield
        except Exception as exc:
            self.stages.append(
                StageRecord(name, time.perf_counter() - start, self._cache_flag,
                            f"failed: {exc}")
            )
            raise
        self.stages.append(
            StageRecord(name, time.perf_counter() - start, self._cache_flag, "ok")
        )

    def curves(self, targets: Sequence[Element]) -> CurveTable:
        table, hit = curves_for(self.config, targets, self.cache_dir)
        self._cache_flag = "hit" if hit else "miss"
        return table

    def emit(self, filename: str, text: str) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / filename
        tmp = self.out_dir / f".{filename}.tmp"
        tmp.write_text(text)
        os.replace(tmp, path)
        self.artifacts.append(filename)

    def check(self, name: str, delta: float, tolerance: float) -> None:
        """Record a cross-check; above tolerance the run stops loudly."""
        self.tolerances[name] = tolerance
        if not (delta <= tolerance):
            raise InconsistencyError(name, delta, tolerance)

    def pmap(self, fn: Callable, items: Sequence):
        """Deterministic parallel map: worker count never changes results."""
        if self.jobs == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))


def _profile_payload(p: KernelProfile) -> Dict:
    out = {
        "abscissa": list(p.abscissa),
        "values": list(p.values),
        "extrapolated": p.extrapolated,
        "order": p.order,
        "error": p.error,
        "variable": p.variable,
        "notes": list(p.notes),
    }
    if p.trend is not None:
        out["trend"] = {
            "last": p.trend.last,
            "max_deviation": p.trend.max_deviation,
            "decreasing": p.trend.decreasing,
        }
    return out


# ---- runners ----------------------------------------------------------


def _run_spectral_report(ctx: RunContext, config: ExperimentConfig) -> None:
    with ctx.stage("green-system"):
        system = config.system
        R = system.R
        gee = system.green_ee(R)
    with ctx.stage("classify"):
        report = system.spectral_report()
    with ctx.stage("cross-check"):
        # zeta_i solves zeta G_i(0|zeta) = alpha_i R G(e,e|R); re-evaluate
        # the factor Green at the root and measure the residual.  Skipped
        # for degenerate factors: there zeta_i sits at the factor radius
        # where the Green derivative can diverge, so the residual reflects
        # the singularity, not the solver.
        worst = 0.0
        for i, (z, is_deg) in enumerate(zip(report.zeta_at_R, report.degenerate)):
            if is_deg:
                continue
            ev = system.evaluators[i]
            g0 = ev.green((0,) * ev.rank, z)
            target = float(system.weights[i]) * R * gee
            worst = max(worst, abs(z * g0 - target) / target)
        ctx.check("zeta_fixed_point_residual", worst, 1e-9)
    with ctx.stage("emit"):
        payload = report.as_dict()
        payload["green_ee_at_R"] = gee
        payload["walk_spectral_radius"] = config.walk_spectral_radius()
        payload["laziness"] = float(config.laziness)
        payload["produced_by"] = "PhiPsiSystem.spectral_report"
        ctx.emit("spectral_report.json", json.dumps(payload, indent=2, sort_keys=True))


def _run_green_table(ctx: RunContext, config: ExperimentConfig) -> None:
    params = config.params
    if float(config.laziness) != 0.0:
        raise ConfigError(
            ["experiment green-table: set measure.laziness to 0; the table "
             "describes the plain walk and the series check must match it"]
        )
    system = config.system
    rs = config.r_values()
    with ctx.stage("enumerate"):
        ys = ball(config.spec, params["y_radius"])
    with ctx.stage("product-greens"):
        def row_for(r):
            return [system.product_green(IDENTITY, y, r) for y in ys]

        greens = ctx.pmap(row_for, rs)
    with ctx.stage("series-check"):
        # direct series + tail bound on a spread of targets, plain measure
        step = max(1, len(ys) // params["check_count"])
        sample = ys[::step][: params["check_count"]]
        table = ctx.curves(sample)
        worst = 0.0
        for y in sample:
            for r in rs:
                direct, tail = direct_series_green(table, y, r)
                exact = system.product_green(IDENTITY, y, r)
                gap = abs(exact - direct)
                excess = max(0.0, gap - tail) / exact
                worst = max(worst, excess)
        ctx.check("green_series_delta", worst, params["tolerance"])
    with ctx.stage("emit"):
        rows = []
        for r, row in zip(rs, greens):
            for y, g in zip(ys, row):
                rows.append((format_element(y), r, g))
        table_out = table_from(
            rows,
            names=("y", "r", "green"),
            units=("element", "radius", "expected visits"),
            produced_by=(
                "groups.ball",
                "ExperimentConfig.r_values",
                "PhiPsiSystem.product_green",
            ),
        )
        ctx.emit("green_table.csv", table_out.to_csv())
        ctx.emit(
            "green_checks.json",
            json.dumps(
                {
                    "checked_targets": [format_element(y) for y in sample],
                    "r_values": rs,
                    "worst_excess_over_tail": worst,
                    "tolerance": params["tolerance"],
                    "produced_by": "product_green vs direct_series_green",
                },
                indent=2,
                sort_keys=True,
            ),
        )


def _run_ratio_limit(ctx: RunContext, config: ExperimentConfig) -> None:
    params = config.params
    x, y = params["x"], params["y"]
    n_list = params["n_list"] or config.n_list_default()
    if max(n_list) > config.n_max:
        raise ConfigError(
            [f"experiment.params.n_list: horizon {max(n_list)} exceeds "
             f"budgets.n_max {config.n_max}"]
        )
    with ctx.stage("finite-n-curves"):
        table = ctx.curves([y, multiply(inverse(x), y)])
    with ctx.stage("finite-n-ratio"):
        fin = h_finite_n(x, y, table, n_list)
    payload: Dict[str, object] = {
        "x": format_element(x),
        "y": format_element(y),
        "finite_n": _profile_payload(fin),
        "produced_by": "h_finite_n / h_via_sums",
    }
    if params["sums"]:
        with ctx.stage("green-system"):
            system = config.system
            report = system.spectral_report()
        with ctx.stage("sums-ratio"):
            sums = h_via_sums(
                x, y, params["s"], config.r_values(), system,
                report=report, ball_radius=params["sums_radius"],
                budget=config.element_budget,
            )
        payload["sums"] = _profile_payload(sums)
        with ctx.stage("cross-check"):
            delta = abs(fin.extrapolated - sums.extrapolated) / abs(sums.extrapolated)
            payload["route_delta"] = delta
            payload["tolerance"] = params["tolerance"]
            ctx.check("ratio_limit_route_delta", delta, params["tolerance"])
    with ctx.stage("emit"):
        ctx.emit("ratio_limit.json", json.dumps(payload, indent=2, sort_keys=True))
        rows = [("finite_n", a, v) for a, v in zip(fin.abscissa, fin.values)]
        prods = ["h_finite_n"]
        if params["sums"]:
            rows += [("sums", a, v) for a, v in zip(
                payload["sums"]["abscissa"], payload["sums"]["values"])]
            prods.append("h_via_sums")
        ctx.emit(
            "ratio_limit.csv",
            table_from(
                rows,
                names=("route", "abscissa", "ratio"),
                units=("route", "route variable", "1"),
                produced_by=(" / ".join(prods),) * 3,
            ).to_csv(),
        )


def _run_ray_scan(ctx: RunContext, config: ExperimentConfig) -> None:
    params = config.params
    ray = RaySpec(head=params["head"], period=params["period"])
    depths = list(params["depths"])
    xs = params["x"]
    if xs is None:
        xs = ball(config.spec, params["x_radius"])
        xs = [x for x in xs if x != IDENTITY] or [IDENTITY]
    with ctx.stage("green-system"):
        system = config.system
        report = system.spectral_report()
    kwargs: Dict[str, object] = {"system": system}
    if params["method"] == "finite_n":
        n_list = params["n_list"] or config.n_list_default()
        with ctx.stage("finite-n-curves"):
            targets = []
            for n in depths:
                yn = ray.depth(n)
                targets.append(yn)
                targets.extend(multiply(inverse(x), yn) for x in xs)
            table = ctx.curves(targets)
        kwargs.update(table=table, n_list=n_list)
    else:
        kwargs.update(
            r_grid=config.r_values(), s=params["s"], report=report,
            ball_radius=params["sums_radius"], budget=config.element_budget,
        )
    with ctx.stage("scan"):
        def profile_for(x):
            return hk_ratio_along_ray(x, ray, depths, params["method"], **kwargs)

        profiles = ctx.pmap(profile_for, xs)
    with ctx.stage("emit"):
        rows = []
        for x, p in zip(xs, profiles):
            for a, v in zip(p.abscissa, p.values):
                rows.append((format_element(x), int(a), v, abs(v - 1.0)))
        ctx.emit(
            "ray_scan.csv",
            table_from(
                rows,
                names=("x", "relative_depth", "h_over_k", "deviation"),
                units=("element", "syllables", "1", "1"),
                produced_by=("config", "RaySpec.depth", "hk_ratio_along_ray",
                             "hk_ratio_along_ray"),
            ).to_csv(),
        )
        payload = {
            "ray": {
                "head": format_element(ray.head),
                "period": format_element(ray.period),
            },
            "method": params["method"],
            "spectral_status": report.status,
            "profiles": {
                format_element(x): _profile_payload(p) for x, p in zip(xs, profiles)
            },
            "produced_by": "hk_ratio_along_ray",
        }
        ctx.emit("ray_scan.json", json.dumps(payload, indent=2, sort_keys=True))


def _run_ancona(ctx: RunContext, config: ExperimentConfig) -> None:
    params = config.params
    system = config.system
    spec = config.spec
    rs = config.r_values()
    # the supremum of the triple ratios is attained at the radius itself,
    # so the scan always includes r = R even when the grid stops short
    if rs[-1] < system.R * (1.0 - 1e-12):
        rs = rs + [system.R]
    count = params["count"]
    with ctx.stage("weak-prefix"):
        prefix_report = weak_ancona_scan(
            system, rs,
            prefix_triple_sampler(spec, params["max_syllables"], params["max_coord"]),
            count, seed=config.seed,
        )
    with ctx.stage("identity-check"):
        worst = 0.0
        for s in prefix_report.samples:
            target = 1.0 / system.green_ee(s.r)
            worst = max(worst, abs(s.ratio - target) / target)
        ctx.check("prefix_factorization_delta", worst, 1e-10)
    with ctx.stage("weak-perturbed"):
        perturbed_report = weak_ancona_scan(
            system, rs,
            perturbed_triple_sampler(
                spec, params["offset_radius"], params["max_syllables"],
                params["max_coord"],
            ),
            count, seed=config.seed + 1,
        )
    with ctx.stage("strong-fit"):
        fit = strong_ancona_fit(
            system, list(params["strong_depths"]),
            shared_prefix_pair_sampler(spec, max_coord=params["max_coord"]),
            params["strong_count"], seed=config.seed + 2,
        )
    with ctx.stage("emit"):
        payload = {
            "weak_prefix": json.loads(prefix_report.to_json()),
            "weak_perturbed": json.loads(perturbed_report.to_json()),
            "prefix_identity_delta": worst,
            "strong": json.loads(fit.to_json()),
            "produced_by": "weak_ancona_scan / strong_ancona_fit",
        }
        ctx.emit("ancona.json", json.dumps(payload, indent=2, sort_keys=True))
        if params["dump_samples"]:
            ctx.emit("ancona_samples.csv", perturbed_report.samples_csv())


def _run_llt_fit(ctx: RunContext, config: ExperimentConfig) -> None:
    params = config.params
    ys = params["y"] or [IDENTITY]
    n_start = params["n_start"]
    if n_start + 4 > config.n_max:
        raise ConfigError(
            [f"experiment.params.n_start: window [{n_start}, {config.n_max}] "
             "has fewer than 5 steps; raise budgets.n_max"]
        )
    with ctx.stage("curves"):
        table = ctx.curves(ys)
    with ctx.stage("rate"):
        rate = config.walk_spectral_radius()
    with ctx.stage("fit"):
        fits = [
            llt_fit(table, IDENTITY, y, range(n_start, config.n_max + 1), rate)
            for y in ys
        ]
    with ctx.stage("emit"):
        payload = {
            "rate_used": rate,
            "laziness": float(config.laziness),
            "fits": {
                format_element(y): {
                    "exponent": f.exponent,
                    "coefficient": f.coefficient,
                    "residual": None if math.isinf(f.residual) else f.residual,
                    "n_used": list(f.n_used),
                }
                for y, f in zip(ys, fits)
            },
            "produced_by": "llt_fit",
        }
        ctx.emit("llt_fit.json", json.dumps(payload, indent=2, sort_keys=True))
        rows = []
        for y, f in zip(ys, fits):
            for n in f.n_used:
                p = table.transition(IDENTITY, y, n)
                model = f.coefficient * rate ** (-n) * n ** (-f.exponent)
                rows.append((format_element(y), n, p, model))
        ctx.emit(
            "llt_curves.csv",
            table_from(
                rows,
                names=("y", "n", "p_n", "fitted"),
                units=("element", "steps", "probability", "probability"),
                produced_by=("config", "config", "ConvolutionTable.run",
                             "llt_fit model"),
            ).to_csv(),
        )


def _run_radical(ctx: RunContext, config: ExperimentConfig) -> None:
    params = config.params
    n_list = params["n_list"] or config.n_list_default()
    with ctx.stage("curves"):
        gs = ball(config.spec, params["ball_radius"])
        xs = ball(config.spec, params["test_radius"])
        targets = set(gs)
        for x in xs:
            ix = inverse(x)
            targets.update(multiply(ix, g) for g in gs)
        table = ctx.curves(sorted(targets))
    with ctx.stage("scan"):
        scan = radical_scan(
            params["ball_radius"], "finite_n", table=table, n_list=n_list,
            test_radius=params["test_radius"], tol=params["tol"],
        )
    with ctx.stage("emit"):
        ctx.emit("radical.json", scan.to_json())


def _run_reproduce_z5z(ctx: RunContext, config: ExperimentConfig) -> None:
    params = config.params
    grid = list(params["alpha_grid"] or _alpha_default_grid())
    if len(config.ranks) != 2:
        raise ConfigError(
            ["experiment reproduce-z5z: the weight sweep needs exactly 2 factors"]
        )
    meta = {
        "payload": "zeta-curve",
        "group": list(config.ranks),
        "atoms": config.canonical()["measure"]["atoms"],
        "quadrature": config.quadrature,
        "alpha_grid": grid,
        "version": ARTIFACT_VERSION,
    }
    key = cache_key(meta)
    rows_arr = None
    with ctx.stage("sweep"):
        if ctx.cache_dir is not None:
            found = cache_get(ctx.cache_dir, key)
            if found is not None:
                rows_arr = found[0]["rows"]
                ctx._cache_flag = "hit"
        if rows_arr is None:
            measures = config.factor_measures()
            evaluators = [
                FactorGreenEvaluator(m, nodes_per_axis=config.quadrature)
                for m in measures
            ]

            def point(a1):
                system = PhiPsiSystem(evaluators, [a1, 1.0 - a1])
                return [a1, system.psi_at_theta_bar(), system.R]

            rows_arr = np.array(ctx.pmap(point, grid), dtype=np.float64)
            if ctx.cache_dir is not None:
                cache_put(ctx.cache_dir, key, {"rows": rows_arr}, meta)
                ctx._cache_flag = "miss"
    with ctx.stage("bracket"):
        signs = rows_arr[:, 1] < 0
        brackets = [
            (float(rows_arr[i, 0]), float(rows_arr[i + 1, 0]))
            for i in range(len(grid) - 1)
            if signs[i] != signs[i + 1]
        ]
    endpoint_reports = {}
    if params["spectral_endpoints"]:
        with ctx.stage("classify-endpoints"):
            measures = config.factor_measures()
            evaluators = [
                FactorGreenEvaluator(m, nodes_per_axis=config.quadrature)
                for m in measures
            ]
            for a1 in (grid[0], grid[-1]):
                system = PhiPsiSystem(evaluators, [a1, 1.0 - a1])
                endpoint_reports[repr(a1)] = system.spectral_report().as_dict()
    with ctx.stage("emit"):
        rows = [
            (float(a), float(p), float(R)) for a, p, R in rows_arr
        ]
        ctx.emit(
            "z5z_sweep.csv",
            table_from(
                rows,
                names=("alpha_1", "psi_theta_bar", "R"),
                units=("weight", "1", "radius"),
                produced_by=("config", "PhiPsiSystem.psi_at_theta_bar",
                             "PhiPsiSystem.compute_R"),
            ).to_csv(),
        )
        payload = {
            "alpha_grid": grid,
            "sign_change_brackets": brackets,
            "bracket_widths": [round(b - a, 12) for a, b in brackets],
            "endpoints": endpoint_reports,
            "produced_by": "psi_at_theta_bar sweep",
        }
        ctx.emit("z5z_summary.json", json.dumps(payload, indent=2, sort_keys=True))


def _run_selftest(ctx: RunContext, config: ExperimentConfig) -> None:
    """Closed-form battery: every check has an independent pinned target."""
    checks: List[Dict] = []

    def record(name, value, target, tol):
        delta = abs(value - target)
        checks.append(
            {"name": name, "value": value, "target": target,
             "tolerance": tol, "delta": delta, "pass": bool(delta <= tol)}
        )

    with ctx.stage("free-group-closed-forms"):
        spec2 = FreeProductSpec([1, 1])
        system2 = PhiPsiSystem.from_adapted(AdaptedMeasure.simple(spec2))
        record("R_f2", system2.R, 2.0 / math.sqrt(3.0), 1e-6)
        record("green_ee_at_R_f2", system2.green_ee(system2.R), 3.0, 1e-6)
        record("green_ee_at_1_f2", system2.green_ee(1.0), 1.5, 1e-6)
        record("zeta_at_R_f2", system2.zeta(1, system2.R), math.sqrt(3.0) / 2.0, 1e-8)
    with ctx.stage("watson-integral"):
        z3 = FactorGreenEvaluator(LatticeMeasure.simple_walk(3))
        record("green_z3_origin_at_1", z3.green((0, 0, 0), 1.0), 1.5163860591519780, 5e-5)
    with ctx.stage("factorization"):
        rep = weak_ancona_scan(
            system2, [0.5, system2.R], prefix_triple_sampler(spec2), 40,
            seed=config.seed,
        )
        worst = max(
            abs(s.ratio - 1.0 / system2.green_ee(s.r)) * system2.green_ee(s.r)
            for s in rep.samples
        )
        record("prefix_factorization", worst, 0.0, 1e-10)
        devs = one_room_scan(system2, 1, (1,), (2,), [(3,)], system2.R)
        record("one_room_deviation_f2", devs[0], 2.0 / 3.0, 1e-9)
    with ctx.stage("cocycle"):
        table = ConvolutionTable(
            AdaptedMeasure.simple(spec2).lazy(Fraction(1, 4)), radius=6,
            keep_powers=True,
        )
        table.run(10)
        a = parse(spec2, "f1:(1)")
        b = parse(spec2, "f2:(1)")
        ab = multiply(a, b)
        n = 10
        lhs = table.transition(ab, ab, n) / table.transition(IDENTITY, ab, n)
        rhs = (
            table.transition(b, multiply(inverse(a), ab), n)
            / table.transition(IDENTITY, multiply(inverse(a), ab), n)
        ) * (
            table.transition(a, ab, n) / table.transition(IDENTITY, ab, n)
        )
        record("cocycle_identity", abs(lhs / rhs - 1.0), 0.0, 1e-12)
    with ctx.stage("emit"):
        ctx.emit(
            "selftest.json",
            json.dumps({"checks": checks, "produced_by": "selftest battery"},
                       indent=2, sort_keys=True),
        )
    with ctx.stage("verdict"):
        failed = [c for c in checks if not c["pass"]]
        for c in checks:
            ctx.tolerances[c["name"]] = c["tolerance"]
        if failed:
            worst = max(failed, key=lambda c: c["delta"] / c["tolerance"])
            raise InconsistencyError(worst["name"], worst["delta"], worst["tolerance"])


_RUNNERS: Dict[str, Callable[[RunContext, ExperimentConfig], None]] = {
    "spectral-report": _run_spectral_report,
    "green-table": _run_green_table,
    "ratio-limit": _run_ratio_limit,
    "ray-scan": _run_ray_scan,
    "ancona": _run_ancona,
    "llt-fit": _run_llt_fit,
    "radical": _run_radical,
    "reproduce-z5z": _run_reproduce_z5z,
    "selftest": _run_selftest,
}


def run(
    config: ExperimentConfig,
    out_dir,
    cache_dir=None,
    jobs: int = 1,
) -> RunManifest:
    """Execute the config's experiment and write artifacts + manifest.

    The manifest is always written, even when a stage fails; `partial`
    then marks the run and the failing stage carries the reason.  The
    original exception is re-raised afterwards so callers can map it to
    an exit status.
    """
    if config.kind is None:
        raise ConfigError(
            ["experiment.kind: no experiment selected (set it in the config "
             "or run a specific subcommand)"]
        )
    runner = _RUNNERS[config.kind]
    ctx = RunContext(config, Path(out_dir), cache_dir, jobs)
    failure: Optional[BaseException] = None
    try:
        runner(ctx, config)
    except BaseException as exc:
        failure = exc
    manifest = RunManifest(
        config_hash=config.config_hash,
        version=ARTIFACT_VERSION,
        kind=config.kind,
        seed=config.seed,
        stages=tuple(ctx.stages),
        tolerances=dict(ctx.tolerances),
        artifacts=tuple(ctx.artifacts),
        partial=failure is not None,
    )
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    tmp = ctx.out_dir / ".manifest.json.tmp"
    tmp.write_text(manifest.to_json())
    os.replace(tmp, ctx.out_dir / "manifest.json")
    if failure is not None:
        raise failure
    return manifest
