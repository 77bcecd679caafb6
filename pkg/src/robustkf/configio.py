"""Benchmark config files: INI sections with bracket-list matrices.

Dynamics entries are written as polynomial strings in the parameter variables
(d1, d2, ...), e.g. "1 + 1*d1" or "0.5*d1^2*d2"; purely numeric entries are
constants.  Q and R are full matrices even when scalar.  A config carries the
system, the filter's initial belief, experiment defaults, and per-case
settings (truth start, filter start, metrics window).
"""

from __future__ import annotations

import ast
import configparser
import io
import re
from dataclasses import dataclass, field

import numpy as np

from .basis import Gaussian, ParameterDistribution, Poly, Uniform
from .errors import ConfigError
from .harness import ExperimentConfig, uniform_grid
from .system import InitialBelief, MatrixPolynomial, UncertainLinearSystem

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<var>d\d+)|(?P<op>[-+*^]))"
)


def parse_poly_string(text: str, dims: int, where: str = "") -> Poly:
    """Parse a polynomial entry like "1 + 1*d1" into a Poly over dims variables."""
    ctx = f" in {where}" if where else ""
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip():
                raise ConfigError(f"bad polynomial {text!r}{ctx}: unexpected {text[pos:].strip()!r}")
            break
        pos = m.end()
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num"))))
        elif m.group("var") is not None:
            idx = int(m.group("var")[1:])
            if not 1 <= idx <= dims:
                raise ConfigError(
                    f"bad polynomial {text!r}{ctx}: variable d{idx} outside 1..{dims}"
                )
            tokens.append(("var", idx - 1))
        else:
            tokens.append(("op", m.group("op")))
    if not tokens:
        raise ConfigError(f"bad polynomial {text!r}{ctx}: empty expression")

    terms: dict = {}
    i = 0
    while i < len(tokens):
        sign = 1.0
        while i < len(tokens) and tokens[i][0] == "op" and tokens[i][1] in "+-":
            if tokens[i][1] == "-":
                sign = -sign
            i += 1
        coef = sign
        expo = [0] * dims
        expect_factor = True
        while i < len(tokens):
            kind, val = tokens[i]
            if kind == "op" and val in "+-" and not expect_factor:
                break
            if kind == "num":
                coef *= val
                i += 1
            elif kind == "var":
                power = 1
                if i + 2 < len(tokens) and tokens[i + 1] == ("op", "^"):
                    if tokens[i + 2][0] != "num" or tokens[i + 2][1] != int(tokens[i + 2][1]):
                        raise ConfigError(f"bad polynomial {text!r}{ctx}: exponent must be an integer")
                    power = int(tokens[i + 2][1])
                    i += 2
                expo[val] += power
                i += 1
            elif kind == "op" and val == "*":
                i += 1
                expect_factor = True
                continue
            else:
                raise ConfigError(f"bad polynomial {text!r}{ctx}: unexpected {val!r}")
            expect_factor = False
        if expect_factor:
            raise ConfigError(f"bad polynomial {text!r}{ctx}: dangling operator")
        key = tuple(expo)
        terms[key] = terms.get(key, 0.0) + coef
    return Poly(dims, terms)


def poly_to_string(poly: Poly) -> str:
    if not poly.terms:
        return "0"
    parts = []
    for alpha, coef in sorted(poly.terms.items(), key=lambda kv: (sum(kv[0]), kv[0])):
        factors = [repr(coef)]
        for j, e in enumerate(alpha):
            if e == 1:
                factors.append(f"d{j + 1}")
            elif e > 1:
                factors.append(f"d{j + 1}^{e}")
        parts.append("*".join(factors))
    return " + ".join(parts)


@dataclass
class CaseSettings:
    truth_x0: np.ndarray
    filter_mean: np.ndarray
    window_start: str | int  # "half", "full", or an index


@dataclass
class BenchmarkConfig:
    system: UncertainLinearSystem
    initial: InitialBelief
    default_case: str
    horizon: int
    delta_mode: str
    delta_grid: np.ndarray | None
    num_seeds: int
    seed_base: int
    filters: tuple
    basis_order: int
    substeps: int | None
    cases: dict = field(default_factory=dict)


class _Sections:
    def __init__(self, parser: configparser.ConfigParser):
        self._parser = parser

    def has(self, section: str) -> bool:
        return self._parser.has_section(section)

    def get(self, section: str, key: str, default=None, required: bool = False) -> str:
        if not self._parser.has_section(section):
            raise ConfigError(f"missing section [{section}]")
        if not self._parser.has_option(section, key):
            if required:
                raise ConfigError(f"[{section}] missing key '{key}'")
            return default
        return self._parser.get(section, key)

    def keys(self, section: str) -> list:
        return list(self._parser.options(section)) if self._parser.has_section(section) else []


def _literal(text: str, where: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"{where}: cannot parse value {text!r} ({exc})") from None


def _numeric_matrix(text: str, where: str) -> np.ndarray:
    val = _literal(text, where)
    try:
        return np.atleast_2d(np.asarray(val, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a numeric matrix, got {text!r}") from None


def _vector(text: str, where: str) -> np.ndarray:
    val = _literal(text, where)
    try:
        return np.asarray(val, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a numeric vector, got {text!r}") from None


def _poly_matrix(text: str, dims: int, where: str) -> MatrixPolynomial:
    val = _literal(text, where)
    if not isinstance(val, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in val):
        raise ConfigError(f"{where}: expected a nested bracket list")
    rows = len(val)
    cols = len(val[0])
    entries = []
    for i, row in enumerate(val):
        if len(row) != cols:
            raise ConfigError(f"{where}: ragged rows ({len(row)} vs {cols})")
        out_row = []
        for j, cell in enumerate(row):
            spot = f"{where}[{i + 1}][{j + 1}]"
            if isinstance(cell, str):
                out_row.append(parse_poly_string(cell, dims, spot))
            elif isinstance(cell, (int, float)):
                out_row.append(Poly.constant(dims, float(cell)))
            else:
                raise ConfigError(f"{spot}: entries must be numbers or polynomial strings")
        entries.append(tuple(out_row))
    return MatrixPolynomial(rows, cols, tuple(entries))


_DIST_RE = re.compile(
    r"^(uniform|gaussian)\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)$"
)


def _parse_marginal(text: str, where: str):
    m = _DIST_RE.match(text.strip())
    if m is None:
        raise ConfigError(
            f"{where}: expected uniform(lo, hi) or gaussian(mean, sd), got {text!r}"
        )
    kind, a, b = m.group(1), float(m.group(2)), float(m.group(3))
    return Uniform(a, b) if kind == "uniform" else Gaussian(a, b)


def parse_config(text: str) -> BenchmarkConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    sec = _Sections(parser)

    dims = int(sec.get("delta", "dims", required=True))
    if dims < 1:
        raise ConfigError("[delta] dims must be >= 1")
    marginals = []
    for j in range(1, dims + 1):
        spec = sec.get("delta", f"d{j}", required=True)
        marginals.append(_parse_marginal(spec, f"[delta] d{j}"))
    dist = ParameterDistribution(tuple(marginals))

    time_mode = sec.get("system", "time_mode", required=True).strip().lower()
    a_mat = _poly_matrix(sec.get("system", "A", required=True), dims, "[system] A")
    b_mat = _poly_matrix(sec.get("system", "B", required=True), dims, "[system] B")
    c_mat = _numeric_matrix(sec.get("system", "C", required=True), "[system] C")
    q_mat = _numeric_matrix(sec.get("system", "Q", required=True), "[system] Q")
    r_mat = _numeric_matrix(sec.get("system", "R", required=True), "[system] R")
    period = sec.get("system", "sample_period")
    system = UncertainLinearSystem(
        A=a_mat,
        B=b_mat,
        C=c_mat,
        Q=q_mat,
        R=r_mat,
        delta_dist=dist,
        time_mode=time_mode,
        sample_period=float(period) if period is not None else None,
    )

    mean = _vector(sec.get("initial", "mean", required=True), "[initial] mean")
    cov = _numeric_matrix(sec.get("initial", "cov", required=True), "[initial] cov")
    initial = InitialBelief(mean, cov)
    if mean.size != system.n:
        raise ConfigError(f"[initial] mean has size {mean.size}, state dim is {system.n}")

    default_case = sec.get("experiment", "case", default="I").strip()
    horizon = int(sec.get("experiment", "horizon", required=True))
    delta_mode = sec.get("experiment", "delta_mode", default="fixed").strip()
    grid_text = sec.get("experiment", "delta_grid")
    grid_points = sec.get("experiment", "delta_grid_points")
    if grid_text is not None:
        grid = np.atleast_2d(np.asarray(_literal(grid_text, "[experiment] delta_grid"), dtype=float))
        if grid.shape[1] != dims:
            raise ConfigError(
                f"[experiment] delta_grid entries have dim {grid.shape[1]}, expected {dims}"
            )
    elif grid_points is not None:
        grid = uniform_grid(dist, int(grid_points))
    else:
        grid = None
    filters_text = sec.get("experiment", "filters", default='["robust", "nominal"]')
    filters = tuple(_literal(filters_text, "[experiment] filters"))
    substeps_text = sec.get("experiment", "substeps", default="auto").strip()
    substeps = None if substeps_text == "auto" else int(substeps_text)

    cases = {}
    for case in ("I", "II"):
        section = f"case.{case}"
        if not sec.has(section):
            continue
        truth_x0 = _vector(sec.get(section, "truth_x0", required=True), f"[{section}] truth_x0")
        fm_text = sec.get(section, "filter_mean")
        filter_mean = _vector(fm_text, f"[{section}] filter_mean") if fm_text else mean
        cases[case] = CaseSettings(
            truth_x0=truth_x0,
            filter_mean=filter_mean,
            window_start=sec.get(section, "window_start", default="full").strip(),
        )
    if not cases:
        raise ConfigError("config defines no [case.I] or [case.II] section")

    return BenchmarkConfig(
        system=system,
        initial=initial,
        default_case=default_case,
        horizon=horizon,
        delta_mode=delta_mode,
        delta_grid=grid,
        num_seeds=int(sec.get("experiment", "num_seeds", default="50")),
        seed_base=int(sec.get("experiment", "seed_base", default="1234")),
        filters=filters,
        basis_order=int(sec.get("experiment", "basis_order", default="4")),
        substeps=substeps,
        cases=cases,
    )


def parse_system(text: str):
    """Spec-level entry point: full parse returning system, belief, and settings."""
    bench = parse_config(text)
    return bench.system, bench.initial, bench


def _resolve_window(setting, horizon: int) -> int:
    if isinstance(setting, int):
        start = setting
    elif setting == "half":
        start = horizon // 2
    elif setting == "full":
        start = 0
    else:
        try:
            start = int(setting)
        except ValueError:
            raise ConfigError(
                f"window_start must be 'half', 'full', or an index, got {setting!r}"
            ) from None
    return start


def build_experiment(
    bench: BenchmarkConfig,
    case: str | None = None,
    num_seeds: int | None = None,
    horizon: int | None = None,
    basis_order: int | None = None,
) -> ExperimentConfig:
    """Materialize one case of a benchmark config, applying CLI overrides."""
    case = case or bench.default_case
    if case not in bench.cases:
        raise ConfigError(f"config has no [case.{case}] section")
    settings = bench.cases[case]
    horizon = horizon or bench.horizon
    return ExperimentConfig(
        case=case,
        truth_x0=settings.truth_x0,
        init_mean=settings.filter_mean,
        init_cov=bench.initial.cov,
        horizon=horizon,
        delta_mode=bench.delta_mode,
        delta_grid=bench.delta_grid,
        num_seeds=num_seeds or bench.num_seeds,
        seed_base=bench.seed_base,
        filters=bench.filters,
        window_start=_resolve_window(settings.window_start, horizon),
        basis_order=basis_order or bench.basis_order,
        substeps=bench.substeps,
    )


def _matrix_text(mat: np.ndarray) -> str:
    return "[" + ", ".join("[" + ", ".join(repr(float(v)) for v in row) + "]" for row in mat) + "]"


def _poly_matrix_text(mp: MatrixPolynomial) -> str:
    rows = []
    for row in mp.entries:
        rows.append("[" + ", ".join(f'"{poly_to_string(p)}"' for p in row) + "]")
    return "[" + ", ".join(rows) + "]"


def serialize_config(bench: BenchmarkConfig) -> str:
    """Write a config back out; parse(serialize(x)) is semantically x."""
    out = io.StringIO()
    sys = bench.system
    out.write("[system]\n")
    out.write(f"time_mode = {sys.time_mode}\n")
    if sys.sample_period is not None:
        out.write(f"sample_period = {sys.sample_period!r}\n")
    out.write(f"A = {_poly_matrix_text(sys.A)}\n")
    out.write(f"B = {_poly_matrix_text(sys.B)}\n")
    out.write(f"C = {_matrix_text(sys.C)}\n")
    out.write(f"Q = {_matrix_text(sys.Q)}\n")
    out.write(f"R = {_matrix_text(sys.R)}\n\n")
    out.write("[delta]\n")
    out.write(f"dims = {sys.delta_dist.dims}\n")
    for j, m in enumerate(sys.delta_dist.marginals, start=1):
        if isinstance(m, Uniform):
            out.write(f"d{j} = uniform({m.lower!r}, {m.upper!r})\n")
        else:
            out.write(f"d{j} = gaussian({m.mean!r}, {m.stddev!r})\n")
    out.write("\n[initial]\n")
    out.write(f"mean = [{', '.join(repr(float(v)) for v in bench.initial.mean)}]\n")
    out.write(f"cov = {_matrix_text(bench.initial.cov)}\n\n")
    out.write("[experiment]\n")
    out.write(f"case = {bench.default_case}\n")
    out.write(f"horizon = {bench.horizon}\n")
    out.write(f"delta_mode = {bench.delta_mode}\n")
    if bench.delta_grid is not None:
        out.write(f"delta_grid = {[list(map(float, row)) for row in bench.delta_grid]}\n")
    out.write(f"num_seeds = {bench.num_seeds}\n")
    out.write(f"seed_base = {bench.seed_base}\n")
    out.write(f"filters = {list(bench.filters)}\n")
    out.write(f"basis_order = {bench.basis_order}\n")
    out.write(f"substeps = {'auto' if bench.substeps is None else bench.substeps}\n")
    for case, settings in bench.cases.items():
        out.write(f"\n[case.{case}]\n")
        out.write(f"truth_x0 = [{', '.join(repr(float(v)) for v in settings.truth_x0)}]\n")
        out.write(f"filter_mean = [{', '.join(repr(float(v)) for v in settings.filter_mean)}]\n")
        out.write(f"window_start = {settings.window_start}\n")
    return out.getvalue()


def describe(bench: BenchmarkConfig) -> list:
    """Human-readable validation summary lines."""
    sys = bench.system
    parts = []
    for m in sys.delta_dist.marginals:
        if isinstance(m, Uniform):
            parts.append(f"U({m.lower:g}, {m.upper:g})")
        else:
            parts.append(f"N({m.mean:g}, {m.stddev:g}^2)")
    lines = [
        f"OK: {sys.time_mode.upper()} system, n={sys.n}, m={sys.m}, p={sys.p}, "
        f"delta ~ {' x '.join(parts)}",
        f"A degree {sys.A.degree}, B degree {sys.B.degree}",
        f"cases: {', '.join(sorted(bench.cases))}; default case {bench.default_case}; "
        f"horizon {bench.horizon}; seeds {bench.num_seeds}",
    ]
    if sys.time_mode == "ct":
        lines.append(
            f"sample period {sys.sample_period}, chaos order {bench.basis_order}"
        )
    return lines
