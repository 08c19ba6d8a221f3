"""Declarative experiment runner: configs in, verified artifacts out.

A config is a flat text document of ``[section]`` blocks holding ``key =
value`` lines, designed to be checked into version control::

    [experiment]
    kind = run
    seed = 42

    [problem]
    family = least-squares
    n = 20
    d = 10

    [delays]
    kind = constant
    tau = 5

    [algorithm]
    name = delayed-gd
    K = 2000
    gamma = 0.18

parse_config validates the whole document and reports every problem at
once; render_config is its inverse, so parse(render(config)) == config for
any valid config.  execute builds the problem / delay / algorithm graph,
runs it, and writes ``trace.csv``, ``bound.csv`` (when a finite bound
applies), and a sorted ``report.kv`` into the output directory.  All
randomness descends from the single [experiment] seed, split per component
(problem, delays, oracle, operator, shared memory, agents), so one number
reproduces every artifact byte for byte.

Sweeps run their derived configs sequentially; each run is a pure function
of its config, so the report assembly is order-stable by run id regardless
of execution order.  Tolerance overrides (slack_rel, slack_abs) are read by
the verify kind; simulated runs pin the tolerances their guarantees are
stated with.
"""

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .algorithms import (
    StepSizePolicy,
    arock,
    async_sgd,
    delayed_gd,
    pg,
    piag,
    piag_gamma_max,
    sgd_gamma,
    totally_async,
)
from .certificates import (
    ABS_FLOOR,
    REL_SLACK,
    BoundedDelayRecursion,
    CoupledRecursion,
    RateCertificate,
    Verdict,
    bounded_delay_rate,
    growing_delay_eta,
    read_trace_csv,
    verify_trace,
    write_bound_csv,
    write_trace_csv,
)
from .delays import AgentSchedule, DelaySchedule, SharedMemoryModel
from .operators import make_averaged_affine, make_block_max_affine
from .problems import StochasticOracle, l1, make_least_squares, make_logistic, sq_l2

OUT_ENV = "ASYNC_ITER_LAB_OUT"
KINDS = ("rate", "run", "verify", "sweep")
ALGORITHMS = ("delayed-gd", "pg", "piag", "async-sgd", "arock", "totally-async")
REPORT_NAME = "report.kv"

_REQUIRED = object()


class ConfigError(ValueError):
    """Raised with the complete list of parse and semantic problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# Field parsers
# ---------------------------------------------------------------------------


def _int_value(minimum=None, maximum=None):
    def parse(text):
        try:
            value = int(text.strip())
        except ValueError:
            raise ValueError(f"{text.strip()!r} is not an integer") from None
        if minimum is not None and value < minimum:
            raise ValueError(f"must be an integer >= {minimum}")
        if maximum is not None and value > maximum:
            raise ValueError(f"must be an integer <= {maximum}")
        return value

    return parse


def _float_value(minimum=None, maximum=None, exclusive_min=False, exclusive_max=False):
    def parse(text):
        try:
            value = float(text.strip())
        except ValueError:
            raise ValueError(f"{text.strip()!r} is not a number") from None
        if not math.isfinite(value):
            raise ValueError("must be finite")
        if minimum is not None:
            if value < minimum or (exclusive_min and value == minimum):
                op = ">" if exclusive_min else ">="
                raise ValueError(f"must be {op} {minimum}")
        if maximum is not None:
            if value > maximum or (exclusive_max and value == maximum):
                op = "<" if exclusive_max else "<="
                raise ValueError(f"must be {op} {maximum}")
        return value

    return parse


def _choice_value(*options):
    def parse(text):
        value = text.strip()
        if value not in options:
            listed = ", ".join(options)
            raise ValueError(f"{value!r} is not one of: {listed}")
        return value

    return parse


def _str_value(text):
    value = text.strip()
    if not value:
        raise ValueError("must be non-empty")
    return value


def _u64_value(text):
    value = _int_value(minimum=0)(text)
    if value >= 2**64:
        raise ValueError("must fit in 64 bits")
    return value


def _seeds_value(text):
    """Replicate indices: a half-open range "lo:hi" or a comma list."""
    text = text.strip()
    if ":" in text:
        lo_text, _, hi_text = text.partition(":")
        lo = _int_value(minimum=0)(lo_text)
        hi = _int_value(minimum=0)(hi_text)
        if hi <= lo:
            raise ValueError("range needs hi > lo")
        return tuple(range(lo, hi))
    parts = [p for p in (piece.strip() for piece in text.split(",")) if p]
    if not parts:
        raise ValueError("must list at least one seed")
    return tuple(_int_value(minimum=0)(p) for p in parts)


def _render_seeds(seeds):
    if len(seeds) > 1 and seeds == tuple(range(seeds[0], seeds[0] + len(seeds))):
        return f"{seeds[0]}:{seeds[0] + len(seeds)}"
    return ", ".join(str(s) for s in seeds)


def _format_kv_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, tuple):
        return _render_seeds(value)
    return str(value)


# ---------------------------------------------------------------------------
# Config model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Field:
    name: str
    parse: object
    default: object = _REQUIRED


@dataclass(frozen=True)
class RateSpec:
    """Bounded window (tau) or growing delays (alpha, beta); alpha decides."""

    q: float
    p: float
    tau: int = 0
    alpha: float | None = None
    beta: float | None = None

    @property
    def mode(self) -> str:
        return "growing" if self.alpha is not None else "bounded"


@dataclass(frozen=True)
class VerifySpec:
    trace: str
    form: str = "max-window"
    window: str = "declared"
    q: float = 0.0
    p: float = 0.0
    tau: int = 0
    flavor: str = "unit-q"
    r: float | None = None
    e: float = 0.0
    q_lower: float | None = None


@dataclass(frozen=True)
class ProblemSpec:
    family: str
    n: int
    d: int
    rank: int | None = None
    noise: float = 0.1


@dataclass(frozen=True)
class DelaySpec:
    kind: str
    tau: int = 0
    tau_max: int = 0
    alpha: float = 0.0
    beta: float = 0.0
    workers: int = 2
    ratio: float = 1.0


@dataclass(frozen=True)
class AlgorithmSpec:
    """One dataclass for every algorithm; the per-name key tables decide
    which fields a config may set, so inactive fields stay at defaults."""

    name: str
    K: int
    gamma: float | None = None
    v_def: str = "sq-dist"
    reg: str = "none"
    lam: float = 0.0
    certificate: str | None = None
    gamma_mode: str | None = None
    policy: str = "delay-adaptive"
    tau_th: int | None = None
    sigma: float = 0.0
    seeds: tuple = (0,)
    objective: str = "auto"
    d: int | None = None
    c: float | None = None
    tau: int = 0
    h: float = 1.0
    inclusion: str = "full-window"
    agents: int | None = None
    block_size: int = 1
    update: str = "all-k"
    gap: int = 0
    staleness: str = "bounded"
    depth: int = 0
    alpha: float = 0.0
    beta: float = 0.0


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple


@dataclass(frozen=True)
class RunConfig:
    kind: str
    seed: int = 0
    out: str | None = None
    slack_rel: float = REL_SLACK
    slack_abs: float = ABS_FLOOR
    rate: RateSpec | None = None
    verify: VerifySpec | None = None
    problem: ProblemSpec | None = None
    delays: DelaySpec | None = None
    algorithm: AlgorithmSpec | None = None
    sweep: SweepSpec | None = None


@dataclass(frozen=True)
class Report:
    """Execution summary plus the exact report.kv content and manifest."""

    kind: str
    passed: bool
    lines: tuple
    verdict_lines: tuple
    files: tuple
    out_dir: str

    def render(self) -> str:
        return "".join(f"{key} = {value}\n" for key, value in self.lines)


# ---------------------------------------------------------------------------
# Section schemas
# ---------------------------------------------------------------------------

_EXPERIMENT_FIELDS = (
    _Field("kind", _choice_value(*KINDS)),
    _Field("seed", _u64_value, default=0),
    _Field("out", _str_value, default=None),
    _Field("slack_rel", _float_value(minimum=0.0, exclusive_min=True), default=REL_SLACK),
    _Field("slack_abs", _float_value(minimum=0.0), default=ABS_FLOOR),
)

_RATE_FIELDS = (
    _Field("q", _float_value(minimum=0.0)),
    _Field("p", _float_value(minimum=0.0)),
    _Field("tau", _int_value(minimum=0), default=0),
    _Field("alpha", _float_value(0.0, 1.0, exclusive_min=True, exclusive_max=True), default=None),
    _Field("beta", _float_value(minimum=0.0), default=None),
)

_VERIFY_FIELDS = (
    _Field("trace", _str_value),
    _Field("form", _choice_value("max-window", "coupled"), default="max-window"),
    _Field("window", _choice_value("declared", "trace"), default="declared"),
    _Field("q", _float_value(minimum=0.0)),
    _Field("p", _float_value(minimum=0.0)),
    _Field("tau", _int_value(minimum=0), default=0),
    _Field("flavor", _choice_value("unit-q", "contractive"), default="unit-q"),
    _Field("r", _float_value(), default=None),
    _Field("e", _float_value(minimum=0.0), default=0.0),
    _Field("q_lower", _float_value(0.0, 1.0, exclusive_min=True, exclusive_max=True), default=None),
)

_PROBLEM_FIELDS = (
    _Field("family", _choice_value("least-squares", "logistic")),
    _Field("n", _int_value(minimum=1)),
    _Field("d", _int_value(minimum=1)),
    _Field("rank", _int_value(minimum=1), default=None),
    _Field("noise", _float_value(minimum=0.0), default=0.1),
)

_DELAY_KIND = _Field(
    "kind", _choice_value("constant", "uniform-random", "two-speed", "linear-growth", "sqrt-floor")
)
_DELAY_FIELDS = {
    "constant": (_Field("tau", _int_value(minimum=0), default=0),),
    "uniform-random": (_Field("tau_max", _int_value(minimum=0), default=0),),
    "two-speed": (
        _Field("workers", _int_value(minimum=1), default=2),
        _Field("ratio", _float_value(minimum=1.0), default=1.0),
    ),
    "linear-growth": (
        _Field("alpha", _float_value(0.0, 1.0, exclusive_max=True), default=0.0),
        _Field("beta", _float_value(minimum=0.0), default=0.0),
    ),
    "sqrt-floor": (),
}

_ALGO_NAME = _Field("name", _choice_value(*ALGORITHMS))
_K_FIELD = _Field("K", _int_value(minimum=1))
_GAMMA_REQUIRED = _Field("gamma", _float_value(minimum=0.0, exclusive_min=True))
_GAMMA_OPTIONAL = _Field("gamma", _float_value(minimum=0.0, exclusive_min=True), default=None)
_REG_FIELDS = (
    _Field("reg", _choice_value("none", "l1", "sq-l2"), default="none"),
    _Field("lam", _float_value(minimum=0.0), default=0.0),
)
_SEEDS_FIELD = _Field("seeds", _seeds_value, default=(0,))

_ALGO_FIELDS = {
    "delayed-gd": (
        _K_FIELD,
        _GAMMA_REQUIRED,
        _Field("v_def", _choice_value("sq-dist", "fn-gap"), default="sq-dist"),
    ),
    "pg": (_K_FIELD, _GAMMA_REQUIRED) + _REG_FIELDS,
    "piag": (
        _K_FIELD,
        _GAMMA_OPTIONAL,
        _Field("certificate", _choice_value("sublinear", "linear"), default="sublinear"),
    )
    + _REG_FIELDS,
    "async-sgd": (
        _K_FIELD,
        _GAMMA_OPTIONAL,
        _Field("gamma_mode", _choice_value("convex-max", "sconvex-max"), default=None),
        _Field("policy", _choice_value("constant", "delay-adaptive"), default="delay-adaptive"),
        _Field("tau_th", _int_value(minimum=0), default=None),
        _Field("sigma", _float_value(minimum=0.0), default=0.0),
        _SEEDS_FIELD,
        _Field("objective", _choice_value("auto", "convex", "strongly-convex"), default="auto"),
    ),
    "arock": (
        _K_FIELD,
        _Field("d", _int_value(minimum=1)),
        _Field("c", _float_value(0.0, 1.0, exclusive_max=True)),
        _Field("tau", _int_value(minimum=0), default=0),
        _Field("h", _float_value(0.0, 1.0, exclusive_min=True), default=1.0),
        _Field("inclusion", _choice_value("full-window", "random-subset"), default="full-window"),
        _SEEDS_FIELD,
    ),
    "totally-async": (
        _K_FIELD,
        _Field("agents", _int_value(minimum=1)),
        _Field("c", _float_value(0.0, 1.0, exclusive_min=True, exclusive_max=True)),
        _Field("block_size", _int_value(minimum=1), default=1),
        _Field("update", _choice_value("all-k", "periodic"), default="all-k"),
        _Field("gap", _int_value(minimum=0), default=0),
        _Field("staleness", _choice_value("bounded", "linear-growth"), default="bounded"),
        _Field("depth", _int_value(minimum=0), default=0),
        _Field("alpha", _float_value(0.0, 1.0, exclusive_min=True, exclusive_max=True), default=0.0),
        _Field("beta", _float_value(minimum=0.0), default=0.0),
        _Field("certificate", _choice_value("auto", "asymptotic-only"), default="auto"),
    ),
}

_SWEEP_FIELDS = (_Field("param", _str_value), _Field("values", _str_value))

# Sections each run algorithm needs beyond [algorithm] itself.
_RUN_SECTIONS = {
    "delayed-gd": ("problem", "delays"),
    "pg": ("problem",),
    "piag": ("problem",),
    "async-sgd": ("problem", "delays"),
    "arock": (),
    "totally-async": (),
}

_SWEEP_LOCKED_KEYS = ("kind", "name", "family", "form")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_section(section, raw, fields, errors):
    known = {field.name for field in fields}
    before = len(errors)
    for key in raw:
        if key not in known:
            errors.append(f"semantic-error: [{section}] unknown key {key!r}")
    values = {}
    for field in fields:
        if field.name in raw:
            try:
                values[field.name] = field.parse(raw[field.name])
            except ValueError as exc:
                errors.append(f"semantic-error: [{section}] {field.name}: {exc}")
        elif field.default is _REQUIRED:
            errors.append(f"semantic-error: [{section}] missing required key {field.name!r}")
        else:
            values[field.name] = field.default
    return values, len(errors) == before


def _union_fields(table):
    """Every field any table entry accepts, demoted to optional; used to keep
    collecting value errors when the discriminator itself is invalid."""
    seen = {}
    for fields in table.values():
        for field in fields:
            if field.name not in seen:
                seen[field.name] = dataclasses.replace(field, default=None)
    return tuple(seen.values())


def _parse_keyed_section(section, raw, discr, table, errors):
    text = raw.get(discr.name)
    if text is None:
        errors.append(f"semantic-error: [{section}] missing required key {discr.name!r}")
    else:
        try:
            label = discr.parse(text)
        except ValueError as exc:
            errors.append(f"semantic-error: [{section}] {discr.name}: {exc}")
        else:
            values, ok = _parse_section(section, raw, (discr,) + table[label], errors)
            return label, values, ok
    rest = {key: value for key, value in raw.items() if key != discr.name}
    _parse_section(section, rest, _union_fields(table), errors)
    return None, {}, False


def _parse_rate(raw, errors):
    values, ok = _parse_section("rate", raw, _RATE_FIELDS, errors)
    if not ok:
        return None
    if "alpha" in raw and "tau" in raw:
        errors.append("semantic-error: [rate] tau and alpha are mutually exclusive")
    if "beta" in raw and "alpha" not in raw:
        errors.append("semantic-error: [rate] beta needs alpha")
    if values["alpha"] is not None and values["beta"] is None:
        values["beta"] = 0.0
    if values["q"] + values["p"] >= 1.0:
        errors.append("semantic-error: [rate] q + p must be less than 1")
    return RateSpec(**values)


def _verify_recursion(spec: VerifySpec):
    if spec.form == "max-window":
        return BoundedDelayRecursion(q=spec.q, p=spec.p, tau=spec.tau)
    return CoupledRecursion(
        flavor=spec.flavor,
        tau=spec.tau,
        q=spec.q,
        p=spec.p,
        r=spec.r,
        e=spec.e,
        q_lower=spec.q_lower,
    )


def _parse_verify(raw, errors):
    values, ok = _parse_section("verify", raw, _VERIFY_FIELDS, errors)
    if not ok:
        return None
    if values["form"] == "max-window":
        for key in ("flavor", "r", "e", "q_lower"):
            if key in raw:
                errors.append(f"semantic-error: [verify] key {key!r} needs form = coupled")
    elif "r" not in raw:
        errors.append("semantic-error: [verify] missing required key 'r' for form = coupled")
    spec = VerifySpec(**values)
    if spec.form == "coupled" and spec.r is None:
        return spec
    try:
        _verify_recursion(spec)
    except ValueError as exc:
        errors.append(f"semantic-error: [verify] {exc}")
    return spec


def _parse_problem(raw, errors):
    values, ok = _parse_section("problem", raw, _PROBLEM_FIELDS, errors)
    if not ok:
        return None
    if values["family"] == "logistic":
        for key in ("rank", "noise"):
            if key in raw:
                errors.append(f"semantic-error: [problem] key {key!r} needs family = least-squares")
    elif values["rank"] is not None and values["rank"] > min(values["n"], values["d"]):
        errors.append("semantic-error: [problem] rank must lie in [1, min(n, d)]")
    return ProblemSpec(**values)


def _parse_delays(raw, errors):
    kind, values, ok = _parse_keyed_section("delays", raw, _DELAY_KIND, _DELAY_FIELDS, errors)
    if kind is None or not ok:
        return None
    return DelaySpec(**values)


def _parse_algorithm(raw, errors):
    name, values, ok = _parse_keyed_section("algorithm", raw, _ALGO_NAME, _ALGO_FIELDS, errors)
    if name is None or not ok:
        return None
    if name in ("pg", "piag"):
        if values["reg"] == "none" and "lam" in raw:
            errors.append("semantic-error: [algorithm] lam needs reg = l1 or sq-l2")
        if values["reg"] != "none" and "lam" not in raw:
            errors.append(f"semantic-error: [algorithm] reg = {values['reg']} needs lam")
    if name == "async-sgd":
        if ("gamma" in raw) == ("gamma_mode" in raw):
            errors.append("semantic-error: [algorithm] set exactly one of gamma and gamma_mode")
        if values["policy"] == "delay-adaptive" and "tau_th" not in raw:
            errors.append("semantic-error: [algorithm] policy = delay-adaptive needs tau_th")
        if values["policy"] == "constant":
            if "tau_th" in raw:
                errors.append("semantic-error: [algorithm] tau_th needs policy = delay-adaptive")
            if "gamma_mode" in raw:
                errors.append("semantic-error: [algorithm] gamma_mode needs policy = delay-adaptive")
    if name == "totally-async":
        if "gap" in raw and values["update"] != "periodic":
            errors.append("semantic-error: [algorithm] gap needs update = periodic")
        if "depth" in raw and values["staleness"] != "bounded":
            errors.append("semantic-error: [algorithm] depth needs staleness = bounded")
        if values["staleness"] == "linear-growth":
            if "alpha" not in raw:
                errors.append("semantic-error: [algorithm] staleness = linear-growth needs alpha")
            if values["update"] != "all-k":
                errors.append("semantic-error: [algorithm] linear-growth staleness needs update = all-k")
        elif "alpha" in raw or "beta" in raw:
            errors.append("semantic-error: [algorithm] alpha and beta need staleness = linear-growth")
    return AlgorithmSpec(**values)


def _sweep_target_fields(config, section, errors):
    if section == "rate":
        if config.rate is None:
            errors.append("semantic-error: [sweep] section [rate] is not part of this config")
            return None
        return _RATE_FIELDS
    if section == "problem":
        if config.problem is None:
            errors.append("semantic-error: [sweep] section [problem] is not part of this config")
            return None
        return _PROBLEM_FIELDS
    if section == "delays":
        if config.delays is None:
            errors.append("semantic-error: [sweep] section [delays] is not part of this config")
            return None
        return (_DELAY_KIND,) + _DELAY_FIELDS[config.delays.kind]
    if section == "algorithm":
        if config.algorithm is None:
            errors.append("semantic-error: [sweep] section [algorithm] is not part of this config")
            return None
        return (_ALGO_NAME,) + _ALGO_FIELDS[config.algorithm.name]
    errors.append(f"semantic-error: [sweep] unknown section {section!r} in param")
    return None


def _parse_sweep(raw, base, errors):
    values, ok = _parse_section("sweep", raw, _SWEEP_FIELDS, errors)
    if not ok:
        return None
    param = values["param"]
    if param.count(".") != 1:
        errors.append("semantic-error: [sweep] param must look like section.key")
        return None
    section, key = param.split(".")
    fields = _sweep_target_fields(base, section, errors)
    if fields is None:
        return None
    if key in _SWEEP_LOCKED_KEYS:
        errors.append(f"semantic-error: [sweep] cannot sweep the {key!r} key")
        return None
    by_name = {field.name: field for field in fields}
    if key not in by_name:
        errors.append(f"semantic-error: [sweep] {key!r} is not a parameter of [{section}]")
        return None
    texts = [t for t in (piece.strip() for piece in values["values"].split(",")) if t]
    if not texts:
        errors.append("semantic-error: [sweep] values must be non-empty")
        return None
    parsed = []
    before = len(errors)
    for text in texts:
        try:
            parsed.append(by_name[key].parse(text))
        except ValueError as exc:
            errors.append(f"semantic-error: [sweep] value {text!r}: {exc}")
    if len(errors) != before:
        return None
    return SweepSpec(param=param, values=tuple(parsed))


def _apply_sweep_value(config: RunConfig, param: str, value) -> RunConfig:
    section, key = param.split(".", 1)
    spec = getattr(config, section)
    replaced = dataclasses.replace(spec, **{key: value})
    return dataclasses.replace(config, **{section: replaced})


def parse_config(text: str) -> RunConfig:
    """Validate a config document, reporting every error, not just the first.

    Raises ConfigError whose .errors list each problem as "parse-error: ..."
    (malformed document) or "semantic-error: ..." (unknown reference,
    out-of-range value, missing key).
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        message = str(exc).replace("\n", " ")
        raise ConfigError([f"parse-error: {message}"]) from None

    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    errors: list[str] = []
    exp_raw = sections.pop("experiment", None)
    if exp_raw is None:
        raise ConfigError(["semantic-error: missing [experiment] section"])
    exp, _ = _parse_section("experiment", exp_raw, _EXPERIMENT_FIELDS, errors)
    kind = exp.get("kind")

    had = {
        name: name in sections
        for name in ("rate", "verify", "problem", "delays", "algorithm", "sweep")
    }
    rate = _parse_rate(sections.pop("rate"), errors) if "rate" in sections else None
    verify = _parse_verify(sections.pop("verify"), errors) if "verify" in sections else None
    problem = _parse_problem(sections.pop("problem"), errors) if "problem" in sections else None
    delays = _parse_delays(sections.pop("delays"), errors) if "delays" in sections else None
    algorithm = (
        _parse_algorithm(sections.pop("algorithm"), errors) if "algorithm" in sections else None
    )
    sweep_raw = sections.pop("sweep", None)
    for name in sections:
        errors.append(f"semantic-error: unknown section [{name}]")

    def _require(name):
        if not had[name]:
            errors.append(f"semantic-error: kind {kind} needs a [{name}] section")

    def _forbid(*names):
        for name in names:
            if had[name]:
                errors.append(f"semantic-error: section [{name}] is not used by kind {kind}")

    def _check_run_sections():
        _require("algorithm")
        if algorithm is not None:
            needed = _RUN_SECTIONS[algorithm.name]
            for name in ("problem", "delays"):
                if name in needed and not had[name]:
                    errors.append(
                        f"semantic-error: algorithm {algorithm.name} needs a [{name}] section"
                    )
                if name not in needed and had[name]:
                    errors.append(
                        f"semantic-error: section [{name}] is not used by algorithm {algorithm.name}"
                    )

    if kind == "rate":
        _require("rate")
        _forbid("verify", "problem", "delays", "algorithm", "sweep")
    elif kind == "verify":
        _require("verify")
        _forbid("rate", "problem", "delays", "algorithm", "sweep")
    elif kind == "run":
        _check_run_sections()
        _forbid("rate", "verify", "sweep")
    elif kind == "sweep":
        _require("sweep")
        _forbid("verify")
        if had["rate"] and had["algorithm"]:
            errors.append("semantic-error: sweep needs a [rate] or [algorithm] base, not both")
        elif had["rate"]:
            _forbid("problem", "delays")
        else:
            _check_run_sections()

    config = RunConfig(
        kind=kind or "",
        seed=exp.get("seed", 0),
        out=exp.get("out"),
        slack_rel=exp.get("slack_rel", REL_SLACK),
        slack_abs=exp.get("slack_abs", ABS_FLOOR),
        rate=rate,
        verify=verify,
        problem=problem,
        delays=delays,
        algorithm=algorithm,
        sweep=None,
    )

    sweep = None
    if kind == "sweep" and sweep_raw is not None and not errors:
        sweep = _parse_sweep(sweep_raw, config, errors)
        if sweep is not None and not errors:
            inner = dataclasses.replace(
                config, kind="rate" if rate is not None else "run"
            )
            for value in sweep.values:
                derived = _apply_sweep_value(inner, sweep.param, value)
                try:
                    parse_config(render_config(derived))
                except ConfigError as exc:
                    shown = _format_kv_value(value)
                    for message in exc.errors:
                        detail = message.removeprefix("semantic-error: ")
                        errors.append(f"semantic-error: [sweep] value {shown}: {detail}")

    if errors:
        raise ConfigError(errors)
    return dataclasses.replace(config, sweep=sweep)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _spec_lines(spec, fields):
    lines = []
    for field in fields:
        value = getattr(spec, field.name)
        if value is None:
            continue
        if field.default is _REQUIRED or value != field.default:
            lines.append((field.name, value))
    return lines


def render_config(config: RunConfig) -> str:
    """The canonical text form; parse_config(render_config(c)) == c."""
    blocks = []
    exp = [("kind", config.kind), ("seed", config.seed)]
    if config.out is not None:
        exp.append(("out", config.out))
    if config.slack_rel != REL_SLACK:
        exp.append(("slack_rel", config.slack_rel))
    if config.slack_abs != ABS_FLOOR:
        exp.append(("slack_abs", config.slack_abs))
    blocks.append(("experiment", exp))
    if config.rate is not None:
        blocks.append(("rate", _spec_lines(config.rate, _RATE_FIELDS)))
    if config.verify is not None:
        blocks.append(("verify", _spec_lines(config.verify, _VERIFY_FIELDS)))
    if config.problem is not None:
        blocks.append(("problem", _spec_lines(config.problem, _PROBLEM_FIELDS)))
    if config.delays is not None:
        fields = (_DELAY_KIND,) + _DELAY_FIELDS[config.delays.kind]
        blocks.append(("delays", _spec_lines(config.delays, fields)))
    if config.algorithm is not None:
        fields = (_ALGO_NAME,) + _ALGO_FIELDS[config.algorithm.name]
        blocks.append(("algorithm", _spec_lines(config.algorithm, fields)))
    if config.sweep is not None:
        values = ", ".join(_format_kv_value(v) for v in config.sweep.values)
        blocks.append(("sweep", [("param", config.sweep.param), ("values", values)]))
    parts = []
    for name, lines in blocks:
        body = "".join(f"{key} = {_format_kv_value(value)}\n" for key, value in lines)
        parts.append(f"[{name}]\n{body}")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _build_problem(spec: ProblemSpec, seed: int):
    if spec.family == "least-squares":
        return make_least_squares(spec.n, spec.d, seed, rank=spec.rank, noise=spec.noise)
    return make_logistic(spec.n, spec.d, seed)


def _build_schedule(spec: DelaySpec, seed: int) -> DelaySchedule:
    return DelaySchedule(
        kind=spec.kind,
        tau=spec.tau,
        tau_max=spec.tau_max,
        alpha=spec.alpha,
        beta=spec.beta,
        workers=spec.workers,
        ratio=spec.ratio,
        seed=seed,
    )


def _build_reg(spec: AlgorithmSpec):
    if spec.reg == "l1":
        return l1(spec.lam)
    if spec.reg == "sq-l2":
        return sq_l2(spec.lam)
    return None


def _run_algorithm(config: RunConfig):
    spec = config.algorithm
    root = config.seed
    name = spec.name
    problem = None
    if name in ("delayed-gd", "pg", "piag", "async-sgd"):
        problem = _build_problem(config.problem, rng.split(root, "problem"))
    if name == "delayed-gd":
        schedule = _build_schedule(config.delays, rng.split(root, "delays"))
        return delayed_gd(problem, spec.gamma, schedule, spec.K, v_def=spec.v_def)
    if name == "pg":
        return pg(problem, spec.gamma, spec.K, reg=_build_reg(spec))
    if name == "piag":
        gamma = spec.gamma
        if gamma is None:
            gamma = piag_gamma_max(problem.L, problem.n - 1)
        return piag(
            problem, gamma, spec.K, reg=_build_reg(spec), certificate=spec.certificate
        )
    if name == "async-sgd":
        schedule = _build_schedule(config.delays, rng.split(root, "delays"))
        oracle = StochasticOracle(
            base=problem, sigma=spec.sigma, seed=rng.split(root, "oracle")
        )
        if spec.policy == "delay-adaptive":
            gamma = spec.gamma
            if gamma is None:
                gamma = sgd_gamma(spec.gamma_mode, problem.L, spec.tau_th, sigma=spec.sigma)
            policy = StepSizePolicy(kind="delay-adaptive", gamma=gamma, tau_th=spec.tau_th)
        else:
            policy = StepSizePolicy(kind="constant", gamma=spec.gamma)
        return async_sgd(
            oracle, schedule, policy, spec.K, seeds=spec.seeds, objective_mode=spec.objective
        )
    if name == "arock":
        op = make_averaged_affine(spec.d, spec.c, rng.split(root, "operator"))
        shm = SharedMemoryModel(
            blocks=spec.d,
            tau=spec.tau,
            inclusion=spec.inclusion,
            seed=rng.split(root, "shared-memory"),
        )
        return arock(op, shm, spec.h, spec.K, seeds=spec.seeds)
    op = make_block_max_affine(
        spec.agents, spec.c, rng.split(root, "operator"), block_size=spec.block_size
    )
    sched = AgentSchedule(
        agents=spec.agents,
        update=spec.update,
        gap=spec.gap,
        staleness=spec.staleness,
        depth=spec.depth,
        alpha=spec.alpha,
        beta=spec.beta,
        seed=rng.split(root, "agents"),
    )
    return totally_async(op, sched, spec.K, certificate=spec.certificate)


def _result_lines(result, K: int):
    body = {"K": str(K)}
    for key, value in result.metadata.items():
        if value is None:
            continue
        if isinstance(value, Verdict):
            body[key] = value.summary()
        elif isinstance(value, RateCertificate):
            body[f"{key}_kind"] = value.kind
            body[f"{key}_admissible"] = "true" if value.admissible else "false"
            for pkey, pvalue in value.params.items():
                body[f"{key}_{pkey}"] = repr(float(pvalue))
        elif isinstance(value, (bool, np.bool_)):
            body[key] = "true" if value else "false"
        elif isinstance(value, (int, np.integer)):
            body[key] = str(int(value))
        elif isinstance(value, (float, np.floating)):
            body[key] = repr(float(value))
        elif isinstance(value, str):
            body[key] = value
        elif isinstance(value, tuple) and all(
            isinstance(item, (int, np.integer)) for item in value
        ):
            body[key] = _render_seeds(tuple(int(item) for item in value))
        # arrays and other payloads live in the RunResult, not the report
    checks = []
    recursion_verdict = result.metadata.get("recursion_verdict")
    if recursion_verdict is not None:
        checks.append(recursion_verdict)
    if result.verdict is not None:
        body["bound_verdict"] = result.verdict.summary()
        checks.append(result.verdict)
    failing = [check for check in checks if not check.passed]
    if failing:
        worst = failing[0]
        body["verdict"] = worst.summary()
        body["first_violation"] = str(worst.first_violation)
        body["lhs"] = repr(float(worst.lhs))
        body["rhs"] = repr(float(worst.rhs))
        if worst.check:
            body["failed_check"] = worst.check
    else:
        body["verdict"] = "PASS"
    return body


def _execute_rate(config: RunConfig):
    spec = config.rate
    body = {"q": repr(spec.q), "p": repr(spec.p)}
    if spec.mode == "bounded":
        cert = bounded_delay_rate(BoundedDelayRecursion(q=spec.q, p=spec.p, tau=spec.tau))
        rho = cert.rho
        body["tau"] = str(spec.tau)
        body["certificate"] = "geometric"
        body["rho"] = repr(rho)
        verdicts = [f"rho = {rho!r}"]
    else:
        eta = growing_delay_eta(spec.q, spec.p, spec.alpha)
        body["alpha"] = repr(spec.alpha)
        body["beta"] = repr(spec.beta)
        body["certificate"] = "polynomial"
        body["eta"] = repr(eta)
        verdicts = [f"eta = {eta!r}"]
    return body, verdicts, True, []


def _execute_verify(config: RunConfig):
    spec = config.verify
    trace = read_trace_csv(spec.trace)
    rec = _verify_recursion(spec)
    verdict = verify_trace(
        trace, rec, window=spec.window, slack_rel=config.slack_rel, slack_abs=config.slack_abs
    )
    body = {
        "trace": spec.trace,
        "rows": str(trace.length),
        "form": spec.form,
        "window": spec.window,
        "q": repr(spec.q),
        "p": repr(spec.p),
        "tau": str(spec.tau),
        "verdict": verdict.summary(),
        "tight": "true" if verdict.tight else "false",
    }
    if spec.form == "coupled":
        body["flavor"] = spec.flavor
        body["r"] = repr(spec.r)
        body["e"] = repr(spec.e)
        if spec.q_lower is not None:
            body["q_lower"] = repr(spec.q_lower)
    if not verdict.passed:
        body["first_violation"] = str(verdict.first_violation)
        body["lhs"] = repr(float(verdict.lhs))
        body["rhs"] = repr(float(verdict.rhs))
        if verdict.check:
            body["failed_check"] = verdict.check
    return body, [verdict.summary()], verdict.passed, []


def _execute_run(config: RunConfig, out: Path):
    result = _run_algorithm(config)
    files = ["trace.csv"]
    write_trace_csv(result.trace, out / "trace.csv")
    if result.bound is not None:
        write_bound_csv(result.bound, out / "bound.csv")
        files.append("bound.csv")
    body = _result_lines(result, config.algorithm.K)
    verdict = body["verdict"]
    return body, [verdict], verdict == "PASS", files


def _execute_sweep(config: RunConfig, out: Path):
    spec = config.sweep
    inner_kind = "rate" if config.rate is not None else "run"
    base = dataclasses.replace(config, kind=inner_kind, sweep=None)
    width = max(2, len(str(len(spec.values) - 1)))
    body = {
        "sweep_param": spec.param,
        "sweep_values": ", ".join(_format_kv_value(v) for v in spec.values),
        "runs": str(len(spec.values)),
    }
    verdicts = []
    files = []
    passed = True
    for index, value in enumerate(spec.values):
        run_id = f"run-{index:0{width}d}"
        derived = _apply_sweep_value(base, spec.param, value)
        if inner_kind == "rate":
            sub_body, sub_lines, sub_passed, sub_files = _execute_rate(derived)
        else:
            sub_out = out / run_id
            sub_out.mkdir(parents=True, exist_ok=True)
            sub_body, sub_lines, sub_passed, sub_files = _execute_run(derived, sub_out)
            sub_files = [f"{run_id}/{name}" for name in sub_files]
        for key, text in sub_body.items():
            body[f"{run_id}.{key}"] = text
        verdicts.extend(f"{run_id} {line}" for line in sub_lines)
        files.extend(sub_files)
        passed = passed and sub_passed
    return body, verdicts, passed, files


def execute(config: RunConfig, out_dir=None) -> Report:
    """Run a validated config and write its artifacts.

    The output directory is out_dir, else the config's out key, else the
    ASYNC_ITER_LAB_OUT environment variable, else the working directory.
    Identical configs produce byte-identical artifacts.
    """
    out = Path(out_dir or config.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    if config.kind == "rate":
        body, verdicts, passed, files = _execute_rate(config)
    elif config.kind == "verify":
        body, verdicts, passed, files = _execute_verify(config)
    elif config.kind == "run":
        body, verdicts, passed, files = _execute_run(config, out)
    elif config.kind == "sweep":
        body, verdicts, passed, files = _execute_sweep(config, out)
    else:
        raise ValueError(f"unknown experiment kind {config.kind!r}")
    body["kind"] = config.kind
    body["seed"] = str(config.seed)
    if files:
        body["files"] = " ".join(sorted(files))
    lines = tuple(sorted(body.items()))
    report = Report(
        kind=config.kind,
        passed=passed,
        lines=lines,
        verdict_lines=tuple(verdicts),
        files=tuple(sorted(files)),
        out_dir=str(out),
    )
    (out / REPORT_NAME).write_text(report.render(), encoding="utf-8")
    return report
