"""Experiment engine: sequences, predictor comparison, regret and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .bayes import DEFAULT_NODES, conjugate_predict, make_grid, parse_prior, quad_posterior_predict
from .family import FiniteExpFamily
from .fit import MLFit, SufficientStatSummary, is_interior, ml_fit, summarize
from .geometry import ShiftCheck, posterior_shift_check
from .predictor import (
    PredictiveDistribution,
    expansion_predict,
    ml_predict,
    mixture_predict,
    snml_expansion,
    snml_predict,
    wsnml_expansion,
    wsnml_predict,
)

__all__ = [
    "FLOOR",
    "SequenceSpec",
    "parse_sequence_spec",
    "generate",
    "IneccsiResult",
    "ineccsi_check",
    "Predictor",
    "resolve_predictor",
    "split_predictor_list",
    "parse_t_grid",
    "SlopeFit",
    "InsufficientPointsError",
    "fit_slope",
    "ConvergenceSeries",
    "run_comparison",
    "RegretRecord",
    "step_losses",
    "regret",
    "regret_curve",
    "ShiftSeries",
    "shift_series",
    "emit_report",
]

log = logging.getLogger(__name__)

FLOOR = 1e-15


# --------------------------------------------------------------------------
# sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceSpec:
    """Where a sequence comes from: ``iid``, ``periodic`` or ``file``."""

    source: str
    theta: tuple[float, ...] = ()
    seed: int | None = None
    pattern: tuple[int, ...] = ()
    path: str | None = None

    def __post_init__(self):
        if self.source not in ("iid", "periodic", "file"):
            raise ValueError(f"unknown sequence source {self.source!r}")
        if self.source == "periodic" and not self.pattern:
            raise ValueError("periodic pattern must be non-empty")
        if self.source == "iid" and (self.seed is None or not self.theta):
            raise ValueError("iid sequences need theta and seed")
        if self.source == "file" and not self.path:
            raise ValueError("file sequences need a path")


def parse_sequence_spec(text: str) -> SequenceSpec:
    """Parse ``iid:theta=v,...:seed=n``, ``periodic:<symbols>`` or ``file:<path>``."""
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "periodic":
        try:
            pattern = tuple(int(tok) for tok in rest.replace(",", " ").split())
        except ValueError:
            raise ValueError(f"bad periodic pattern in {text!r}") from None
        return SequenceSpec("periodic", pattern=pattern)
    if kind == "file":
        return SequenceSpec("file", path=rest)
    if kind == "iid":
        fields = {}
        for part in rest.split(":"):
            key, eq, val = part.partition("=")
            if not eq:
                raise ValueError(f"expected key=value in {text!r}, got {part!r}")
            fields[key.strip()] = val.strip()
        try:
            theta = tuple(float(v) for v in fields["theta"].split(","))
            seed = int(fields["seed"])
        except (KeyError, ValueError):
            raise ValueError(f"iid spec needs theta=<v,...> and seed=<n>: {text!r}") from None
        return SequenceSpec("iid", theta=theta, seed=seed)
    raise ValueError(f"unknown sequence specification {text!r}")


def _read_symbol_file(path: str, family: FiniteExpFamily) -> np.ndarray:
    symbols = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            for tok in line.split():
                try:
                    sym = int(tok)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: not an integer symbol: {tok!r}") from None
                if not 0 <= sym < family.alphabet_size:
                    raise ValueError(f"{path}:{lineno}: symbol {sym} outside alphabet 0..{family.alphabet_size - 1}")
                symbols.append(sym)
    return np.array(symbols, dtype=np.int64)


def generate(spec: SequenceSpec, family: FiniteExpFamily, length: int | None = None) -> np.ndarray:
    """Materialise ``length`` symbols (a whole file when ``length`` is None)."""
    if spec.source == "iid":
        if length is None:
            raise ValueError("iid sequences need an explicit length")
        return family.sample(np.array(spec.theta), spec.seed, length)
    if spec.source == "periodic":
        if length is None:
            raise ValueError("periodic sequences need an explicit length")
        pattern = np.array(spec.pattern, dtype=np.int64)
        bad = [s for s in pattern if not 0 <= s < family.alphabet_size]
        if bad:
            raise ValueError(f"periodic pattern symbols {bad} outside alphabet 0..{family.alphabet_size - 1}")
        return np.resize(pattern, length)
    seq = _read_symbol_file(spec.path, family)
    if length is None:
        return seq
    if len(seq) < length:
        raise ValueError(f"{spec.path}: has {len(seq)} symbols, {length} requested")
    return seq[:length]


class IneccsiResult(NamedTuple):
    ok: bool
    first_violation: int | None


def ineccsi_check(family: FiniteExpFamily, sequence, t0: int = 1, box=None, margin: float = 0.0) -> IneccsiResult:
    """Check that the running ML mean stays in a compact box for every ``t >= t0``.

    ``box`` is ``(lower, upper)`` in mean coordinates; a violation is any
    ``t`` where the empirical mean leaves ``[lower + margin, upper - margin]``.
    Without a box, the requirement is only that the ML estimate exists
    (empirical mean strictly inside the hull).
    """
    if t0 < 1:
        raise ValueError("t0 must be at least 1")
    seq = np.asarray(sequence, dtype=np.int64)
    if box is None:
        summary = summarize(family, seq[: t0 - 1])
        for t in range(t0, len(seq) + 1):
            summary = summary.append(family, seq[t - 1])
            if not is_interior(family, summary):
                return IneccsiResult(False, t)
        return IneccsiResult(True, None)
    lower = np.atleast_1d(np.asarray(box[0], dtype=float)) + margin
    upper = np.atleast_1d(np.asarray(box[1], dtype=float)) - margin
    running = np.cumsum(family.features[seq], axis=0) / np.arange(1, len(seq) + 1)[:, None]
    bad = np.any((running < lower) | (running > upper), axis=1)
    bad[: t0 - 1] = False
    idx = np.flatnonzero(bad)
    return IneccsiResult(True, None) if idx.size == 0 else IneccsiResult(False, int(idx[0]) + 1)


# --------------------------------------------------------------------------
# predictors by name
# --------------------------------------------------------------------------

_PREDICTOR_NAMES = ("ml", "snml", "wsnml", "mixture", "expansion", "snml-expansion", "wsnml-expansion",
                    "bayes-exact", "bayes-quad")
_NEEDS_PRIOR = {"wsnml", "mixture", "expansion", "wsnml-expansion", "bayes-exact", "bayes-quad"}


@dataclass(frozen=True)
class Predictor:
    """A named predictor bound to a family (and prior, where it takes one)."""

    spec: str
    func: Callable[[SufficientStatSummary, MLFit | None], PredictiveDistribution] = field(repr=False)
    min_t: int = 1
    needs_interior: bool = False

    def __call__(self, summary, fit=None) -> PredictiveDistribution:
        return self.func(summary, fit)


def split_predictor_list(text: str) -> list[str]:
    """Split ``P1,P2`` while keeping commas inside prior arguments (``beta:1,1``)."""
    out: list[str] = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if out and tok.partition(":")[0] not in _PREDICTOR_NAMES and tok != "hindsight":
            out[-1] += "," + tok
        else:
            out.append(tok)
    return out


def resolve_predictor(spec: str, family: FiniteExpFamily, prior: str | None = None,
                      n_nodes: int = DEFAULT_NODES) -> Predictor:
    """Build a predictor from ``ml``, ``snml``, ``wsnml:<prior>``, ``mixture:<prior>``,
    ``expansion:<prior>``, ``snml-expansion``, ``wsnml-expansion:<prior>``,
    ``bayes-exact:<prior>`` or ``bayes-quad:<prior>``.

    ``prior`` is the default for names given without one. The weighted
    predictors use ``w = beta**2``.
    """
    name, _, arg = spec.strip().partition(":")
    if name not in _PREDICTOR_NAMES:
        raise ValueError(f"unknown predictor {spec!r}")
    pr = None
    if name in _NEEDS_PRIOR:
        prior_text = arg or prior
        if not prior_text:
            raise ValueError(f"predictor {name!r} needs a prior (e.g. {name}:jeffreys)")
        pr = parse_prior(prior_text, family)
        spec = f"{name}:{prior_text}"
    elif arg:
        raise ValueError(f"predictor {name!r} takes no argument")

    if name == "ml":
        return Predictor(spec, lambda s, f: ml_predict(family, s, f))
    if name == "snml":
        return Predictor(spec, lambda s, f: snml_predict(family, s, f))
    if name == "snml-expansion":
        return Predictor(spec, lambda s, f: snml_expansion(family, s, f), needs_interior=True)
    beta = pr.beta
    if name == "wsnml":
        w = beta.squared()
        return Predictor(spec, lambda s, f: wsnml_predict(family, s, w, f))
    if name == "mixture":
        return Predictor(spec, lambda s, f: mixture_predict(family, s, beta, f))
    if name == "expansion":
        return Predictor(spec, lambda s, f: expansion_predict(family, s, beta, f), needs_interior=True)
    if name == "wsnml-expansion":
        w = beta.squared()
        return Predictor(spec, lambda s, f: wsnml_expansion(family, s, w, f), needs_interior=True)
    if name == "bayes-exact":
        if pr.conjugate_alpha is None:
            raise ValueError(f"no conjugate closed form for {spec!r} on {family.name}")
        return Predictor(spec, lambda s, f: conjugate_predict(family, s, pr), min_t=0)
    grid = make_grid(family, n_nodes)
    return Predictor(spec, lambda s, f: quad_posterior_predict(family, s, pr, grid), min_t=0)


def parse_t_grid(text: str) -> list[int]:
    """``dyadic:a..b`` for ``2^a..2^b`` or an explicit comma-separated list."""
    if text.startswith("dyadic:"):
        lo, _, hi = text[len("dyadic:"):].partition("..")
        return [2**k for k in range(int(lo), int(hi) + 1)]
    grid = [int(v) for v in text.split(",") if v.strip()]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("t grid must be strictly increasing")
    return grid


# --------------------------------------------------------------------------
# convergence series
# --------------------------------------------------------------------------


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


class InsufficientPointsError(ValueError):
    pass


def fit_slope(points) -> SlopeFit:
    """Least squares of ``log(discrepancy)`` on ``log(t)``.

    Points with discrepancy at or below ``FLOOR`` are dropped; at least four
    must remain.
    """
    pts = [(float(t), float(d)) for t, d in points if d > FLOOR and np.isfinite(d)]
    if len(pts) < 4:
        raise InsufficientPointsError(f"need at least 4 points above {FLOOR:g}, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    design = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), float(r2))


@dataclass
class ConvergenceSeries:
    """``(t, discrepancy)`` pairs with the fitted log-log slope (None if unfittable)."""

    points: list[tuple[int, float]]
    skipped_t: list[int] = field(default_factory=list)
    slope: float | None = None
    intercept: float | None = None
    r2: float | None = None

    @classmethod
    def from_points(cls, points, skipped_t=()) -> "ConvergenceSeries":
        points = [(int(t), float(d)) for t, d in points]
        ts = [t for t, _ in points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("t must be strictly increasing")
        try:
            fit = fit_slope(points)
        except InsufficientPointsError:
            return cls(points, list(skipped_t))
        return cls(points, list(skipped_t), fit.slope, fit.intercept, fit.r2)

    def to_json_obj(self) -> dict:
        return {"points": [[t, d] for t, d in self.points], "slope": self.slope,
                "intercept": self.intercept, "r2": self.r2, "skipped_t": list(self.skipped_t)}

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "discrepancy"])
        for t, d in self.points:
            writer.writerow([t, repr(d)])
        buf.write(f"# slope={self.slope!r} intercept={self.intercept!r} r2={self.r2!r}\n")
        return buf.getvalue()


def _prefix_summaries(family, sequence, t_grid):
    seq = np.asarray(sequence, dtype=np.int64)
    if t_grid[-1] > len(seq):
        raise ValueError(f"sequence has {len(seq)} symbols, t grid reaches {t_grid[-1]}")
    counts = np.zeros(family.alphabet_size, dtype=np.int64)
    prev = 0
    for t in t_grid:
        counts += np.bincount(seq[prev:t], minlength=family.alphabet_size)
        prev = t
        yield t, SufficientStatSummary.from_counts(family, counts.copy())


def run_comparison(family: FiniteExpFamily, sequence, predictors: Sequence[str], prior: str | None = None,
                   t_grid: Sequence[int] = tuple(2**k for k in range(4, 13)),
                   n_nodes: int = DEFAULT_NODES) -> dict[str, ConvergenceSeries]:
    """Max-abs discrepancy between every pair of predictors at each ``t``.

    Returns one :class:`ConvergenceSeries` per pair, keyed ``"P1 vs P2"``.
    Timesteps with a boundary ML estimate are skipped (and listed) for
    expansion-based predictors.
    """
    preds = [resolve_predictor(p, family, prior, n_nodes) for p in predictors]
    if len(preds) < 2:
        raise ValueError("run_comparison needs at least two predictors")
    t_grid = list(t_grid)
    pairs = list(combinations(range(len(preds)), 2))
    points = {pair: [] for pair in pairs}
    skipped = {pair: [] for pair in pairs}
    for t, summary in _prefix_summaries(family, sequence, t_grid):
        fit = ml_fit(family, summary) if t >= 1 else None
        dists = []
        for p in preds:
            if t < p.min_t or (p.needs_interior and not fit.interior):
                log.info("t=%d: skipping %s (boundary ML)", t, p.spec)
                dists.append(None)
            else:
                dists.append(p(summary, fit))
        for i, j in pairs:
            if dists[i] is None or dists[j] is None:
                skipped[(i, j)].append(t)
            else:
                points[(i, j)].append((t, float(np.max(np.abs(dists[i].probs - dists[j].probs)))))
    return {f"{preds[i].spec} vs {preds[j].spec}": ConvergenceSeries.from_points(points[(i, j)], skipped[(i, j)])
            for i, j in pairs}


# --------------------------------------------------------------------------
# regret
# --------------------------------------------------------------------------


@dataclass
class RegretRecord:
    """Cumulative log loss of a predictor against the best parameter in hindsight.

    ``step_loss[i]`` is ``-log p(x_{i+1} | x_{1:i})``; predictors that need
    ``t >= 1`` predict uniformly at ``t = 0`` (``warmup`` counts such steps).
    """

    predictor: str
    T: int
    step_loss: np.ndarray
    hindsight_step_loss: np.ndarray
    hindsight_theta: np.ndarray
    warmup: int

    @property
    def cumulative_loss(self) -> float:
        return float(np.sum(self.step_loss))

    @property
    def hindsight_loss(self) -> float:
        return float(np.sum(self.hindsight_step_loss))

    @property
    def regret(self) -> float:
        return self.cumulative_loss - self.hindsight_loss

    def regret_from_trace(self) -> float:
        return float(np.sum(self.step_loss - self.hindsight_step_loss))

    def to_json_obj(self) -> dict:
        return {"predictor": self.predictor, "T": self.T, "cumulative_loss": self.cumulative_loss,
                "hindsight_loss": self.hindsight_loss, "regret": self.regret,
                "hindsight_theta": self.hindsight_theta, "warmup": self.warmup,
                "step_loss": self.step_loss, "hindsight_step_loss": self.hindsight_step_loss}

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "loss", "hindsight_loss", "cumulative_regret"])
        cum = np.cumsum(self.step_loss - self.hindsight_step_loss)
        for i, (a, b, c) in enumerate(zip(self.step_loss, self.hindsight_step_loss, cum), start=1):
            writer.writerow([i, repr(float(a)), repr(float(b)), repr(float(c))])
        buf.write(f"# predictor={self.predictor} T={self.T} regret={self.regret!r}\n")
        return buf.getvalue()


def step_losses(family: FiniteExpFamily, sequence, predictor: Predictor) -> tuple[np.ndarray, int]:
    """Per-step log losses of ``predictor`` along ``sequence`` and the number of warm-up steps."""
    seq = np.asarray(sequence, dtype=np.int64)
    k = family.alphabet_size
    losses = np.empty(len(seq))
    summary = SufficientStatSummary.from_counts(family, np.zeros(k, dtype=np.int64))
    fit = None
    warmup = 0
    with np.errstate(divide="ignore"):
        for i, x in enumerate(seq):
            t = summary.t
            if t < predictor.min_t:
                losses[i] = np.log(k)
                warmup += 1
            else:
                if t >= 1:
                    warm = fit.theta if fit is not None and fit.interior else None
                    fit = ml_fit(family, summary, theta0=warm)
                losses[i] = predictor(summary, fit).log_loss(x)
            summary = summary.append(family, x)
    return losses, warmup


def _hindsight(family, seq):
    fit = ml_fit(family, summarize(family, seq))
    with np.errstate(divide="ignore"):
        return -np.log(fit.probs[seq]), fit.theta


def regret(family: FiniteExpFamily, sequence, predictor: Predictor | str, prior: str | None = None,
           T: int | None = None, losses: tuple[np.ndarray, int] | None = None) -> RegretRecord:
    """Regret of ``predictor`` on the first ``T`` symbols.

    ``predictor="hindsight"`` replays the hindsight ML distribution itself,
    whose regret is zero by construction.
    """
    seq = np.asarray(sequence, dtype=np.int64)
    T = len(seq) if T is None else T
    seq = seq[:T]
    hind_loss, hind_theta = _hindsight(family, seq)
    if isinstance(predictor, str) and predictor == "hindsight":
        return RegretRecord("hindsight", T, hind_loss.copy(), hind_loss, hind_theta, 0)
    if isinstance(predictor, str):
        predictor = resolve_predictor(predictor, family, prior)
    if losses is None:
        losses = step_losses(family, seq, predictor)
    loss, warmup = losses
    return RegretRecord(predictor.spec, T, np.asarray(loss[:T]), hind_loss, hind_theta, min(warmup, T))


def regret_curve(family: FiniteExpFamily, sequence, predictor: Predictor | str, Ts: Sequence[int],
                 prior: str | None = None) -> list[RegretRecord]:
    """Regret at several horizons from a single predictive pass."""
    if isinstance(predictor, str):
        predictor = resolve_predictor(predictor, family, prior)
    seq = np.asarray(sequence, dtype=np.int64)[: max(Ts)]
    losses = step_losses(family, seq, predictor)
    return [regret(family, seq, predictor, T=T, losses=losses) for T in Ts]


# --------------------------------------------------------------------------
# posterior shift series
# --------------------------------------------------------------------------


@dataclass
class ShiftSeries:
    checks: list[ShiftCheck]
    series: ConvergenceSeries

    def to_json_obj(self) -> dict:
        obj = self.series.to_json_obj()
        obj["checks"] = [
            {"t": c.t, "theta_ml": c.theta_ml, "measured": c.measured, "predicted": c.predicted,
             "coordinate_mean_shift": c.coordinate_mean_shift, "residual": c.residual}
            for c in self.checks
        ]
        return obj

    def csv_text(self) -> str:
        return self.series.csv_text()


def shift_series(family: FiniteExpFamily, sequence, t_grid: Sequence[int], prior: str = "jeffreys",
                 n_nodes: int = DEFAULT_NODES) -> ShiftSeries:
    """Posterior-center residual ``|measured - V/t|`` along ``t_grid``."""
    grid = make_grid(family, n_nodes)
    pr = parse_prior(prior, family)
    checks, points, skipped = [], [], []
    for t, summary in _prefix_summaries(family, sequence, list(t_grid)):
        if not ml_fit(family, summary).interior:
            skipped.append(t)
            continue
        chk = posterior_shift_check(family, summary, grid, pr)
        checks.append(chk)
        points.append((t, chk.residual))
    return ShiftSeries(checks, ConvergenceSeries.from_points(points, skipped))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _empty_series_obj():
    return ConvergenceSeries([]).to_json_obj()


def emit_report(results, fmt: str = "json", path: str | Path | None = None) -> str:
    """Serialise results as CSV or JSON; writes to ``path`` when given and returns the text.

    ``results`` may be None/empty, a :class:`ConvergenceSeries`, a dict of
    named series, a :class:`RegretRecord` or a :class:`ShiftSeries`. Floats are
    written with ``repr`` so values round-trip exactly.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    if fmt == "json":
        if results is None or (isinstance(results, dict) and not results):
            obj = _empty_series_obj()
        elif isinstance(results, dict):
            obj = {name: s.to_json_obj() for name, s in results.items()}
        else:
            obj = results.to_json_obj()
        text = json.dumps(_jsonable(obj), indent=2) + "\n"
    else:
        if results is None or (isinstance(results, dict) and not results):
            text = "t,discrepancy\n"
        elif isinstance(results, dict):
            text = "".join(f"# series={name}\n" + s.csv_text() for name, s in results.items())
        else:
            text = results.csv_text()
    if path is not None:
        path = Path(path)
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return text
