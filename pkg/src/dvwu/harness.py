"""Continuous-deletion experiments: configuration, execution, reporting.

A run repeats the same protocol R times with per-repetition seeds
base_seed + repetition: draw (or load) data, split, standardize with training
statistics, bound row norms, train, then delete m samples per round for T
rounds with the configured method, certifying and scoring against the fixed
test split after every round.  Repetitions are independent and the per-round
records aggregate into mean/std tables.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg

from . import __version__
from .data_io import (SplitResult, SynthConfig, gen_synthetic,
                      load_dataset_from_manifest, max_row_norm, norm_bound,
                      split, standardize)
from .dataset import Dataset
from .errors import (BudgetExhaustedError, InvalidArgumentError, UnlearnError)
from .losses import LossKind
from .models import Metrics, evaluate, train
from .unlearn import (CertBudget, InfluenceUnlearner, NewtonUnlearner,
                      PERTURB_NONE, PERTURB_OBJECTIVE, PERTURB_OUTPUT,
                      RoundOutcome, dvwu_newton_step, epsilon2_prime,
                      gauss_constant, gradient_residual, hessian_downdate,
                      objective_perturb_setup, output_perturb, threshold1,
                      unit_weights, unlearn_gradient_ascent, unlearn_influence,
                      weighted_gradient)
from .valuation import (DYNAMIC, KNN_SHAPLEY, LEAVE_ONE_OUT, STATIC,
                        ValuationMethod, ValueProfile, compute_values,
                        load_values_csv)

log = logging.getLogger(__name__)

METHOD_RETRAIN = "retrain"
METHOD_NEWTON = "newton"
METHOD_INFLUENCE = "influence"
METHOD_GA = "gradient-ascent"
METHOD_WGA = "weighted-ga"
METHOD_DVWU_K = "dvwu-k"
METHOD_DVWU_L = "dvwu-l"
METHOD_DVWU_DK = "dvwu-dk"
METHOD_DVWU_DL = "dvwu-dl"

METHODS = (METHOD_RETRAIN, METHOD_NEWTON, METHOD_INFLUENCE, METHOD_GA,
           METHOD_WGA, METHOD_DVWU_K, METHOD_DVWU_L, METHOD_DVWU_DK, METHOD_DVWU_DL)

_METHOD_ALIASES = {m.replace("-", ""): m for m in METHODS}
_METHOD_ALIASES.update({"gradienta": METHOD_GA, "ga": METHOD_GA, "wga": METHOD_WGA})

# static knn / loo and their per-round-recomputing variants
_DVWU_VALUATION = {
    METHOD_DVWU_K: (KNN_SHAPLEY, STATIC),
    METHOD_DVWU_L: (LEAVE_ONE_OUT, STATIC),
    METHOD_DVWU_DK: (KNN_SHAPLEY, DYNAMIC),
    METHOD_DVWU_DL: (LEAVE_ONE_OUT, DYNAMIC),
}

DELETE_UNIFORM = "uniform"
DELETE_HIGH_VALUE = "high-value-first"
DELETE_LOW_VALUE = "low-value-first"
_DELETION_STRATEGIES = (DELETE_UNIFORM, DELETE_HIGH_VALUE, DELETE_LOW_VALUE)


def normalize_method(name: str) -> str:
    key = name.strip().lower().replace("-", "").replace("_", "")
    if key not in _METHOD_ALIASES:
        raise InvalidArgumentError(
            f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    return _METHOD_ALIASES[key]


@dataclass
class ExperimentConfig:
    """Everything a continuous-deletion run needs; serializable to/from text."""

    method: str = METHOD_DVWU_K
    perturbation: str = PERTURB_NONE
    loss: str = "logistic"
    gamma: float = 2.0
    lam: float = 1e-3
    epsilon: float = 1.0
    delta: float = 1e-4
    rounds: int = 15
    deletions_per_round: int | list[int] = 1000
    repetitions: int = 1
    base_seed: int = 0
    check_every: int = 1
    alpha: float = 0.5
    k: int = 5
    zero_tol: float = 1e-9
    ga_eta: float = 0.01
    ga_steps: int = 5
    ga_valuation: str = KNN_SHAPLEY
    ga_valuation_mode: str = STATIC
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    fresh_data_per_rep: bool = True
    score_published: bool = False
    cost_fp: float = 1.0
    cost_fn: float = 1.0
    train_tol: float = 1e-8
    deletion_strategy: str = DELETE_UNIFORM
    synth: SynthConfig | None = None
    data_manifest: str | None = None
    values_path: str | None = None

    def __post_init__(self):
        self.method = normalize_method(self.method)
        if self.perturbation not in (PERTURB_NONE, PERTURB_OUTPUT, PERTURB_OBJECTIVE):
            raise InvalidArgumentError(f"unknown perturbation {self.perturbation!r}")
        if self.deletion_strategy not in _DELETION_STRATEGIES:
            raise InvalidArgumentError(
                f"unknown deletion strategy {self.deletion_strategy!r}")
        if self.rounds < 1:
            raise InvalidArgumentError(f"rounds must be >= 1, got {self.rounds}")
        if self.repetitions < 1:
            raise InvalidArgumentError(f"repetitions must be >= 1, got {self.repetitions}")
        if isinstance(self.deletions_per_round, (list, tuple)):
            sched = [int(m) for m in self.deletions_per_round]
            if len(sched) != self.rounds:
                raise InvalidArgumentError(
                    f"deletion schedule has {len(sched)} entries for {self.rounds} rounds")
            if any(m < 1 for m in sched):
                raise InvalidArgumentError("every deletion size must be >= 1")
            self.deletions_per_round = sched
        elif self.deletions_per_round < 1:
            raise InvalidArgumentError(
                f"deletions_per_round must be >= 1, got {self.deletions_per_round}")
        if (self.synth is None) == (self.data_manifest is None):
            raise InvalidArgumentError(
                "config needs exactly one data source: synth parameters or a manifest")

    def schedule(self) -> list[int]:
        if isinstance(self.deletions_per_round, list):
            return list(self.deletions_per_round)
        return [int(self.deletions_per_round)] * self.rounds

    def loss_kind(self) -> LossKind:
        return LossKind.from_name(self.loss, gamma=self.gamma)

    def valuation_method(self) -> ValuationMethod | None:
        if self.method in _DVWU_VALUATION:
            kind, mode = _DVWU_VALUATION[self.method]
            return ValuationMethod(kind=kind, mode=mode, k=self.k)
        if self.method == METHOD_WGA:
            return ValuationMethod(kind=self.ga_valuation, mode=self.ga_valuation_mode,
                                   k=self.k)
        return None

    def to_dict(self) -> dict:
        out = asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        synth = raw.pop("synth", None)
        if synth is not None and not isinstance(synth, SynthConfig):
            synth = SynthConfig(**synth)
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        unknown = set(raw) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(synth=synth, **raw)


@dataclass(frozen=True)
class RoundRecord:
    """One row of the raw results table."""

    repetition: int
    t: int
    residual: float
    threshold: float
    certified: bool
    retrained: bool
    accuracy: float
    precision: float
    recall: float
    cost: float
    elapsed_ms: float
    phases: dict[str, float] = field(default_factory=dict, compare=False)


@dataclass
class RepetitionResult:
    repetition: int
    seed: int
    records: list[RoundRecord] = field(default_factory=list)
    trajectory: list[np.ndarray] = field(default_factory=list)
    initial_metrics: Metrics | None = None
    error: str | None = None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    repetitions: list[RepetitionResult]
    constants: dict[str, float | list[float]]

    @property
    def records(self) -> list[RoundRecord]:
        return [rec for rep in self.repetitions for rec in rep.records]

    def aggregate(self) -> list[dict]:
        return aggregate_rounds(self.records)


# ---------------------------------------------------------------------------
# execution


def run_continuous_deletion(cfg: ExperimentConfig) -> ExperimentReport:
    """Run every repetition; a failing repetition is recorded, not fatal."""
    reps: list[RepetitionResult] = []
    for rep in range(cfg.repetitions):
        seed = cfg.base_seed + rep
        result = RepetitionResult(repetition=rep, seed=seed)
        try:
            _run_repetition(cfg, rep, result)
        except UnlearnError as exc:
            result.error = f"{type(exc).__name__}: {exc}"
            log.warning("repetition %d failed: %s", rep, result.error)
        reps.append(result)
    return ExperimentReport(config=cfg, repetitions=reps, constants=_constants(cfg))


def _constants(cfg: ExperimentConfig) -> dict:
    loss = cfg.loss_kind()
    out: dict = {"C": loss.C, "beta": loss.beta, "gauss_constant": gauss_constant(cfg.delta)}
    try:
        budget = _make_budget(cfg, n=_planned_train_size(cfg))
    except (InvalidArgumentError, BudgetExhaustedError):
        return out
    sched = cfg.schedule()
    running = np.cumsum(sched)
    out["thresholds"] = [
        threshold1(budget, t + 1, m_round=sched[t], deleted_total=int(running[t]))
        for t in range(cfg.rounds)]
    out["epsilon2_prime"] = epsilon2_prime(budget, deleted_total=int(running[-1]))
    return out


def _planned_train_size(cfg: ExperimentConfig) -> int:
    if cfg.synth is None:
        # unknown until the manifest is loaded; use a placeholder large enough
        raise InvalidArgumentError("train size unknown before loading")
    n_trainval = round(cfg.train_fraction * cfg.synth.n)
    n_val = round(_effective_val_fraction(cfg) * n_trainval)
    return n_trainval - n_val


def _effective_val_fraction(cfg: ExperimentConfig) -> float:
    vm = cfg.valuation_method()
    needs_validation = vm is not None and vm.kind == LEAVE_ONE_OUT
    return cfg.val_fraction if needs_validation else 0.0


def _make_budget(cfg: ExperimentConfig, n: int) -> CertBudget:
    sched = cfg.schedule()
    total = sum(sched)
    nominal = sched[0] if len(set(sched)) == 1 else math.ceil(total / cfg.rounds)
    return CertBudget(epsilon=cfg.epsilon, delta=cfg.delta, C=cfg.loss_kind().C,
                      beta=cfg.loss_kind().beta, m=nominal, n=n, T=cfg.rounds,
                      lam=cfg.lam)


def _prepare_data(cfg: ExperimentConfig, data_seed: int) -> SplitResult:
    if cfg.synth is not None:
        base = gen_synthetic(replace(cfg.synth, seed=data_seed))
    else:
        base = load_dataset_from_manifest(cfg.data_manifest)
    parts = split(base, cfg.train_fraction, seed=data_seed,
                  val_fraction=_effective_val_fraction(cfg))
    train_std, transform = standardize(parts.train)
    scale = max(1.0, max_row_norm(train_std))
    bound = norm_bound(train_std, scale)
    val = (norm_bound(transform.apply(parts.validation), scale)
           if parts.validation is not None else None)
    test = norm_bound(transform.apply(parts.test), scale)
    return SplitResult(train=bound, validation=val, test=test)


def _run_repetition(cfg: ExperimentConfig, rep: int, result: RepetitionResult) -> None:
    seed = result.seed
    if cfg.synth is not None:
        data_seed = cfg.synth.seed + (rep if cfg.fresh_data_per_rep else 0)
    else:
        # the file is fixed; only the split can be redrawn per repetition
        data_seed = seed if cfg.fresh_data_per_rep else cfg.base_seed
    delete_rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))

    parts = _prepare_data(cfg, data_seed)
    train_set, test_set = parts.train, parts.test
    loss = cfg.loss_kind()
    sched = cfg.schedule()
    budget = _make_budget(cfg, n=train_set.n)

    b = None
    if cfg.perturbation == PERTURB_OBJECTIVE:
        b = objective_perturb_setup(budget, train_set.d, noise_rng)
    model = train(train_set, cfg.lam, loss, b=b, tol=cfg.train_tol)
    result.initial_metrics = evaluate(model, test_set, cfg.cost_fp, cfg.cost_fn)
    result.trajectory.append(np.array(model.w))

    vm = cfg.valuation_method()
    utility_set = parts.validation if (vm is not None and vm.kind == LEAVE_ONE_OUT) else test_set
    profile: ValueProfile | None = None
    if cfg.values_path is not None:
        profile = load_values_csv(cfg.values_path, alpha=cfg.alpha, zero_tol=cfg.zero_tol)
    elif vm is not None:
        q = compute_values(vm, train_set, utility_set, cfg.lam, loss, tol=cfg.train_tol)
        profile = ValueProfile.from_initial_values(q, alpha=cfg.alpha, zero_tol=cfg.zero_tol)

    method = cfg.method
    engine = influence = None
    if method in (METHOD_NEWTON, METHOD_DVWU_K, METHOD_DVWU_L, METHOD_DVWU_DK, METHOD_DVWU_DL):
        engine = NewtonUnlearner(model, budget, perturbation=cfg.perturbation,
                                 noise_rng=noise_rng, train_tol=cfg.train_tol,
                                 check_every=cfg.check_every, planned_total=sum(sched))
    elif method == METHOD_INFLUENCE:
        influence = InfluenceUnlearner(model, train_set.n)

    remaining = train_set
    w_current = np.array(model.w)
    deleted_total = 0
    for t in range(1, cfg.rounds + 1):
        m_t = sched[t - 1]
        if remaining.n - m_t < 1:
            raise BudgetExhaustedError(
                f"round {t} would delete {m_t} of {remaining.n} remaining samples")
        deleted_ids = _sample_deletion(cfg, delete_rng, remaining, profile, m_t)
        deleted = remaining.select(deleted_ids)
        next_remaining = remaining.drop(deleted_ids)
        deleted_total += m_t

        weights = profile.weights_for(deleted_ids) if (profile is not None and
                                                       method != METHOD_NEWTON) else None
        if engine is not None:
            outcome = engine.delete(deleted, next_remaining, weights)
        elif method == METHOD_RETRAIN:
            outcome = _retrain_round(cfg, t, next_remaining, loss)
        elif method == METHOD_INFLUENCE:
            outcome = _influence_round(cfg, t, influence, budget, deleted, next_remaining,
                                       loss, noise_rng, deleted_total)
        else:  # gradient-ascent family
            outcome = _ascent_round(cfg, t, w_current, deleted, next_remaining,
                                    weights, loss, b)
        w_current = outcome.w_internal

        score_w = outcome.w_published if (cfg.score_published and
                                          outcome.w_published is not None) else outcome.w_internal
        metrics = evaluate(score_w, test_set, cfg.cost_fp, cfg.cost_fn)
        result.records.append(RoundRecord(
            repetition=rep, t=t, residual=outcome.residual_norm,
            threshold=outcome.threshold, certified=outcome.certified,
            retrained=outcome.retrained, accuracy=metrics.accuracy,
            precision=metrics.precision, recall=metrics.recall,
            cost=metrics.misclassification_cost, elapsed_ms=outcome.elapsed_ms,
            phases=dict(outcome.elapsed)))
        result.trajectory.append(np.array(outcome.w_internal))

        if profile is not None:
            profile = _update_profile(cfg, vm, profile, outcome, next_remaining,
                                      utility_set, loss)
        remaining = next_remaining


def _sample_deletion(cfg: ExperimentConfig, rng: np.random.Generator,
                     remaining: Dataset, profile: ValueProfile | None,
                     m_t: int) -> np.ndarray:
    if cfg.deletion_strategy == DELETE_UNIFORM:
        return rng.choice(remaining.ids, size=m_t, replace=False)
    if profile is None:
        raise InvalidArgumentError(
            f"deletion strategy {cfg.deletion_strategy} needs a value profile")
    # ties broken by ascending id for determinism
    ranked = sorted(remaining.ids.tolist(), key=lambda i: (profile.q[int(i)], int(i)))
    chosen = ranked[-m_t:] if cfg.deletion_strategy == DELETE_HIGH_VALUE else ranked[:m_t]
    return np.array(sorted(chosen), dtype=np.int64)


def _retrain_round(cfg: ExperimentConfig, t: int, remaining: Dataset,
                   loss: LossKind) -> RoundOutcome:
    tic = time.perf_counter()
    model = train(remaining, cfg.lam, loss, tol=cfg.train_tol)
    elapsed = {"retrain": time.perf_counter() - tic}
    residual = gradient_residual(model.w, remaining, cfg.lam, loss)
    return RoundOutcome(t=t, w_internal=model.w, w_published=None,
                        residual_norm=residual, threshold=float("nan"),
                        certified=True, retrained=False, elapsed=elapsed)


def _influence_round(cfg: ExperimentConfig, t: int, engine: InfluenceUnlearner,
                     budget: CertBudget, deleted: Dataset, remaining: Dataset,
                     loss: LossKind, noise_rng: np.random.Generator,
                     deleted_total: int) -> RoundOutcome:
    """Influence updates record certification results but never fall back to
    retraining; the stale-Hessian shortcut is the baseline's whole point."""
    elapsed: dict[str, float] = {}
    tic = time.perf_counter()
    w_t = engine.delete(deleted)
    elapsed["update"] = time.perf_counter() - tic
    w_pub = None
    if cfg.perturbation == PERTURB_OUTPUT:
        tic = time.perf_counter()
        w_pub = output_perturb(w_t, budget, t, noise_rng, m_round=deleted.n,
                               deleted_total=deleted_total)
        elapsed["noise"] = time.perf_counter() - tic
    residual = threshold = float("nan")
    certified = True
    if t % cfg.check_every == 0:
        tic = time.perf_counter()
        residual = gradient_residual(w_t, remaining, cfg.lam, loss, engine.b)
        elapsed["certify"] = time.perf_counter() - tic
        if cfg.perturbation == PERTURB_OUTPUT:
            threshold = threshold1(budget, t, m_round=deleted.n, deleted_total=deleted_total)
            certified = residual <= threshold
        elif cfg.perturbation == PERTURB_OBJECTIVE:
            threshold = epsilon2_prime(budget)
            certified = residual <= threshold
    return RoundOutcome(t=t, w_internal=w_t, w_published=w_pub, residual_norm=residual,
                        threshold=threshold, certified=certified, retrained=False,
                        elapsed=elapsed)


def _ascent_round(cfg: ExperimentConfig, t: int, w: np.ndarray, deleted: Dataset,
                  remaining: Dataset, weights, loss: LossKind,
                  b: np.ndarray | None) -> RoundOutcome:
    tic = time.perf_counter()
    w_t = unlearn_gradient_ascent(w, deleted, weights, cfg.lam, loss,
                                  eta=cfg.ga_eta, steps=cfg.ga_steps, b=b)
    elapsed = {"gradient": time.perf_counter() - tic}
    residual = float("nan")
    if t % cfg.check_every == 0:
        residual = gradient_residual(w_t, remaining, cfg.lam, loss, b)
    return RoundOutcome(t=t, w_internal=w_t, w_published=None, residual_norm=residual,
                        threshold=float("nan"), certified=True, retrained=False,
                        elapsed=elapsed)


def _update_profile(cfg: ExperimentConfig, vm: ValuationMethod | None,
                    profile: ValueProfile, outcome: RoundOutcome,
                    remaining: Dataset, utility_set: Dataset,
                    loss: LossKind) -> ValueProfile:
    if outcome.retrained and vm is not None:
        # certification failed: values are reinitialized on the remaining data
        q = compute_values(vm, remaining, utility_set, cfg.lam, loss, tol=cfg.train_tol)
        return profile.with_values(q)
    if vm is not None and vm.mode == DYNAMIC:
        q = compute_values(vm, remaining, utility_set, cfg.lam, loss, tol=cfg.train_tol)
        return profile.with_values(q)
    return profile.restrict(remaining.ids)


# ---------------------------------------------------------------------------
# aggregation and reports

_METRIC_COLUMNS = ("residual", "threshold", "accuracy", "precision", "recall",
                   "cost", "elapsed_ms")


def aggregate_rounds(records: list[RoundRecord]) -> list[dict]:
    """Per-round mean/std across repetitions, plus certification counts."""
    by_t: dict[int, list[RoundRecord]] = {}
    for rec in records:
        by_t.setdefault(rec.t, []).append(rec)
    rows = []
    for t in sorted(by_t):
        group = by_t[t]
        row: dict = {"t": t, "n_reps": len(group),
                     "certified": sum(r.certified for r in group),
                     "retrained": sum(r.retrained for r in group)}
        for col in _METRIC_COLUMNS:
            values = [getattr(r, col) for r in group]
            finite = [v for v in values if not math.isnan(v)]
            row[f"mean_{col}"] = statistics.fmean(finite) if finite else float("nan")
            row[f"std_{col}"] = (statistics.stdev(finite) if len(finite) > 1
                                 else (0.0 if finite else float("nan")))
        rows.append(row)
    return rows


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def emit_report(report: ExperimentReport, out_dir) -> dict[str, str]:
    """Write rounds.csv, aggregate.csv, timings.csv, and manifest.json.

    Everything except timing fields is byte-reproducible for the same config
    and seed.  The manifest holds the full config, so `dvwu run --config
    manifest.json` replays the experiment.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in
             ("rounds.csv", "aggregate.csv", "timings.csv", "manifest.json")}

    with open(paths["rounds.csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repetition", "t", "residual", "threshold", "certified",
                         "retrained", "accuracy", "precision", "recall", "cost",
                         "elapsed_ms"])
        for rec in report.records:
            writer.writerow([_fmt(getattr(rec, col)) for col in
                             ("repetition", "t", "residual", "threshold", "certified",
                              "retrained", "accuracy", "precision", "recall", "cost",
                              "elapsed_ms")])

    write_aggregate_csv(report.aggregate(), paths["aggregate.csv"])

    phase_samples: dict[str, list[float]] = {}
    for rec in report.records:
        for phase, sec in rec.phases.items():
            phase_samples.setdefault(phase, []).append(sec)
    with open(paths["timings.csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "phase", "median_s", "rounds"])
        for phase in sorted(phase_samples):
            writer.writerow([report.config.method, phase,
                             repr(statistics.median(phase_samples[phase])),
                             len(phase_samples[phase])])

    manifest = {
        "package_version": __version__,
        "config": report.config.to_dict(),
        "constants": report.constants,
        "repetition_seeds": [rep.seed for rep in report.repetitions],
        "errors": {rep.repetition: rep.error for rep in report.repetitions
                   if rep.error is not None},
        "initial_metrics": {
            rep.repetition: asdict(rep.initial_metrics)
            for rep in report.repetitions if rep.initial_metrics is not None},
    }
    with open(paths["manifest.json"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def write_aggregate_csv(rows: list[dict], path) -> None:
    header = ["t", "n_reps", "certified", "retrained"]
    for col in _METRIC_COLUMNS:
        header += [f"mean_{col}", f"std_{col}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


def read_rounds_csv(path) -> list[RoundRecord]:
    """Parse a rounds.csv back into records (for the report subcommand)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(RoundRecord(
                repetition=int(row["repetition"]), t=int(row["t"]),
                residual=float(row["residual"]) if row["residual"] else float("nan"),
                threshold=float(row["threshold"]) if row["threshold"] else float("nan"),
                certified=row["certified"] == "true",
                retrained=row["retrained"] == "true",
                accuracy=float(row["accuracy"]), precision=float(row["precision"]),
                recall=float(row["recall"]), cost=float(row["cost"]),
                elapsed_ms=float(row["elapsed_ms"]) if row["elapsed_ms"] else float("nan")))
    return records


# ---------------------------------------------------------------------------
# config files

_BOOL_FIELDS = {"fresh_data_per_rep", "score_published"}
_INT_FIELDS = {"rounds", "repetitions", "base_seed", "check_every", "k", "ga_steps"}
_STR_FIELDS = {"method", "perturbation", "loss", "ga_valuation", "ga_valuation_mode",
               "deletion_strategy", "data_manifest", "values_path"}
_SYNTH_INT_FIELDS = {"n", "d_informative", "d_redundant", "seed"}


def load_experiment_config(path) -> ExperimentConfig:
    """Read an experiment config: 'key = value' text, or an emitted manifest
    (JSON with a 'config' object), chosen by content."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot open config {path}: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"{path}: invalid JSON: {exc}") from exc
        return ExperimentConfig.from_dict(raw.get("config", raw))
    return parse_experiment_config(text, source=str(path))


def parse_experiment_config(text: str, source: str = "<config>") -> ExperimentConfig:
    raw: dict = {}
    synth: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("synth."):
            field_name = key[len("synth."):]
            synth[field_name] = (int(value) if field_name in _SYNTH_INT_FIELDS
                                 else float(value))
        elif key == "deletions_per_round":
            parts = [int(v) for v in value.split(",") if v.strip()]
            raw[key] = parts[0] if len(parts) == 1 else parts
        elif key in _BOOL_FIELDS:
            if value.lower() not in ("true", "false"):
                raise InvalidArgumentError(
                    f"{source}: line {lineno}: {key} must be true or false")
            raw[key] = value.lower() == "true"
        elif key in _INT_FIELDS:
            raw[key] = int(value)
        elif key in _STR_FIELDS:
            raw[key] = value
        elif key in ExperimentConfig.__dataclass_fields__:
            raw[key] = float(value)
        else:
            raise InvalidArgumentError(f"{source}: line {lineno}: unknown key {key!r}")
    if synth:
        raw["synth"] = SynthConfig(**synth)
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise InvalidArgumentError(f"{source}: {exc}") from exc


# ---------------------------------------------------------------------------
# efficiency benchmark

BENCH_METHODS = (METHOD_RETRAIN, METHOD_NEWTON, METHOD_INFLUENCE, METHOD_GA,
                 METHOD_DVWU_K)


@dataclass
class BenchResult:
    method: str
    total_s: float
    phases: dict[str, float]
    trials: int
    setup_valuation_s: float = 0.0


def run_efficiency_bench(cfg: ExperimentConfig, deletion_size: int | None = None,
                         methods: tuple[str, ...] = BENCH_METHODS, trials: int = 10,
                         warmup: int = 2, bench_ga_steps: int = 1) -> list[BenchResult]:
    """Median wall time to process one deletion batch, per method.

    The shared setup (training, the initial Hessian and its factorization,
    static values and weights for the weighted methods) stays outside the
    timed region; the timed region is the update computation itself, plus the
    output-perturbation draw for the methods that publish noisy parameters.
    Gradient ascent is timed at a single step, its cheapest useful form.
    """
    if trials < 1:
        raise InvalidArgumentError(f"trials must be >= 1, got {trials}")
    loss = cfg.loss_kind()
    parts = _prepare_data(cfg, cfg.synth.seed if cfg.synth is not None else cfg.base_seed)
    train_set, test_set = parts.train, parts.test
    m = int(deletion_size if deletion_size is not None else cfg.schedule()[0])
    budget = CertBudget(epsilon=cfg.epsilon, delta=cfg.delta, C=loss.C, beta=loss.beta,
                        m=m, n=train_set.n, T=1, lam=cfg.lam)

    model = train(train_set, cfg.lam, loss, tol=cfg.train_tol)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.base_seed, 303]))
    deleted_ids = rng.choice(train_set.ids, size=m, replace=False)
    deleted = train_set.select(deleted_ids)
    remaining = train_set.drop(deleted_ids)
    noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.base_seed, 404]))

    h0_factor = scipy.linalg.cho_factor(np.array(model.H))
    ones = unit_weights(deleted.ids)
    results = []
    for method in methods:
        method = normalize_method(method)
        valuation_s = 0.0
        weights = ones
        if method in _DVWU_VALUATION or method == METHOD_WGA:
            kind = (_DVWU_VALUATION[method][0] if method in _DVWU_VALUATION
                    else cfg.ga_valuation)
            vm = ValuationMethod(kind=kind, mode=STATIC, k=cfg.k)
            tic = time.perf_counter()
            q = compute_values(vm, train_set, test_set, cfg.lam, loss, tol=cfg.train_tol)
            profile = ValueProfile.from_initial_values(q, alpha=cfg.alpha,
                                                       zero_tol=cfg.zero_tol)
            valuation_s = time.perf_counter() - tic
            weights = profile.weights_for(deleted.ids)

        samples: list[dict[str, float]] = []
        for trial in range(trials + warmup):
            phases: dict[str, float] = {}
            if method == METHOD_RETRAIN:
                tic = time.perf_counter()
                train(remaining, cfg.lam, loss, tol=cfg.train_tol)
                phases["retrain"] = time.perf_counter() - tic
            elif method in (METHOD_NEWTON, METHOD_DVWU_K, METHOD_DVWU_L,
                            METHOD_DVWU_DK, METHOD_DVWU_DL):
                v = ones if method == METHOD_NEWTON else weights
                tic = time.perf_counter()
                g = weighted_gradient(model.w, deleted, v, cfg.lam, loss)
                phases["gradient"] = time.perf_counter() - tic
                tic = time.perf_counter()
                H1 = hessian_downdate(model.H, model.w, deleted, train_set.n, m, 1,
                                      cfg.lam, loss)
                phases["hessian"] = time.perf_counter() - tic
                tic = time.perf_counter()
                w1 = dvwu_newton_step(model.w, H1, g, train_set.n, m, 1)
                phases["solve"] = time.perf_counter() - tic
                tic = time.perf_counter()
                output_perturb(w1, budget, 1, noise_rng)
                phases["noise"] = time.perf_counter() - tic
            elif method == METHOD_INFLUENCE:
                tic = time.perf_counter()
                w1 = unlearn_influence(model.w, h0_factor, deleted, train_set.n, m,
                                       cfg.lam, loss)
                phases["update"] = time.perf_counter() - tic
                tic = time.perf_counter()
                output_perturb(w1, budget, 1, noise_rng)
                phases["noise"] = time.perf_counter() - tic
            elif method in (METHOD_GA, METHOD_WGA):
                v = None if method == METHOD_GA else weights
                tic = time.perf_counter()
                unlearn_gradient_ascent(model.w, deleted, v, cfg.lam, loss,
                                        eta=cfg.ga_eta, steps=bench_ga_steps)
                phases["gradient"] = time.perf_counter() - tic
            else:
                raise InvalidArgumentError(f"method {method} not benchable")
            if trial >= warmup:
                samples.append(phases)
        totals = [sum(p.values()) for p in samples]
        med_phases = {ph: statistics.median(s[ph] for s in samples) for ph in samples[0]}
        results.append(BenchResult(method=method, total_s=statistics.median(totals),
                                   phases=med_phases, trials=len(samples),
                                   setup_valuation_s=valuation_s))
    return results


def write_bench_csv(results: list[BenchResult], path) -> None:
    phases = sorted({ph for r in results for ph in r.phases})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "total_s", "trials", "setup_valuation_s"]
                        + [f"{p}_s" for p in phases])
        for r in results:
            writer.writerow([r.method, repr(r.total_s), r.trials,
                             repr(r.setup_valuation_s)]
                            + [repr(r.phases[p]) if p in r.phases else "" for p in phases])
