"""Data valuation and the value-to-weight map for deletion updates.

Two valuation methods are provided: leave-one-out retraining (utility is
accuracy on a held-out split) and the exact k-nearest-neighbor Shapley value
(utility is the k-NN vote share on a reference set, computed in closed form
by a per-test-point recursion over distance-sorted training rows).

Values q map to deletion weights v: harmful samples (q < 0) keep weight 1,
worthless samples (q = 0) get weight 0, and valuable samples (q > 0) get
alpha * q_min_plus / q clamped to [0, 1], where q_min_plus is the smallest
positive value of the initial round and stays fixed for the whole deletion
sequence.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .errors import InvalidArgumentError
from .losses import LossKind
from .models import evaluate, train

log = logging.getLogger(__name__)

LEAVE_ONE_OUT = "leave_one_out"
KNN_SHAPLEY = "knn_shapley"
STATIC = "static"
DYNAMIC = "dynamic"

DEFAULT_ALPHA = 0.5
DEFAULT_ZERO_TOL = 1e-9


@dataclass(frozen=True)
class ValuationMethod:
    """Which values to compute and whether to refresh them between rounds."""

    kind: str = KNN_SHAPLEY
    mode: str = STATIC
    k: int = 5

    def __post_init__(self):
        if self.kind not in (LEAVE_ONE_OUT, KNN_SHAPLEY):
            raise InvalidArgumentError(f"unknown valuation kind {self.kind!r}")
        if self.mode not in (STATIC, DYNAMIC):
            raise InvalidArgumentError(f"unknown valuation mode {self.mode!r}")
        if self.k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class ValueProfile:
    """Values q and weights v per sample id, with the frozen q_min_plus anchor."""

    q: dict[int, float]
    q_min_plus: float
    alpha: float = DEFAULT_ALPHA
    zero_tol: float = DEFAULT_ZERO_TOL
    v: dict[int, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.v is None:
            object.__setattr__(
                self, "v",
                weights_from_values(self.q, self.q_min_plus, self.alpha, self.zero_tol))

    @classmethod
    def from_initial_values(cls, q: dict[int, float], alpha: float = DEFAULT_ALPHA,
                            zero_tol: float = DEFAULT_ZERO_TOL) -> "ValueProfile":
        """Build the round-1 profile; q_min_plus is anchored here and never moves.

        Values within zero_tol of zero do not count as positive.  When no
        value is positive the anchor is left as NaN, which is fine as long as
        no later round produces a positive value.
        """
        positives = [x for x in q.values() if x > zero_tol]
        anchor = min(positives) if positives else float("nan")
        return cls(q=dict(q), q_min_plus=anchor, alpha=alpha, zero_tol=zero_tol)

    def with_values(self, q: dict[int, float]) -> "ValueProfile":
        """Same anchor and parameters, new values (weights recomputed).

        A still-undefined anchor is set from the first batch of values that
        contains a positive one; after that it never moves.
        """
        anchor = self.q_min_plus
        if np.isnan(anchor):
            positives = [x for x in q.values() if x > self.zero_tol]
            if positives:
                anchor = min(positives)
        return replace(self, q=dict(q), q_min_plus=anchor, v=None)

    def restrict(self, ids) -> "ValueProfile":
        """Drop entries for ids that are gone; used by static mode after a deletion."""
        keep = set(int(i) for i in np.asarray(ids).ravel())
        return self.with_values({i: x for i, x in self.q.items() if i in keep})

    def weights_for(self, ids) -> dict[int, float]:
        try:
            return {int(i): self.v[int(i)] for i in np.asarray(ids).ravel()}
        except KeyError as exc:
            raise InvalidArgumentError(f"no weight for id {exc.args[0]}") from None


def weights_from_values(q, q_min_plus: float, alpha: float = DEFAULT_ALPHA,
                        zero_tol: float = DEFAULT_ZERO_TOL) -> dict[int, float]:
    """Map values to deletion weights in [0, 1].

    q < 0 -> 1 (remove harmful points at full strength), |q| <= zero_tol -> 0
    (skip worthless points), q > 0 -> min(1, alpha * q_min_plus / q).
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must be in (0, 1], got {alpha}")
    if not np.isnan(q_min_plus) and not q_min_plus > 0.0:
        raise InvalidArgumentError(f"q_min_plus must be positive, got {q_min_plus}")
    if zero_tol < 0.0:
        raise InvalidArgumentError(f"zero_tol must be nonnegative, got {zero_tol}")
    out: dict[int, float] = {}
    for i, value in q.items():
        if abs(value) <= zero_tol:
            out[int(i)] = 0.0
        elif value < 0.0:
            out[int(i)] = 1.0
        else:
            if np.isnan(q_min_plus):
                raise InvalidArgumentError(
                    f"value {value} for id {i} is positive but q_min_plus is undefined")
            out[int(i)] = min(1.0, alpha * q_min_plus / value)
    return out


def loo_values(data: Dataset, validation: Dataset, lam: float, loss: LossKind,
               tol: float = 1e-8) -> dict[int, float]:
    """Leave-one-out values: validation accuracy of the full model minus the
    accuracy of the model retrained without sample i.

    Retrains n models, so this is for modest n.
    """
    if data.n < 2:
        raise InvalidArgumentError("leave-one-out needs at least two samples")
    base = evaluate(train(data, lam, loss, tol=tol), validation).accuracy
    q: dict[int, float] = {}
    for i in data.ids:
        sub = data.drop([int(i)])
        acc = evaluate(train(sub, lam, loss, tol=tol), validation).accuracy
        q[int(i)] = base - acc
    return q


def knn_sv(data: Dataset, reference: Dataset, k: int, block: int = 256) -> dict[int, float]:
    """Exact k-NN Shapley values of the training rows, averaged over the
    reference points.

    For one reference point, with training rows sorted by ascending distance
    (ties broken by ascending id) as alpha_1..alpha_N:

        s[alpha_N] = 1[y_{alpha_N} = y_ref] / N
        s[alpha_j] = s[alpha_{j+1}]
                     + (1[y_{alpha_j} = y_ref] - 1[y_{alpha_{j+1}} = y_ref]) / k
                       * min(k, j) / j
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if data.n < 1 or reference.n < 1:
        raise InvalidArgumentError("knn_sv needs non-empty training and reference sets")

    # Rows sorted by id so that a stable distance argsort breaks ties by id.
    order = np.argsort(data.ids, kind="stable")
    X = data.features[order]
    y = data.labels[order]
    ids = data.ids[order]
    N = data.n

    j = np.arange(1, N, dtype=np.float64)
    tail_coef = np.minimum(float(k), j) / (k * j)

    totals = np.zeros(N)
    x_sq = np.sum(X * X, axis=1)
    for start in range(0, reference.n, block):
        Xr = reference.features[start:start + block]
        yr = reference.labels[start:start + block]
        d2 = x_sq[None, :] - 2.0 * (Xr @ X.T) + np.sum(Xr * Xr, axis=1)[:, None]
        rank = np.argsort(d2, axis=1, kind="stable")
        match = (y[rank] == yr[:, None]).astype(np.float64)
        s = np.empty_like(match)
        s[:, -1] = match[:, -1] / N
        diffs = (match[:, :-1] - match[:, 1:]) * tail_coef[None, :]
        s[:, :-1] = s[:, -1:] + np.cumsum(diffs[:, ::-1], axis=1)[:, ::-1]
        np.add.at(totals, rank, s)
    totals /= reference.n
    return {int(i): float(t) for i, t in zip(ids, totals)}


def dynamic_update(profile: ValueProfile, remaining: Dataset, reference: Dataset,
                   method: ValuationMethod, lam: float | None = None,
                   loss: LossKind | None = None, tol: float = 1e-8) -> ValueProfile:
    """Per-round refresh of the profile after a deletion.

    Static mode restricts the carried values to the remaining ids; dynamic
    mode recomputes them from scratch on the remaining data.  The q_min_plus
    anchor is never touched.
    """
    if method.mode == STATIC:
        return profile.restrict(remaining.ids)
    q = compute_values(method, remaining, reference, lam, loss, tol)
    return profile.with_values(q)


def compute_values(method: ValuationMethod, data: Dataset, reference: Dataset,
                   lam: float | None = None, loss: LossKind | None = None,
                   tol: float = 1e-8) -> dict[int, float]:
    """Run the configured valuation method and return raw values."""
    if method.kind == KNN_SHAPLEY:
        return knn_sv(data, reference, method.k)
    if lam is None or loss is None:
        raise InvalidArgumentError("leave-one-out valuation needs lam and loss")
    return loo_values(data, reference, lam, loss, tol=tol)


def save_values_csv(path, profile: ValueProfile) -> None:
    """Write one row per sample: id, value q, weight v."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "q", "v"])
        for i in sorted(profile.q):
            writer.writerow([i, repr(profile.q[i]), repr(profile.v[i])])


def load_values_csv(path, alpha: float = DEFAULT_ALPHA,
                    zero_tol: float = DEFAULT_ZERO_TOL) -> ValueProfile:
    """Rebuild a profile from a value CSV; q_min_plus is re-anchored from q."""
    q: dict[int, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames or "q" not in reader.fieldnames:
            raise InvalidArgumentError(f"{path}: expected columns id,q[,v]")
        for row in reader:
            q[int(row["id"])] = float(row["q"])
    return ValueProfile.from_initial_values(q, alpha=alpha, zero_tol=zero_tol)
