"""Dynamic-weight-average loss balancing for per-class detection heads.

Each head's loss is averaged over a window of iterations; the ratio of the
two most recent window averages gives the head's descent rate, and a
temperature softmax over those rates (scaled by the head count) yields the
balancing weights. Total-loss accounting combines the per-head component
losses under the standard (2, 1, 0.2) component weights and a single
1/N_pos normalization.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import ClassCatalog
from .errors import FormatError, ValidationError

__all__ = [
    "DEFAULT_BETA",
    "LossSnapshot",
    "DwaConfig",
    "WeightVector",
    "WeightTrajectory",
    "window_average",
    "dwa_step",
    "total_loss",
    "DwaScheduler",
    "run_trajectory",
    "trajectory_to_csv",
    "SyntheticHeadSpec",
    "synthetic_snapshots",
    "read_loss_csv",
]

log = logging.getLogger(__name__)

DEFAULT_BETA = (2.0, 1.0, 0.2)  # (loc, cls, dir) component weights
NEAR_ZERO_LOSS = 1e-12


@dataclass(frozen=True)
class LossSnapshot:
    """Per-head (loc, cls, dir) component losses at one iteration."""

    losses: Mapping[int, Tuple[float, float, float]]  # class_id -> components
    n_pos: int = 1

    def __post_init__(self):
        if not self.losses:
            raise ValidationError("snapshot must cover at least one head")
        for cid, comps in self.losses.items():
            if len(comps) != 3:
                raise ValidationError(f"head {cid} needs (loc, cls, dir) components")
            for v in comps:
                if not (math.isfinite(v) and v >= 0):
                    raise ValidationError(f"head {cid} has invalid loss component {v}")
        if self.n_pos < 1:
            raise ValidationError(f"n_pos must be >= 1, got {self.n_pos}")

    def head_total(self, class_id: int, beta: Sequence[float] = DEFAULT_BETA) -> float:
        loc, cls_, dir_ = self.losses[class_id]
        return beta[0] * loc + beta[1] * cls_ + beta[2] * dir_

    @property
    def class_ids(self) -> Tuple[int, ...]:
        return tuple(sorted(self.losses))


@dataclass(frozen=True)
class DwaConfig:
    temperature: float = 2.0
    window: int = 50
    beta: Tuple[float, float, float] = DEFAULT_BETA

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class WeightVector:
    """Per-head balancing weights at one timestep; they sum to the head count."""

    alpha: Mapping[int, float]
    timestep: int

    def __post_init__(self):
        if not self.alpha:
            raise ValidationError("weight vector must cover at least one head")
        total = math.fsum(self.alpha.values())
        if abs(total - len(self.alpha)) > 1e-9:
            raise ValidationError(
                f"weights sum to {total}, expected head count {len(self.alpha)}"
            )
        if any(a <= 0 for a in self.alpha.values()):
            raise ValidationError("all weights must be positive")

    def as_list(self) -> List[float]:
        return [self.alpha[c] for c in sorted(self.alpha)]


@dataclass(frozen=True)
class WeightTrajectory:
    steps: Tuple[WeightVector, ...]

    def __post_init__(self):
        ts = [w.timestep for w in self.steps]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"timesteps must be strictly increasing, got {ts}")

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def window_average(
    snapshots: Sequence[LossSnapshot],
    class_id: int,
    beta: Sequence[float] = DEFAULT_BETA,
) -> float:
    """Arithmetic mean of one head's component-weighted total over a window."""
    if not snapshots:
        raise ValidationError("window_average needs a non-empty window")
    return math.fsum(s.head_total(class_id, beta) for s in snapshots) / len(snapshots)


def dwa_step(
    prev: Optional[Mapping[int, float]],
    prev2: Optional[Mapping[int, float]],
    config: DwaConfig,
    timestep: int,
    class_ids: Optional[Sequence[int]] = None,
) -> WeightVector:
    """One scheduler update from the two most recent window-averaged losses.

    ``prev`` holds each head's average at t-1 and ``prev2`` at t-2. With
    fewer than two prior windows (timestep < 2) every head gets weight 1.
    A head whose t-2 average sits below 1e-12 has its descent rate clamped
    to 1: a converged head should get neutral weight, not a blow-up.
    """
    if timestep < 2:
        ids = class_ids if class_ids is not None else sorted(prev or prev2 or [])
        if not ids:
            raise ValidationError("warm-up step needs the head ids")
        return WeightVector({int(c): 1.0 for c in ids}, timestep)
    if prev is None or prev2 is None:
        raise ValidationError("dwa_step needs both prior window averages at timestep >= 2")
    if set(prev) != set(prev2):
        raise ValidationError("prior windows cover different head sets")

    rates = {}
    for cid in sorted(prev):
        denom = prev2[cid]
        if denom < NEAR_ZERO_LOSS:
            log.warning("head %s loss underflow (%.3g); clamping descent rate to 1", cid, denom)
            rates[cid] = 1.0
        else:
            rates[cid] = prev[cid] / denom

    ids = sorted(rates)
    scaled = np.array([rates[c] / config.temperature for c in ids])
    scaled -= scaled.max()  # stable softmax
    # floor keeps weights positive even when a head's rate is so far behind
    # the leader that its exponential underflows
    e = np.maximum(np.exp(scaled), np.finfo(np.float64).tiny)
    alpha = len(ids) * e / e.sum()
    return WeightVector({c: float(a) for c, a in zip(ids, alpha)}, timestep)


def total_loss(
    snapshot: LossSnapshot,
    weights: WeightVector,
    beta: Sequence[float] = DEFAULT_BETA,
) -> float:
    """Accumulated detection loss: weight each head's component-weighted sum,
    then normalize once by the positive-anchor count."""
    missing = set(snapshot.losses) - set(weights.alpha)
    if missing:
        raise ValidationError(f"weight vector missing heads {sorted(missing)}")
    acc = 0.0
    for cid in sorted(snapshot.losses):
        acc += weights.alpha[cid] * snapshot.head_total(cid, beta)
    return acc / snapshot.n_pos


class DwaScheduler:
    """Sequential per-run state machine: feed snapshots in order, collect one
    weight vector per completed window."""

    def __init__(self, config: DwaConfig):
        self.config = config
        self._buffer: List[Mapping[int, float]] = []
        self._averages: List[Dict[int, float]] = []
        self._class_ids: Optional[Tuple[int, ...]] = None

    def observe(self, snapshot: LossSnapshot) -> Optional[WeightVector]:
        totals = {cid: snapshot.head_total(cid, self.config.beta) for cid in snapshot.losses}
        return self.observe_totals(totals)

    def observe_totals(self, totals: Mapping[int, float]) -> Optional[WeightVector]:
        """Feed one iteration's per-head scalar losses; returns a weight
        vector when this iteration closes a window, else None."""
        ids = tuple(sorted(totals))
        if self._class_ids is None:
            self._class_ids = ids
        elif ids != self._class_ids:
            raise ValidationError(f"head set changed from {self._class_ids} to {ids}")
        for cid, v in totals.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"head {cid} has invalid loss {v}")
        self._buffer.append(dict(totals))
        if len(self._buffer) < self.config.window:
            return None
        avg = {
            cid: math.fsum(t[cid] for t in self._buffer) / len(self._buffer)
            for cid in self._class_ids
        }
        self._buffer = []
        self._averages.append(avg)
        t = len(self._averages) - 1
        if t < 2:
            return dwa_step(None, None, self.config, t, class_ids=self._class_ids)
        return dwa_step(self._averages[t - 1], self._averages[t - 2], self.config, t)


def run_trajectory(
    snapshots: Iterable[LossSnapshot], config: DwaConfig
) -> WeightTrajectory:
    """Stream snapshots through a scheduler; one weight vector per window."""
    sched = DwaScheduler(config)
    steps = []
    for snap in snapshots:
        vec = sched.observe(snap)
        if vec is not None:
            steps.append(vec)
    return WeightTrajectory(tuple(steps))


def trajectory_to_csv(trajectory: WeightTrajectory, catalog: Optional[ClassCatalog] = None) -> str:
    """Render as ``timestep,class_name,alpha`` rows (class ids when no catalog)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["timestep", "class_name", "alpha"])
    for vec in trajectory:
        for cid in sorted(vec.alpha):
            name = catalog.name_of(cid) if catalog is not None else str(cid)
            writer.writerow([vec.timestep, name, repr(vec.alpha[cid])])
    return out.getvalue()


@dataclass(frozen=True)
class SyntheticHeadSpec:
    """Exponentially decaying loss generator for one head."""

    initial: float
    decay: float
    noise: float = 0.0

    def __post_init__(self):
        if self.initial <= 0 or not (0 < self.decay <= 1):
            raise ValidationError(
                f"need initial > 0 and decay in (0, 1], got {self.initial}, {self.decay}"
            )
        if self.noise < 0:
            raise ValidationError(f"noise must be >= 0, got {self.noise}")


# fixed component split so the beta-weighted total stays proportional to the
# generated head value
_COMPONENT_SPLIT = (0.5, 0.4, 0.1)


def synthetic_snapshots(
    heads: Mapping[int, SyntheticHeadSpec],
    iterations: int,
    n_pos: int = 10,
    rng: Optional[np.random.Generator] = None,
) -> List[LossSnapshot]:
    """Deterministic synthetic loss stream for trajectory simulation.

    Head value at iteration i is initial * decay**i, perturbed by
    log-normal noise so losses stay strictly positive.
    """
    if not heads:
        raise ValidationError("need at least one head spec")
    if iterations < 0:
        raise ValidationError("iterations must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    snaps = []
    for i in range(iterations):
        losses = {}
        for cid, spec in sorted(heads.items()):
            v = spec.initial * spec.decay**i
            if spec.noise > 0:
                v *= math.exp(spec.noise * float(rng.standard_normal()))
            losses[cid] = tuple(v * f for f in _COMPONENT_SPLIT)
        snaps.append(LossSnapshot(losses, n_pos=n_pos))
    return snaps


def read_loss_csv(text: str, catalog: Optional[ClassCatalog] = None) -> List[LossSnapshot]:
    """Parse a recorded loss stream: iteration,class,loc,cls,dir,n_pos rows.

    Rows are grouped by iteration (which must be non-decreasing); every
    iteration must cover the same head set.
    """
    reader = csv.reader(io.StringIO(text))
    rows = []
    for lineno, row in enumerate(reader, start=1):
        if not row or (lineno == 1 and row[0].strip().lower() == "iteration"):
            continue
        if len(row) != 6:
            raise FormatError(f"expected 6 columns, got {len(row)}", line=lineno)
        try:
            iteration = int(row[0])
            loc, cls_, dir_ = (float(v) for v in row[2:5])
            n_pos = int(row[5])
        except ValueError as exc:
            raise FormatError(f"malformed loss row: {exc}", line=lineno) from None
        name = row[1].strip()
        if catalog is not None:
            cid = catalog.id_of(name)
        else:
            try:
                cid = int(name)
            except ValueError:
                raise FormatError(f"unknown head {name!r} and no catalog given", line=lineno) from None
        rows.append((iteration, lineno, cid, (loc, cls_, dir_), n_pos))

    snaps: List[LossSnapshot] = []
    current: Dict[int, Tuple[float, float, float]] = {}
    current_iter = None
    current_npos = 1
    for iteration, lineno, cid, comps, n_pos in rows:
        if current_iter is not None and iteration != current_iter:
            if iteration < current_iter:
                raise FormatError(
                    f"iterations must be non-decreasing ({iteration} after {current_iter})",
                    line=lineno,
                )
            snaps.append(LossSnapshot(current, n_pos=current_npos))
            current = {}
        current_iter = iteration
        current_npos = n_pos
        current[cid] = comps
    if current:
        snaps.append(LossSnapshot(current, n_pos=current_npos))
    return snaps
