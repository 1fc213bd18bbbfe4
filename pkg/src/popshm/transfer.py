"""Transfer layer: normal-condition alignment, direct domain transfer maps
chained along geodesics, a deterministic k-NN damage localiser, the domain
adaptation comparator, and threshold calibration.

Transfer maps are per-dimension affine re-anchorings of normal-condition
statistics. Chaining them through shared intermediate statistics telescopes
algebraically, so mapped normal-condition data always land exactly on the
source's normal-condition moments (the zero-section condition). Target
labels never enter map construction; they appear only in evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlignmentError,
    CalibrationError,
    CompatibilityError,
    InvalidInputError,
    NoPathError,
    TrainingError,
    TransferPathError,
)
from .families import GeodesicPath, StructureInstance, family_distance, geodesic, interpolating_structure
from .graphs import Population, graph_distance


@dataclass(frozen=True)
class Domain:
    """Feature space with a finite sample: the transfer-learning notion of
    a domain, summarised by per-dimension first and second moments."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise InvalidInputError("domain needs a (N >= 1) x dim sample matrix")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("domain sample contains non-finite values")
        object.__setattr__(self, "samples", samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def std(self) -> np.ndarray:
        return self.samples.std(axis=0)


# ---------------------------------------------------------------------------
# Affine steps and transfer maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineStep:
    """Per-dimension x -> x * scale + shift with strictly positive scales."""

    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        shift = np.asarray(self.shift, dtype=float)
        if scale.shape != shift.shape or scale.ndim != 1:
            raise InvalidInputError("scale and shift must be equal-length vectors")
        if not np.all(scale > 0.0):
            raise InvalidInputError("affine scales must be strictly positive")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def from_moments(cls, mean_from, std_from, mean_to, std_to) -> "AffineStep":
        """Re-anchoring that sends (mean_from, std_from) onto (mean_to,
        std_to); degenerate spreads fall back to unit scale."""
        std_from = np.asarray(std_from, dtype=float)
        std_to = np.asarray(std_to, dtype=float)
        usable = (std_from > 0.0) & (std_to > 0.0)
        scale = np.where(usable, np.divide(
            std_to, std_from, out=np.ones_like(std_to), where=usable), 1.0)
        shift = np.asarray(mean_to, dtype=float) - np.asarray(mean_from, dtype=float) * scale
        return cls(scale=scale, shift=shift)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.scale + self.shift

    def inverse(self) -> "AffineStep":
        return AffineStep(scale=1.0 / self.scale, shift=-self.shift / self.scale)


@dataclass(frozen=True)
class TransferMap:
    """Ordered composition of affine steps sending target-frame features
    into the source frame. The empty map is the identity."""

    steps: tuple[AffineStep, ...] = ()
    source_id: str = ""
    target_id: str = ""
    path_thetas: tuple = ()

    def apply(self, x) -> np.ndarray:
        out = np.asarray(x, dtype=float)
        for step in self.steps:
            out = step.apply(out)
        return out

    def inverse(self) -> "TransferMap":
        return TransferMap(
            steps=tuple(step.inverse() for step in reversed(self.steps)),
            source_id=self.target_id, target_id=self.source_id,
            path_thetas=tuple(reversed(self.path_thetas)))

    def then(self, other: "TransferMap") -> "TransferMap":
        """Composition: self first, then other."""
        return TransferMap(
            steps=self.steps + other.steps,
            source_id=other.source_id or self.source_id,
            target_id=self.target_id or other.target_id,
            path_thetas=self.path_thetas + other.path_thetas)


def identity_map() -> TransferMap:
    return TransferMap()


# ---------------------------------------------------------------------------
# Normal Condition Alignment
# ---------------------------------------------------------------------------

def nca(features, nc_rows) -> tuple[np.ndarray, AffineStep]:
    """Standardise by the normal-condition rows' mean and spread.

    Aligned normal-condition data have mean exactly 0 and (where the spread
    is non-degenerate) std 1 per dimension: healthy data sit on the zero
    section. Returns the aligned matrix and the affine step that did it.
    """
    features = np.asarray(features, dtype=float)
    nc_rows = np.asarray(nc_rows, dtype=int)
    if nc_rows.size == 0:
        raise AlignmentError("normal-condition row set is empty")
    nc = features[nc_rows]
    mean = nc.mean(axis=0)
    std = nc.std(axis=0)
    scale = np.where(std > 0.0, np.divide(
        1.0, std, out=np.ones_like(std), where=std > 0.0), 1.0)
    step = AffineStep(scale=scale, shift=-mean * scale)
    return step.apply(features), step


# ---------------------------------------------------------------------------
# Fibre views and direct domain transfer
# ---------------------------------------------------------------------------

def _fibre_view_stats(view) -> tuple[np.ndarray, np.ndarray, int]:
    fibre, stratum, nc_rows = view
    features, _ = fibre.feature_matrix(stratum)
    nc_rows = np.asarray(nc_rows, dtype=int)
    if nc_rows.size == 0:
        raise AlignmentError("normal-condition row set is empty")
    nc = features[nc_rows]
    return nc.mean(axis=0), nc.std(axis=0), features.shape[1]


def ddt_map(source, target, path: GeodesicPath | None = None, steps: int = 1,
            *, oracle=None, seed: int = 0, seed_offset: int = 0) -> TransferMap:
    """Direct-domain-transfer map from the target feature frame into the
    source frame.

    ``source`` and ``target`` are (fibre, stratum index, nc row indices)
    views. With steps = 1 this is plain normal-condition re-anchoring; with
    steps = K the path is sampled at s = i/K (s = 0 at the target, s = 1 at
    the source) and the oracle simulates normal-condition statistics at
    each interior structure with seed ``seed + seed_offset + i``, chaining
    K affine re-anchorings. Interior statistics are shared between adjacent
    steps, so the chain composes exactly onto the endpoint re-anchoring.
    """
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    t_mean, t_std, t_dim = _fibre_view_stats(target)
    s_mean, s_std, s_dim = _fibre_view_stats(source)
    if t_dim != s_dim:
        raise CompatibilityError(
            f"feature dimensions differ: target {t_dim}, source {s_dim}")
    anchors = [(t_mean, t_std)]
    thetas = []
    if steps > 1:
        if path is None or oracle is None:
            raise InvalidInputError("multi-step maps need a path and an oracle")
        for i in range(1, steps):
            s = i / steps
            inst = path.point_at(s)
            thetas.append(tuple(inst.theta))
            try:
                sample = oracle.nc_features(inst, seed=seed + seed_offset + i)
            except Exception as exc:
                raise TransferPathError(
                    f"oracle failed at path parameter s={s:.6g}: {exc}") from exc
            if sample.shape[1] != t_dim:
                raise CompatibilityError(
                    f"oracle features at s={s:.6g} have dim {sample.shape[1]}")
            anchors.append((sample.mean(axis=0), sample.std(axis=0)))
    anchors.append((s_mean, s_std))
    chain = tuple(
        AffineStep.from_moments(m0, d0, m1, d1)
        for (m0, d0), (m1, d1) in zip(anchors, anchors[1:]))
    return TransferMap(steps=chain, path_thetas=tuple(thetas))


# ---------------------------------------------------------------------------
# Damage localiser (k nearest neighbours)
# ---------------------------------------------------------------------------

@dataclass
class Task:
    """Label set plus trained predictor state."""

    labels: tuple
    train_x: np.ndarray
    train_y: np.ndarray
    k: int
    weighting: str = "distance"
    in_domain_accuracy: float = math.nan

    def predict(self, x) -> np.ndarray:
        return knn_predict(self.train_x, self.train_y, x, self.k,
                           labels=self.labels, weighting=self.weighting)

    def scores(self, x) -> np.ndarray:
        return knn_scores(self.train_x, self.train_y, x, self.k,
                          labels=self.labels, weighting=self.weighting)


def knn_scores(train_x, train_y, query_x, k, *, labels=None,
               weighting="distance") -> np.ndarray:
    """Per-label vote fractions (rows sum to 1), deterministic.

    Distance weighting uses 1/d; exact matches restrict the vote to the
    zero-distance neighbours. Label columns follow sorted label order.
    """
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y)
    query_x = np.atleast_2d(np.asarray(query_x, dtype=float))
    if labels is None:
        labels = tuple(sorted(set(train_y.tolist())))
    label_index = {label: i for i, label in enumerate(labels)}
    scores = np.zeros((query_x.shape[0], len(labels)))
    for row, q in enumerate(query_x):
        d = np.sqrt(np.sum((train_x - q) ** 2, axis=1))
        order = np.argsort(d, kind="stable")[:k]
        dk = d[order]
        if weighting == "distance" and np.any(dk == 0.0):
            order = order[dk == 0.0]
            weights = np.ones(len(order))
        elif weighting == "distance":
            weights = 1.0 / dk
        elif weighting == "uniform":
            weights = np.ones(len(order))
        else:
            raise InvalidInputError("weighting must be 'distance' or 'uniform'")
        for idx, w in zip(order, weights):
            scores[row, label_index[train_y[idx]]] += w
        scores[row] /= scores[row].sum()
    return scores


def knn_predict(train_x, train_y, query_x, k, *, labels=None,
                weighting="distance") -> np.ndarray:
    if labels is None:
        labels = tuple(sorted(set(np.asarray(train_y).tolist())))
    scores = knn_scores(train_x, train_y, query_x, k, labels=labels,
                        weighting=weighting)
    picks = np.argmax(scores, axis=1)  # argmax takes the smallest label index on ties
    return np.array([labels[i] for i in picks])


def train_localiser(features, labels, k: int = 3, *,
                    weighting: str = "distance") -> Task:
    """Train the k-NN damage localiser; every label needs at least k
    samples."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(features)):
        raise TrainingError("training features contain non-finite values")
    label_set = tuple(sorted(set(labels.tolist())))
    for label in label_set:
        count = int(np.sum(labels == label))
        if count < k:
            raise TrainingError(
                f"label {label!r} has {count} samples, fewer than k={k}")
    return Task(labels=label_set, train_x=features, train_y=labels, k=k,
                weighting=weighting)


def cross_val_accuracy(features, labels, k: int = 3, folds: int = 5, *,
                       weighting: str = "distance") -> float:
    """Deterministic stratified round-robin cross-validation accuracy."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    n = len(labels)
    fold_of = np.zeros(n, dtype=int)
    for label in sorted(set(labels.tolist())):
        rows = np.nonzero(labels == label)[0]
        fold_of[rows] = np.arange(len(rows)) % folds
    correct = 0
    for fold in range(folds):
        test = fold_of == fold
        if not np.any(test):
            continue
        task = train_localiser(features[~test], labels[~test], k,
                               weighting=weighting)
        correct += int(np.sum(task.predict(features[test]) == labels[test]))
    return correct / n


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class TransferReport:
    """Outcome of one transfer experiment."""

    source_id: str
    target_id: str
    distance: float                      # base-space graph metric
    path_length: float                   # common-family Euclidean metric
    leg_distances: tuple[float, ...]
    raw_accuracy: float
    mapped_accuracy: float
    in_domain_accuracy: float
    da_accuracy: float = math.nan
    confusion: dict = field(default_factory=dict)


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    return float(np.mean(predicted == truth))


def confusion_counts(predicted, truth) -> dict:
    out: dict = {}
    for p, t in zip(np.asarray(predicted).tolist(), np.asarray(truth).tolist()):
        out[(t, p)] = out.get((t, p), 0) + 1
    return out


def evaluate_transfer(task: Task, tmap: TransferMap, target_x, target_y, *,
                      source_id: str = "", target_id: str = "",
                      distance: float = math.nan,
                      path_length: float = math.nan,
                      leg_distances: tuple[float, ...] = ()) -> TransferReport:
    """Score the source-trained task on raw and mapped target features."""
    target_x = np.asarray(target_x, dtype=float)
    if target_x.shape[1] != task.train_x.shape[1]:
        raise CompatibilityError("target feature dimension differs from the task's")
    raw_pred = task.predict(target_x)
    mapped_pred = task.predict(tmap.apply(target_x))
    return TransferReport(
        source_id=source_id,
        target_id=target_id,
        distance=distance,
        path_length=path_length,
        leg_distances=tuple(leg_distances),
        raw_accuracy=accuracy(raw_pred, target_y),
        mapped_accuracy=accuracy(mapped_pred, target_y),
        in_domain_accuracy=task.in_domain_accuracy,
        confusion=confusion_counts(mapped_pred, target_y),
    )


# ---------------------------------------------------------------------------
# Two-step transfer through an interpolating structure
# ---------------------------------------------------------------------------

def _member_dataset(member, oracle):
    fibre = member.fibre
    if fibre is None:
        raise InvalidInputError("structure has no fibre")
    stratum = oracle.feature_stratum(fibre)
    features, cells = fibre.feature_matrix(stratum)
    labels = np.array([member.labels[k] for (_, k) in cells])
    nc_rows = np.nonzero(labels == oracle.healthy_label)[0]
    return fibre, stratum, features, labels, nc_rows


def two_step_transfer(population: Population, source_id: str, target_id: str,
                      *, oracle, steps: int = 1, seed: int = 0, k: int = 3,
                      weighting: str = "distance") -> TransferReport:
    """Transfer through the interpolating structure S* at the geodesic
    midpoint.

    S* gains a simulated normal-condition fibre (the population does not
    distinguish real from model structures), and the composed map chains
    target -> S* -> source with a seed schedule that makes the composition
    coordinate-identical to a single map with doubled steps on collinear
    legs.
    """
    source = population.member(source_id)
    target = population.member(target_id)
    if source.instance is None or target.instance is None:
        raise NoPathError("both structures need family instances for a geodesic")
    star_inst = interpolating_structure(source.instance, target.instance)
    star_id = f"interp({source_id},{target_id})"
    star_fibre, star_labels = oracle.simulate(
        star_inst, [(oracle.healthy_label, None)], seed=seed + steps,
        structure_id=star_id)
    if star_id not in population:
        population.add(star_id, star_inst.graph(), provenance="simulated",
                       instance=star_inst, fibre=star_fibre, labels=star_labels)

    s_fibre, s_stratum, s_x, s_y, s_nc = _member_dataset(source, oracle)
    t_fibre, t_stratum, t_x, t_y, t_nc = _member_dataset(target, oracle)
    star_stratum = oracle.feature_stratum(star_fibre)
    star_nc = np.arange(star_fibre.feature_matrix(star_stratum)[0].shape[0])

    leg_a = ddt_map((star_fibre, star_stratum, star_nc),
                    (t_fibre, t_stratum, t_nc),
                    path=geodesic(target.instance, star_inst),
                    steps=steps, oracle=oracle, seed=seed)
    leg_b = ddt_map((s_fibre, s_stratum, s_nc),
                    (star_fibre, star_stratum, star_nc),
                    path=geodesic(star_inst, source.instance),
                    steps=steps, oracle=oracle, seed=seed, seed_offset=steps)
    composed = leg_a.then(leg_b)

    task = train_localiser(s_x, s_y, k, weighting=weighting)
    task.in_domain_accuracy = cross_val_accuracy(s_x, s_y, k, weighting=weighting)
    d_total = graph_distance(source.graph, target.graph)
    legs = (family_distance(source.instance, star_inst),
            family_distance(star_inst, target.instance))
    return evaluate_transfer(
        task, composed, t_x, t_y, source_id=source_id, target_id=target_id,
        distance=d_total,
        path_length=family_distance(source.instance, target.instance),
        leg_distances=legs)


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdResult:
    d_s: float
    warning: bool
    curve: tuple[tuple[float, float], ...]  # (distance, fitted accuracy)


def _isotonic_decreasing(values: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit of a non-increasing sequence."""
    sums = []
    counts = []
    for v in values:
        sums.append(float(v))
        counts.append(1)
        while len(sums) >= 2 and sums[-2] / counts[-2] < sums[-1] / counts[-1]:
            sums[-2] += sums[-1]
            counts[-2] += counts[-1]
            sums.pop()
            counts.pop()
    out = []
    for s, c in zip(sums, counts):
        out.extend([s / c] * c)
    return np.array(out)


def calibrate_threshold(pairs, target_accuracy: float, *,
                        min_pairs: int = 20) -> ThresholdResult:
    """Fit a monotone-decreasing accuracy(distance) curve and return the
    largest distance whose fitted accuracy still meets the target.

    ``pairs`` is an iterable of (distance, accuracy). Returns d_s = 0 with
    a warning flag when no distance qualifies.
    """
    pairs = [(float(d), float(a)) for d, a in pairs]
    if len(pairs) < min_pairs:
        raise CalibrationError(
            f"calibration needs at least {min_pairs} pairs, got {len(pairs)}")
    pairs.sort(key=lambda da: (da[0], da[1]))
    distances = np.array([d for d, _ in pairs])
    fitted = _isotonic_decreasing(np.array([a for _, a in pairs]))
    curve = tuple(zip(distances.tolist(), fitted.tolist()))
    qualifying = distances[fitted >= target_accuracy]
    if qualifying.size == 0:
        return ThresholdResult(d_s=0.0, warning=True, curve=curve)
    return ThresholdResult(d_s=float(qualifying.max()), warning=False, curve=curve)


# ---------------------------------------------------------------------------
# Domain adaptation baseline
# ---------------------------------------------------------------------------

def domain_adaptation_baseline(source_x, source_y, source_nc_rows,
                               target_x, target_nc_rows, *, k: int = 3,
                               weighting: str = "distance"):
    """Minimal domain adaptation: align each domain to its own normal
    condition (shared zero-section frame), train the localiser there.

    Returns ((source alignment, target alignment), task, aligned target
    features); predictions on new target data must apply the target
    alignment first.
    """
    source_x = np.asarray(source_x, dtype=float)
    target_x = np.asarray(target_x, dtype=float)
    if source_x.shape[1] != target_x.shape[1]:
        raise CompatibilityError("domains must share a feature dimension")
    aligned_source, source_step = nca(source_x, source_nc_rows)
    aligned_target, target_step = nca(target_x, target_nc_rows)
    task = train_localiser(aligned_source, source_y, k, weighting=weighting)
    task.in_domain_accuracy = cross_val_accuracy(aligned_source, source_y, k,
                                                 weighting=weighting)
    return (source_step, target_step), task, aligned_target
