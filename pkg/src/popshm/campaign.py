"""Campaign runners: build simulated populations, run pairwise transfer
experiments, and collect calibration curves.

Everything here is deterministic under a single campaign seed: structure
perturbations, fibre simulation and the per-pair map-construction seeds all
derive from it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NoPathError
from .families import (
    StructureInstance,
    builtin_family,
    family_distance,
    geodesic,
    three_span_family,
    two_span_family,
)
from .graphs import Population, graph_distance
from .physics import DamageState, ModalFeatureOracle
from .transfer import (
    TransferReport,
    cross_val_accuracy,
    ddt_map,
    domain_adaptation_baseline,
    evaluate_transfer,
    train_localiser,
    two_step_transfer,
)

HEALTHY_LABEL = 0

# Desk-scale baseline bridges: concrete decks on slender pillars, natural
# frequencies a few Hz, comfortably inside the synthesis Nyquist band.
B2_BASE_THETA = np.array([
    20.0, 5.0, 1.0, 3.0e10, 2500.0, 0.2,    # D1
    8.0, 0.35, 0.35, 3.0e10, 2500.0, 0.2,   # P1
    24.0, 5.0, 1.0, 3.0e10, 2500.0, 0.2,    # D2
])
B3_BASE_THETA = np.array([
    20.0, 5.0, 1.0, 3.0e10, 2500.0, 0.2,    # D1
    8.0, 0.35, 0.35, 3.0e10, 2500.0, 0.2,   # P1
    24.0, 5.0, 1.0, 3.0e10, 2500.0, 0.2,    # D2
    8.0, 0.35, 0.35, 3.0e10, 2500.0, 0.2,   # P2
    8.0, 5.0, 1.0, 3.0e10, 2500.0, 0.2,     # D3: short and stiff, so the first
])                                           # four modes rank like the two-span's

# Damage localisation label scheme: healthy = 0, damage in element i = i,
# on the slots shared by both families under the declared correspondence.
LOCALISATION_SLOTS = ("D1", "P1", "D2")


def standard_conditions(delta: float = 0.25):
    conditions = [(HEALTHY_LABEL, None)]
    conditions += [(i + 1, DamageState(slot, delta))
                   for i, slot in enumerate(LOCALISATION_SLOTS)]
    return conditions


def perturbed_theta(base: np.ndarray, rng, fraction: float) -> np.ndarray:
    return base * (1.0 + rng.uniform(-fraction, fraction, base.shape))


def pairwise_perturbation(a: StructureInstance, b: StructureInstance,
                          base: np.ndarray) -> float:
    """Largest per-coordinate relative difference, measured against the
    campaign base point."""
    return float(np.max(np.abs(a.theta - b.theta) / base))


def build_standard_population(seed: int, oracle: ModalFeatureOracle, *,
                              n_b2: int = 12, perturbation: float = 0.05,
                              delta: float = 0.25,
                              include_b3: bool = True) -> Population:
    """The standard desk-scale campaign population: n_b2 two-span instances
    perturbed around the base point plus one three-span instance, each with
    a fully simulated labelled fibre."""
    population = Population()
    b2 = two_span_family()
    rng = np.random.default_rng(seed)
    conditions = standard_conditions(delta)
    for i in range(n_b2):
        theta = B2_BASE_THETA if i == 0 else perturbed_theta(
            B2_BASE_THETA, rng, perturbation)
        inst = StructureInstance(b2, theta)
        sid = f"b2_{i:03d}"
        fibre, labels = oracle.simulate(inst, conditions, seed=seed + 100 + i,
                                        structure_id=sid)
        population.add(sid, inst.graph(), provenance="simulated",
                       instance=inst, fibre=fibre, labels=labels)
    if include_b3:
        inst = StructureInstance(three_span_family(), B3_BASE_THETA)
        fibre, labels = oracle.simulate(inst, conditions,
                                        seed=seed + 100 + n_b2,
                                        structure_id="b3_000")
        population.add("b3_000", inst.graph(), provenance="simulated",
                       instance=inst, fibre=fibre, labels=labels)
    return population


def member_dataset(member, oracle: ModalFeatureOracle):
    """(view, features, labels) triple for one population member."""
    fibre = member.fibre
    stratum = oracle.feature_stratum(fibre)
    features, cells = fibre.feature_matrix(stratum)
    labels = np.array([member.labels[k] for (_, k) in cells])
    nc_rows = np.nonzero(labels == HEALTHY_LABEL)[0]
    return (fibre, stratum, nc_rows), features, labels


@dataclass
class PairOutcome:
    """One row of a transfer campaign."""

    report: TransferReport
    theta_gap: float = float("nan")

    @property
    def source_id(self):
        return self.report.source_id

    @property
    def target_id(self):
        return self.report.target_id


def run_pair(population: Population, source_id: str, target_id: str, *,
             oracle: ModalFeatureOracle, steps: int = 4, seed: int = 0,
             k: int = 3, weighting: str = "distance",
             in_domain_cache: dict | None = None) -> PairOutcome:
    """One direct-domain-transfer experiment: train on the source, map the
    target along the geodesic, report raw / mapped / DA / in-domain
    accuracies."""
    source = population.member(source_id)
    target = population.member(target_id)
    if source.instance is None or target.instance is None:
        raise NoPathError("transfer pairs need family instances")
    s_view, s_x, s_y = member_dataset(source, oracle)
    t_view, t_x, t_y = member_dataset(target, oracle)

    path = geodesic(target.instance, source.instance)
    tmap = ddt_map(s_view, t_view, path, steps=steps, oracle=oracle, seed=seed)

    task = train_localiser(s_x, s_y, k, weighting=weighting)
    if in_domain_cache is not None and source_id in in_domain_cache:
        task.in_domain_accuracy = in_domain_cache[source_id]
    else:
        task.in_domain_accuracy = cross_val_accuracy(s_x, s_y, k,
                                                     weighting=weighting)
        if in_domain_cache is not None:
            in_domain_cache[source_id] = task.in_domain_accuracy

    length = path.length
    report = evaluate_transfer(
        task, tmap, t_x, t_y, source_id=source_id, target_id=target_id,
        distance=graph_distance(source.graph, target.graph),
        path_length=length,
        leg_distances=tuple([length / steps] * steps))
    _, da_task, aligned_target = domain_adaptation_baseline(
        s_x, s_y, s_view[2], t_x, t_view[2], k=k, weighting=weighting)
    report.da_accuracy = float(np.mean(da_task.predict(aligned_target) == t_y))

    gap = float("nan")
    if source.instance.family.name == target.instance.family.name:
        base = B2_BASE_THETA if source.instance.family.dim == 18 else None
        if base is not None:
            gap = pairwise_perturbation(source.instance, target.instance, base)
    return PairOutcome(report=report, theta_gap=gap)


def run_transfer_campaign(population: Population, pairs, *,
                          oracle: ModalFeatureOracle, steps: int = 4,
                          seed: int = 0, k: int = 3,
                          weighting: str = "distance",
                          use_interpolator: bool = False,
                          jobs: int = 1) -> list[PairOutcome]:
    """Run every (source, target) pair, deterministically ordered and
    seeded; optionally route each pair through its interpolating structure.
    """
    pairs = sorted((str(s), str(t)) for s, t in pairs)
    cache: dict = {}
    outcomes: dict[tuple[str, str], PairOutcome] = {}

    def one(index_pair):
        index, (sid, tid) = index_pair
        pair_seed = seed + 10_000 + 100 * index
        if use_interpolator:
            report = two_step_transfer(
                population, sid, tid, oracle=oracle, steps=steps,
                seed=pair_seed, k=k, weighting=weighting)
            return (sid, tid), PairOutcome(report=report)
        return (sid, tid), run_pair(
            population, sid, tid, oracle=oracle, steps=steps, seed=pair_seed,
            k=k, weighting=weighting, in_domain_cache=cache)

    if jobs > 1 and not use_interpolator:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for key, outcome in pool.map(one, enumerate(pairs)):
                outcomes[key] = outcome
    else:
        for item in enumerate(pairs):
            key, outcome = one(item)
            outcomes[key] = outcome
    return [outcomes[key] for key in sorted(outcomes)]


def accuracy_distance_pairs(outcomes) -> list[tuple[float, float]]:
    return [(o.report.distance, o.report.mapped_accuracy) for o in outcomes]


# ---------------------------------------------------------------------------
# Simulation campaign configuration (CLI surface)
# ---------------------------------------------------------------------------

@dataclass
class SimulationCampaign:
    """Parsed simulate-campaign configuration."""

    family_name: str
    thetas: list[np.ndarray]
    structure_ids: list[str]
    conditions: list
    n_r: int
    n_t: int = 2048
    f_s: float = 128.0
    n_w: int = 512
    noise_std: float = 0.02
    zeta: float = 0.01
    seed: int = 0
    n_e: int = 8

    def oracle(self) -> ModalFeatureOracle:
        return ModalFeatureOracle(
            n_records=self.n_r, n_t=self.n_t, f_s=self.f_s, n_w=self.n_w,
            n_e=self.n_e, zeta=self.zeta, noise_std=self.noise_std,
            healthy_label=HEALTHY_LABEL)


def _parse_conditions(docs) -> list:
    conditions = []
    for doc in docs:
        label = doc["label"]
        if doc.get("slot") is None:
            conditions.append((label, None))
        else:
            conditions.append((label, DamageState(doc["slot"], float(doc["delta"]))))
    return conditions


def simulation_campaign_from_dict(doc: dict, *, seed: int | None = None) -> SimulationCampaign:
    try:
        family_name = doc["family"]
        family = builtin_family(family_name)
        base_seed = int(doc.get("seed", 0) if seed is None else seed)
        if "theta" in doc:
            thetas = [np.asarray(doc["theta"], dtype=float)]
            ids = [doc.get("id", f"{family_name}_000")]
        elif "sampling" in doc:
            sampling = doc["sampling"]
            count = int(sampling["count"])
            fraction = float(sampling.get("perturbation", 0.05))
            base = np.asarray(sampling["base_theta"], dtype=float)
            rng = np.random.default_rng(base_seed)
            thetas = [base if i == 0 else perturbed_theta(base, rng, fraction)
                      for i in range(count)]
            ids = [f"{family_name}_{i:03d}" for i in range(count)]
        else:
            raise InvalidInputError("campaign needs 'theta' or 'sampling'")
        if any(len(t) != family.dim for t in thetas):
            raise InvalidInputError(
                f"theta dimension must be {family.dim} for family {family_name!r}")
        return SimulationCampaign(
            family_name=family_name,
            thetas=thetas,
            structure_ids=ids,
            conditions=_parse_conditions(doc["conditions"]),
            n_r=int(doc["n_r"]),
            n_t=int(doc.get("n_t", 2048)),
            f_s=float(doc.get("f_s", 128.0)),
            n_w=int(doc.get("n_w", 512)),
            noise_std=float(doc.get("noise_std", 0.02)),
            zeta=float(doc.get("zeta", 0.01)),
            seed=base_seed,
            n_e=int(doc.get("n_e", 8)),
        )
    except KeyError as exc:
        raise InvalidInputError(f"campaign config missing key {exc}") from None
