"""Finite-element oracle that populates fibres with physically plausible
features.

Bridge instances assemble into a 1-D chain model: each deck becomes a run
of Euler-Bernoulli beam elements (transverse displacement and rotation per
node, cubic shape functions, consistent mass), each pillar a grounded
axial spring at its junction node, and ground-attached deck ends are
pinned. Natural frequencies come from the dense symmetric-definite
generalized eigenproblem; synthetic records are damped modal sums with
seeded broadband amplitudes plus Gaussian noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import (
    InvalidInputError,
    InvalidTargetError,
    ModelError,
    SamplingError,
    UnsupportedModelError,
)
from .families import StructureInstance
from .fibre import Fibre
from .graphs import ATTRIBUTE_NAMES
from .operators import o_demean, o_modal_peaks, o_welch

_IDX_L = ATTRIBUTE_NAMES.index("l")
_IDX_W = ATTRIBUTE_NAMES.index("w")
_IDX_T = ATTRIBUTE_NAMES.index("t")
_IDX_E = ATTRIBUTE_NAMES.index("E")
_IDX_RHO = ATTRIBUTE_NAMES.index("rho")

# Fractional position of a deck sensor along its span; off mid-span so no
# low mode has a node at the sensor.
SENSOR_SPAN_FRACTION = 0.4


@dataclass(frozen=True)
class BridgeModel:
    """Assembled chain model after boundary conditions.

    K and M act on the free DOFs only; bookkeeping maps slots to their
    element ranges and sensors to free translation DOFs.
    """

    node_x: np.ndarray
    stiffness: np.ndarray
    mass: np.ndarray
    slot_elements: dict[str, tuple[int, int]]
    pillar_springs: dict[str, tuple[int, float]]
    sensor_nodes: dict[str, int]
    sensor_dofs: dict[str, int]

    @property
    def n_dof(self) -> int:
        return self.stiffness.shape[0]


@dataclass(frozen=True)
class ModalResult:
    """Ascending natural frequencies [Hz] and mass-normalised mode shapes
    sampled at the sensor DOFs (sensors x modes)."""

    frequencies: np.ndarray
    sensor_shapes: np.ndarray
    sensor_ids: tuple[str, ...]


@dataclass(frozen=True)
class DamageState:
    """Bulk stiffness reduction on one slot: E -> (1 - severity) * E."""

    slot_id: str
    severity: float

    def __post_init__(self):
        if not (0.0 <= self.severity < 1.0):
            raise InvalidTargetError("damage severity must lie in [0, 1)")


@dataclass(frozen=True)
class SynthesisConfig:
    """Record-synthesis controls; identical seeds reproduce identical
    records.

    ``stiffness_jitter`` is the per-acquisition std of a global stiffness
    multiplier (temperature-like wobble): every natural frequency scales by
    the exact sqrt of the drawn multiplier, giving healthy-state feature
    scatter a physical magnitude proportional to frequency.
    """

    zeta: float = 0.01
    noise_std: float = 0.0
    seed: int = 0
    amp_range: tuple[float, float] = (0.5, 1.5)
    stiffness_jitter: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.zeta < 0.2):
            raise InvalidInputError("damping ratio must lie in (0, 0.2)")
        if self.noise_std < 0.0:
            raise InvalidInputError("noise_std must be >= 0")
        if not (0.0 <= self.stiffness_jitter < 0.1):
            raise InvalidInputError("stiffness_jitter must lie in [0, 0.1)")


def _beam_element(ei: float, mu: float, h: float):
    """Stiffness and consistent-mass matrices of one Hermitian beam element
    of length h, flexural rigidity ei and mass per length mu."""
    k = (ei / h**3) * np.array([
        [12.0, 6.0 * h, -12.0, 6.0 * h],
        [6.0 * h, 4.0 * h**2, -6.0 * h, 2.0 * h**2],
        [-12.0, -6.0 * h, 12.0, -6.0 * h],
        [6.0 * h, 2.0 * h**2, -6.0 * h, 4.0 * h**2],
    ])
    m = (mu * h / 420.0) * np.array([
        [156.0, 22.0 * h, 54.0, -13.0 * h],
        [22.0 * h, 4.0 * h**2, 13.0 * h, -3.0 * h**2],
        [54.0, 13.0 * h, 156.0, -22.0 * h],
        [-13.0 * h, -3.0 * h**2, -22.0 * h, 4.0 * h**2],
    ])
    return k, m


def _deck_chain(graph):
    """Order the deck slots into the longitudinal chain and locate the
    pillar at each internal junction."""
    decks = sorted(v.id for v in graph.vertices if v.kind.tag == "deck")
    pillars = [v.id for v in graph.vertices if v.kind.tag == "pillar"]
    others = [v for v in graph.vertices
              if v.kind.tag not in ("deck", "pillar", "ground")]
    if others or not decks:
        kinds = sorted({v.kind.label() for v in graph.vertices})
        raise UnsupportedModelError(
            f"bridge model needs deck/pillar/ground kinds only, got {kinds}")
    deck_adj = {d: [n for n in graph.neighbours(d) if n in decks] for d in decks}
    if len(decks) == 1:
        chain = decks
    else:
        ends = sorted(d for d, nbrs in deck_adj.items() if len(nbrs) == 1)
        if len(ends) != 2 or any(len(n) > 2 for n in deck_adj.values()):
            raise UnsupportedModelError("deck adjacency must form a simple chain")
        chain = [ends[0]]
        while len(chain) < len(decks):
            nxt = [n for n in deck_adj[chain[-1]] if n not in chain]
            if not nxt:
                raise UnsupportedModelError("deck adjacency must form a simple chain")
            chain.append(nxt[0])
    junction_pillars: list[str | None] = []
    used = set()
    for left, right in zip(chain, chain[1:]):
        found = None
        for p in pillars:
            nbrs = set(graph.neighbours(p))
            if left in nbrs and right in nbrs:
                found = p
                used.add(p)
                break
        junction_pillars.append(found)
    stray = set(pillars) - used
    if stray:
        raise UnsupportedModelError(
            f"pillars {sorted(stray)} are not at deck-deck junctions")
    grounded = {v.id for v in graph.vertices if v.kind.tag == "ground"}
    def touches_ground(slot):
        return any(n in grounded for n in graph.neighbours(slot))
    if not touches_ground(chain[0]) or not touches_ground(chain[-1]):
        raise UnsupportedModelError("outer deck ends must be ground-attached")
    for p in used:
        if not touches_ground(p):
            raise UnsupportedModelError(f"pillar {p!r} has no ground attachment")
    return chain, junction_pillars


def assemble(inst: StructureInstance, *, n_e: int = 8,
             pillar_mass: str = "none") -> BridgeModel:
    """Build the chain finite-element model of a bridge instance.

    Each deck contributes n_e beam elements with EI = E*w*t^3/12 and mass
    per length rho*w*t; each junction pillar a grounded spring k = E*w*t/l
    (massless by default, 'half' lumps half its mass at the junction).
    Slots contracted to zero length contribute nothing: the instantiated
    graph has already removed them.
    """
    if n_e < 1:
        raise InvalidInputError("n_e must be >= 1")
    graph = inst.graph()
    chain, junction_pillars = _deck_chain(graph)

    node_x = [0.0]
    slot_elements: dict[str, tuple[int, int]] = {}
    per_element = []
    deck_start_node: dict[str, int] = {}
    longest = max(graph.vertex(d).attributes[_IDX_L] for d in chain)
    for deck_id in chain:
        attrs = graph.vertex(deck_id).attributes
        length, width, thickness = attrs[_IDX_L], attrs[_IDX_W], attrs[_IDX_T]
        ei = attrs[_IDX_E] * width * thickness**3 / 12.0
        mu = attrs[_IDX_RHO] * width * thickness
        start = len(per_element)
        deck_start_node[deck_id] = len(node_x) - 1
        # decks much shorter than the longest span are quasi-static in the
        # modal band; coarsen their mesh so tiny elements cannot wreck the
        # eigensolve's conditioning
        n_e_deck = max(1, min(n_e, math.ceil(4.0 * n_e * length / longest)))
        h = length / n_e_deck
        for _ in range(n_e_deck):
            per_element.append((ei, mu, h))
            node_x.append(node_x[-1] + h)
        slot_elements[deck_id] = (start, len(per_element))

    n_nodes = len(node_x)
    n_dof = 2 * n_nodes
    stiffness = np.zeros((n_dof, n_dof))
    mass = np.zeros((n_dof, n_dof))
    for e, (ei, mu, h) in enumerate(per_element):
        k_e, m_e = _beam_element(ei, mu, h)
        dofs = np.arange(2 * e, 2 * e + 4)
        stiffness[np.ix_(dofs, dofs)] += k_e
        mass[np.ix_(dofs, dofs)] += m_e

    pillar_springs: dict[str, tuple[int, float]] = {}
    junction_nodes = [deck_start_node[d] for d in chain[1:]]
    for pillar_id, node in zip(junction_pillars, junction_nodes):
        if pillar_id is None:
            continue
        attrs = graph.vertex(pillar_id).attributes
        k = attrs[_IDX_E] * attrs[_IDX_W] * attrs[_IDX_T] / attrs[_IDX_L]
        stiffness[2 * node, 2 * node] += k
        if pillar_mass == "half":
            half = 0.5 * attrs[_IDX_RHO] * attrs[_IDX_W] * attrs[_IDX_T] * attrs[_IDX_L]
            mass[2 * node, 2 * node] += half
        elif pillar_mass != "none":
            raise InvalidInputError("pillar_mass must be 'none' or 'half'")
        pillar_springs[pillar_id] = (node, k)

    # pinned supports: translation fixed, rotation free, at both outer ends
    fixed = {0, 2 * (n_nodes - 1)}
    free = np.array(sorted(set(range(n_dof)) - fixed))
    full_to_free = {dof: i for i, dof in enumerate(free)}

    sensor_nodes: dict[str, int] = {}
    sensor_dofs: dict[str, int] = {}
    for sensor_id, vertex_id in graph.sensors:
        vertex = graph.vertex(vertex_id)
        if vertex.kind.tag == "deck":
            node = deck_start_node[vertex_id] + round(SENSOR_SPAN_FRACTION * n_e)
        elif vertex.kind.tag == "pillar":
            node = pillar_springs[vertex_id][0]
        else:
            raise UnsupportedModelError(
                f"sensor {sensor_id!r} sits on kind {vertex.kind.label()!r}")
        dof = 2 * node
        if dof not in full_to_free:
            raise UnsupportedModelError(f"sensor {sensor_id!r} sits on a fixed DOF")
        sensor_nodes[sensor_id] = node
        sensor_dofs[sensor_id] = full_to_free[dof]

    return BridgeModel(
        node_x=np.array(node_x),
        stiffness=stiffness[np.ix_(free, free)],
        mass=mass[np.ix_(free, free)],
        slot_elements=slot_elements,
        pillar_springs=pillar_springs,
        sensor_nodes=sensor_nodes,
        sensor_dofs=sensor_dofs,
    )


def natural_frequencies(model: BridgeModel, n: int) -> ModalResult:
    """Smallest n generalized symmetric eigenpairs of (K, M) as frequencies
    [Hz] with mass-normalised shapes sampled at the sensor DOFs."""
    if not (1 <= n <= model.n_dof):
        raise InvalidInputError(f"mode count {n} outside [1, {model.n_dof}]")
    try:
        np.linalg.cholesky(model.mass)
    except np.linalg.LinAlgError:
        raise ModelError("mass matrix is not positive definite") from None
    values, vectors = eigh(model.stiffness, model.mass,
                           subset_by_index=(0, n - 1))
    freqs = np.sqrt(np.maximum(values, 0.0)) / (2.0 * np.pi)
    sensor_ids = tuple(sorted(model.sensor_dofs))
    rows = [vectors[model.sensor_dofs[s], :] for s in sensor_ids]
    shapes = np.array(rows) if rows else np.zeros((0, n))
    return ModalResult(frequencies=freqs, sensor_shapes=shapes,
                       sensor_ids=sensor_ids)


def apply_damage(inst: StructureInstance, damage: DamageState) -> StructureInstance:
    """New instance with the slot's Young's modulus scaled by (1 - severity).

    The result is a valid family member: a damaged structure is coordinate-
    identical to an undamaged structure with the reduced modulus.
    """
    family = inst.family
    if damage.slot_id not in family.slot_ids():
        raise InvalidTargetError(f"no slot {damage.slot_id!r} to damage")
    if damage.severity == 0.0:
        return inst
    theta = inst.theta.copy()
    idx = family.param_index(damage.slot_id, "E")
    theta[idx] = theta[idx] * (1.0 - damage.severity)
    return StructureInstance(family, theta)


def synthesize_timeseries(model: BridgeModel, modal: ModalResult,
                          cfg: SynthesisConfig, n_t: int, f_s: float,
                          *, seed: int | None = None) -> dict[str, np.ndarray]:
    """Per-sensor records: damped modal cosine sums with seeded broadband
    amplitudes and phases, plus Gaussian noise scaled to each record's RMS.
    """
    if n_t < 64:
        raise InvalidInputError("records need at least 64 samples")
    f_max = float(np.max(modal.frequencies))
    if f_s <= 2.0 * f_max:
        raise SamplingError(
            f"sampling rate {f_s} Hz violates the Nyquist guard for {f_max:.3f} Hz")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n_modes = len(modal.frequencies)
    amps = rng.uniform(*cfg.amp_range, n_modes)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_modes)
    t = np.arange(n_t) / f_s
    omegas = 2.0 * np.pi * modal.frequencies
    records: dict[str, np.ndarray] = {}
    for row, sensor_id in enumerate(modal.sensor_ids):
        clean = np.zeros(n_t)
        for m in range(n_modes):
            envelope = np.exp(-cfg.zeta * omegas[m] * t)
            clean += (modal.sensor_shapes[row, m] * amps[m]
                      * envelope * np.cos(omegas[m] * t + phases[m]))
        if cfg.noise_std > 0.0:
            rms = float(np.sqrt(np.mean(clean**2)))
            clean = clean + rng.normal(0.0, cfg.noise_std * rms, n_t)
        records[sensor_id] = clean
    return records


STANDARD_CHAIN = ("demean", "welch", "modal_peaks")


def populate_fibre(inst: StructureInstance,
                   conditions: list[tuple[object, DamageState | None]],
                   n_r: int, cfg: SynthesisConfig, *,
                   n_t: int = 2048, f_s: float = 128.0, n_w: int = 512,
                   n_peaks: int = 4, n_modes: int = 4, n_e: int = 8,
                   delta_tau: float = 600.0,
                   structure_id: str = "sim") -> tuple[Fibre, np.ndarray]:
    """Simulate a monitoring campaign into a fresh fibre.

    For every condition and each of its n_r acquisitions: apply the damage,
    assemble, solve, synthesize per-sensor raw records and ingest them;
    then run the standard feature chain demean -> welch(n_w) ->
    modal_peaks(n_peaks). Returns the fibre and the per-acquisition label
    array (conditions in order, n_r acquisitions each).
    """
    if not conditions:
        raise InvalidInputError("at least one condition is required")
    sensors = sorted(inst.graph().sensor_map())
    if not sensors:
        raise UnsupportedModelError("instance has no sensors")
    channels = {j: sensor_id for j, sensor_id in enumerate(sensors)}
    n_acq = len(conditions) * n_r
    fibre = Fibre(structure_id, n_s=len(sensors), n_t=n_t, n_r=n_acq,
                  f_s=f_s, delta_tau=delta_tau, channels=channels)
    labels = []
    for c, (label, damage) in enumerate(conditions):
        damaged = inst if damage is None else apply_damage(inst, damage)
        model = assemble(damaged, n_e=n_e)
        modal = natural_frequencies(model, n_modes)
        for r in range(n_r):
            k = c * n_r + r
            acq_modal = modal
            if cfg.stiffness_jitter > 0.0:
                # bounded multiplier (uniform, std = stiffness_jitter): a
                # global E wobble scales every frequency by its exact square
                # root; mass-normalised shapes are unchanged
                jitter_rng = np.random.default_rng((cfg.seed, 7919, k))
                half_width = math.sqrt(3.0) * cfg.stiffness_jitter
                multiplier = 1.0 + float(jitter_rng.uniform(-half_width, half_width))
                acq_modal = ModalResult(
                    frequencies=modal.frequencies * np.sqrt(multiplier),
                    sensor_shapes=modal.sensor_shapes,
                    sensor_ids=modal.sensor_ids)
            records = synthesize_timeseries(
                model, acq_modal, cfg, n_t, f_s, seed=(cfg.seed, k))
            for j, sensor_id in channels.items():
                fibre.ingest(j, k, records[sensor_id], start_time=k * delta_tau)
            labels.append(label)
    m = fibre.apply_operator(0, o_demean())
    m = fibre.apply_operator(m, o_welch(n_w))
    fibre.apply_operator(m, o_modal_peaks(n_peaks))
    return fibre, np.array(labels)


@dataclass(frozen=True)
class ModalFeatureOracle:
    """Simulation backend handed to the transfer layer: normal-condition
    feature samples for any family instance, reproducible per seed."""

    n_records: int = 30
    n_t: int = 4096
    f_s: float = 256.0
    n_w: int = 1024
    n_peaks: int = 4
    n_modes: int = 4
    n_e: int = 8
    zeta: float = 0.005
    noise_std: float = 0.02
    stiffness_jitter: float = 0.01
    healthy_label: object = 0

    def simulate(self, inst: StructureInstance,
                 conditions: list[tuple[object, DamageState | None]],
                 seed: int, structure_id: str = "sim") -> tuple[Fibre, np.ndarray]:
        cfg = SynthesisConfig(zeta=self.zeta, noise_std=self.noise_std,
                              seed=seed, stiffness_jitter=self.stiffness_jitter)
        return populate_fibre(
            inst, conditions, self.n_records, cfg, n_t=self.n_t, f_s=self.f_s,
            n_w=self.n_w, n_peaks=self.n_peaks, n_modes=self.n_modes,
            n_e=self.n_e, structure_id=structure_id)

    def feature_stratum(self, fibre: Fibre) -> int:
        from .fibre import find_stratum
        return find_stratum(fibre, STANDARD_CHAIN)

    def nc_features(self, inst: StructureInstance, seed: int) -> np.ndarray:
        """Healthy-condition feature rows, one per (acquisition, channel)."""
        fibre, _ = self.simulate(inst, [(self.healthy_label, None)], seed)
        features, _ = fibre.feature_matrix(self.feature_stratum(fibre))
        return features

    def modal_frequencies(self, inst: StructureInstance) -> np.ndarray:
        """Noiseless first-n_peaks frequencies straight from the eigensolve."""
        model = assemble(inst, n_e=self.n_e)
        return natural_frequencies(model, self.n_peaks).frequencies
