"""Parametric families of structures: the continuum structure of the base
space.

A family is a fixed attributed-graph topology whose non-ground slots each
carry a six-parameter block (l, w, t, E, rho, nu); an instance is the
family plus a parameter vector inside an open box. Declared contractions
drive some parameters to zero to land on a lower-dimensional family's
boundary, which yields straight-line geodesics, midpoint interpolating
structures, and embeddings between families of different dimension.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    ConnectivityError,
    DomainError,
    InvalidInputError,
    NoPathError,
)
from .graphs import (
    ATTRIBUTE_NAMES,
    DECK,
    DEFAULT_PARAM_BOX,
    GROUND,
    PILLAR,
    AttributedGraph,
    ElementKind,
    IEVertex,
    kind_from_label,
)

PARAMS_PER_SLOT = len(ATTRIBUTE_NAMES)


@dataclass(frozen=True)
class ContractionSpec:
    """Declared route from this family onto another family's boundary:
    which parameters go to zero and how surviving slots correspond."""

    target: "FamilyTemplate"
    zero_set: tuple[str, ...]              # parameter names, e.g. "P2.l"
    correspondence: tuple[tuple[str, str], ...]  # (source slot, target slot)

    def __post_init__(self):
        object.__setattr__(self, "zero_set", tuple(self.zero_set))
        object.__setattr__(self, "correspondence",
                           tuple(dict(self.correspondence).items()))

    def correspondence_map(self) -> dict[str, str]:
        return dict(self.correspondence)

    def removed_slots(self) -> tuple[str, ...]:
        return tuple(sorted({name.split(".")[0] for name in self.zero_set}))


@dataclass(frozen=True)
class FamilyTemplate:
    """Family topology, parameter box and declared contractions.

    ``slots`` fixes the parameter ordering (slot-major, then the attribute
    block order), ``ground_attachments`` generates one ground vertex per
    entry, and ``sensors`` places named sensors on slots.
    """

    name: str
    slots: tuple[tuple[str, ElementKind], ...]
    slot_edges: tuple[tuple[str, str], ...]
    ground_attachments: tuple[str, ...]
    box: tuple[tuple[str, tuple[float, float]], ...] = ()
    sensors: tuple[tuple[str, str], ...] = ()
    contractions: tuple[ContractionSpec, ...] = ()

    def __post_init__(self):
        slot_ids = [sid for sid, _ in self.slots]
        if len(set(slot_ids)) != len(slot_ids):
            raise InvalidInputError("duplicate slot ids")
        for sid, kind in self.slots:
            if kind.is_ground:
                raise InvalidInputError("ground vertices are implicit, not slots")
        known = set(slot_ids)
        for a, b in self.slot_edges:
            if a not in known or b not in known:
                raise InvalidInputError(f"slot edge ({a!r}, {b!r}) references unknown slot")
        for slot in self.ground_attachments:
            if slot not in known:
                raise InvalidInputError(f"ground attachment on unknown slot {slot!r}")
        for _, slot in self.sensors:
            if slot not in known:
                raise InvalidInputError(f"sensor on unknown slot {slot!r}")
        object.__setattr__(self, "box", tuple(dict(self.box).items()))

    # -- parameter layout ---------------------------------------------------

    @property
    def dim(self) -> int:
        return PARAMS_PER_SLOT * len(self.slots)

    def slot_ids(self) -> tuple[str, ...]:
        return tuple(sid for sid, _ in self.slots)

    def slot_kind(self, slot_id: str) -> ElementKind:
        for sid, kind in self.slots:
            if sid == slot_id:
                return kind
        raise InvalidInputError(f"no slot {slot_id!r}")

    def param_names(self) -> tuple[str, ...]:
        return tuple(f"{sid}.{p}" for sid, _ in self.slots for p in ATTRIBUTE_NAMES)

    def param_index(self, slot_id: str, param: str) -> int:
        sids = self.slot_ids()
        if slot_id not in sids:
            raise InvalidInputError(f"no slot {slot_id!r}")
        if param not in ATTRIBUTE_NAMES:
            raise InvalidInputError(f"no parameter {param!r}")
        return sids.index(slot_id) * PARAMS_PER_SLOT + ATTRIBUTE_NAMES.index(param)

    def bounds(self, index: int) -> tuple[float, float]:
        slot = self.slot_ids()[index // PARAMS_PER_SLOT]
        param = ATTRIBUTE_NAMES[index % PARAMS_PER_SLOT]
        overrides = dict(self.box)
        if f"{slot}.{param}" in overrides:
            lo, hi = overrides[f"{slot}.{param}"]
        elif param in overrides:
            lo, hi = overrides[param]
        else:
            lo, hi = DEFAULT_PARAM_BOX[param]
        return float(lo), float(hi)

    @cached_property
    def box_lo(self) -> np.ndarray:
        return np.array([self.bounds(i)[0] for i in range(self.dim)])

    @cached_property
    def box_hi(self) -> np.ndarray:
        return np.array([self.bounds(i)[1] for i in range(self.dim)])

    @cached_property
    def widths(self) -> np.ndarray:
        return self.box_hi - self.box_lo

    def midpoint_theta(self) -> np.ndarray:
        return 0.5 * (self.box_lo + self.box_hi)

    @cached_property
    def contractible_indices(self) -> frozenset[int]:
        """Indices whose lower bound is relaxed to zero because a declared
        contraction drives them there."""
        out = set()
        for spec in self.contractions:
            for name in spec.zero_set:
                slot, param = name.split(".")
                out.add(self.param_index(slot, param))
        return frozenset(out)

    def contraction_to(self, target_name: str) -> ContractionSpec | None:
        for spec in self.contractions:
            if spec.target.name == target_name:
                return spec
        return None

    # -- validation -----------------------------------------------------------

    def match_boundary(self, theta: np.ndarray) -> ContractionSpec | None:
        """The declared contraction whose full zero set is hit by ``theta``'s
        zero coordinates, with any further zeros confined to removed slots;
        None for an interior vector. Raises DomainError otherwise."""
        zero = {i for i in range(self.dim) if theta[i] == 0.0}
        if not zero:
            return None
        names = self.param_names()
        for spec in self.contractions:
            zset = {self.param_index(*name.split(".")) for name in spec.zero_set}
            if not zset <= zero:
                continue
            removed = set(spec.removed_slots())
            stray = [i for i in zero - zset
                     if names[i].split(".")[0] not in removed]
            if not stray:
                return spec
        offending = names[min(zero)]
        raise DomainError(
            f"coordinate {offending} is zero but no declared contraction covers it")

    def validate_theta(self, theta) -> tuple[np.ndarray, ContractionSpec | None]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DomainError(
                f"theta has shape {theta.shape}, family {self.name!r} needs ({self.dim},)")
        boundary = self.match_boundary(theta)
        skip: set[int] = set()
        if boundary is not None:
            removed = set(boundary.removed_slots())
            skip = {i for i in range(self.dim)
                    if self.param_names()[i].split(".")[0] in removed}
        names = self.param_names()
        for i in range(self.dim):
            if i in skip:
                continue
            lo, hi = self.bounds(i)
            if i in self.contractible_indices:
                lo = 0.0  # contraction corridor: open at 0 instead of the box floor
            v = theta[i]
            if not (lo < v < hi) or not math.isfinite(v):
                raise DomainError(
                    f"coordinate {names[i]} = {v} outside ({lo}, {hi})")
        return theta, boundary


class StructureInstance:
    """One structure: a family plus a validated parameter vector."""

    def __init__(self, family: FamilyTemplate, theta):
        theta, boundary = family.validate_theta(theta)
        theta = theta.copy()
        theta.flags.writeable = False
        self.family = family
        self.theta = theta
        self._boundary = boundary

    @property
    def on_boundary(self) -> bool:
        return self._boundary is not None

    def block(self, slot_id: str) -> tuple[float, ...]:
        start = self.family.param_index(slot_id, ATTRIBUTE_NAMES[0])
        return tuple(self.theta[start: start + PARAMS_PER_SLOT])

    def with_theta(self, theta) -> "StructureInstance":
        return StructureInstance(self.family, theta)

    @cached_property
    def _graph(self) -> AttributedGraph:
        if self._boundary is not None:
            spec = self._boundary
            target_theta = _corresponded_theta(self.family, spec, self.theta)
            return StructureInstance(spec.target, target_theta).graph()
        slot_vertices = tuple(
            IEVertex(sid, kind, self.block(sid)) for sid, kind in self.family.slots)
        grounds = tuple(
            IEVertex(f"G{i + 1}", GROUND)
            for i in range(len(self.family.ground_attachments)))
        edges = set(self.family.slot_edges)
        for i, slot in enumerate(self.family.ground_attachments):
            edges.add((f"G{i + 1}", slot))
        return AttributedGraph(
            vertices=slot_vertices + grounds,
            edges=frozenset(edges),
            sensors=self.family.sensors)

    def graph(self) -> AttributedGraph:
        return self._graph

    def __repr__(self):
        return f"StructureInstance({self.family.name!r}, dim={self.family.dim})"


def instantiate(family: FamilyTemplate, theta) -> AttributedGraph:
    """Attributed graph for a family point; vertex ids come from slot ids.

    Interior vectors must sit strictly inside the box (contraction-declared
    coordinates may run below the floor, down to zero); a vector on a
    declared contraction boundary instantiates the target family's topology
    with the surviving slots' blocks.
    """
    return StructureInstance(family, theta).graph()


def theta_from_graph(family: FamilyTemplate, graph: AttributedGraph) -> np.ndarray:
    """Reconstruct the parameter vector from an instantiated graph."""
    values = []
    for sid, _ in family.slots:
        values.extend(graph.vertex(sid).attributes)
    return np.array(values)


def _corresponded_theta(src: FamilyTemplate, spec: ContractionSpec,
                        theta: np.ndarray) -> np.ndarray:
    """Target-family vector assembled from the surviving slots' blocks."""
    mapping = spec.correspondence_map()
    target = spec.target
    out = np.zeros(target.dim)
    for src_slot, dst_slot in mapping.items():
        for p in ATTRIBUTE_NAMES:
            out[target.param_index(dst_slot, p)] = theta[src.param_index(src_slot, p)]
    return out


# ---------------------------------------------------------------------------
# Canned families
# ---------------------------------------------------------------------------

def single_span_family() -> FamilyTemplate:
    """One deck pinned to ground at both ends; the closed-form beam case."""
    return FamilyTemplate(
        name="single_span_bridge",
        slots=(("D1", DECK),),
        slot_edges=(),
        ground_attachments=("D1", "D1"),
        sensors=(("s1", "D1"),),
    )


def two_span_family() -> FamilyTemplate:
    """Two ground-anchored decks joined at a grounded pillar junction;
    an 18-dimensional open box."""
    return FamilyTemplate(
        name="two_span_bridge",
        slots=(("D1", DECK), ("P1", PILLAR), ("D2", DECK)),
        slot_edges=(("D1", "P1"), ("P1", "D2"), ("D1", "D2")),
        ground_attachments=("D1", "P1", "D2"),
        sensors=(("s1", "D1"), ("s2", "D2")),
    )


def three_span_family() -> FamilyTemplate:
    """Three decks and two grounded pillars; a 30-dimensional open box with
    a declared contraction onto the two-span family (shrink the second
    pillar and third deck to zero length).

    Default instrumentation mirrors the two-span family (sensors on the two
    main spans), so fibres built over both families share channel layout.
    """
    return FamilyTemplate(
        name="three_span_bridge",
        slots=(("D1", DECK), ("P1", PILLAR), ("D2", DECK),
               ("P2", PILLAR), ("D3", DECK)),
        slot_edges=(("D1", "P1"), ("P1", "D2"), ("D1", "D2"),
                    ("D2", "P2"), ("P2", "D3"), ("D2", "D3")),
        ground_attachments=("D1", "P1", "P2", "D3"),
        sensors=(("s1", "D1"), ("s2", "D2")),
        contractions=(ContractionSpec(
            target=two_span_family(),
            zero_set=("P2.l", "D3.l"),
            correspondence=(("D1", "D1"), ("P1", "P1"), ("D2", "D2")),
        ),),
    )


# ---------------------------------------------------------------------------
# Contraction maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContractionMap:
    """Compiled, connectivity-checked contraction between two families."""

    source: FamilyTemplate
    target: FamilyTemplate
    zero_indices: tuple[int, ...]
    survivor_pairs: tuple[tuple[int, int], ...]  # (source index, target index)
    spectator_indices: tuple[int, ...]
    correspondence: tuple[tuple[str, str], ...]

    def target_theta(self, theta_src: np.ndarray) -> np.ndarray:
        out = np.zeros(self.target.dim)
        for si, ti in self.survivor_pairs:
            out[ti] = theta_src[si]
        return out

    def lift(self, theta_small: np.ndarray,
             spectators_from: np.ndarray | None = None) -> np.ndarray:
        """Source-family representative of a target-family vector: survivor
        coordinates copied, zeroed coordinates at 0, and removed slots'
        remaining parameters taken from ``spectators_from`` (zero when
        absent, matching the plain embedding convention)."""
        out = np.zeros(self.source.dim)
        for si, ti in self.survivor_pairs:
            out[si] = theta_small[ti]
        if spectators_from is not None:
            for i in self.spectator_indices:
                out[i] = spectators_from[i]
        return out


def _contracted_topology_connected(family: FamilyTemplate,
                                   spec: ContractionSpec) -> bool:
    """Apply length zeroes as junction collapses and material zeroes as
    vertex deletions on the slot/ground topology, then check the remainder
    stays connected with no stranded grounds."""
    nodes = set(family.slot_ids())
    grounds = [f"G{i + 1}" for i in range(len(family.ground_attachments))]
    nodes.update(grounds)
    adj: dict[str, set[str]] = {n: set() for n in nodes}

    def link(a, b):
        adj[a].add(b)
        adj[b].add(a)

    for a, b in family.slot_edges:
        link(a, b)
    for i, slot in enumerate(family.ground_attachments):
        link(f"G{i + 1}", slot)

    contracted = {name.split(".")[0] for name in spec.zero_set
                  if name.split(".")[1] == "l"}
    deleted = {name.split(".")[0] for name in spec.zero_set
               if name.split(".")[1] != "l"} - contracted

    for slot in sorted(contracted):
        neighbours = adj.pop(slot)
        for n in neighbours:
            adj[n].discard(slot)
        for a in neighbours:
            for b in neighbours:
                if a != b:
                    link(a, b)
    for slot in sorted(deleted):
        neighbours = adj.pop(slot)
        for n in neighbours:
            adj[n].discard(slot)

    if not adj:
        return False
    start = next(iter(sorted(adj)))
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(adj)


def contract(src: FamilyTemplate, dst: FamilyTemplate) -> ContractionMap:
    """Compile the declared contraction from src onto dst.

    Raises ConfigurationError when src declares no correspondence to dst
    and ConnectivityError when applying the declared zero set would
    disconnect the graph (e.g. zeroing a deck's material strands its
    ground instead of collapsing onto it).
    """
    spec = src.contraction_to(dst.name)
    if spec is None:
        raise ConfigurationError(
            f"family {src.name!r} declares no contraction onto {dst.name!r}")
    mapping = spec.correspondence_map()
    removed = set(spec.removed_slots())
    survivors = [sid for sid in src.slot_ids() if sid not in removed]
    if sorted(mapping) != sorted(survivors):
        raise ConfigurationError(
            "correspondence must cover exactly the surviving slots")
    if sorted(mapping.values()) != sorted(dst.slot_ids()):
        raise ConfigurationError(
            "correspondence must cover every target slot exactly once")
    for src_slot, dst_slot in mapping.items():
        if src.slot_kind(src_slot) != dst.slot_kind(dst_slot):
            raise ConfigurationError(
                f"slot {src_slot!r} and {dst_slot!r} differ in kind")
    if not _contracted_topology_connected(src, spec):
        raise ConnectivityError(
            f"contracting {spec.zero_set} disconnects the {src.name!r} graph")
    zero_indices = tuple(sorted(
        src.param_index(*name.split(".")) for name in spec.zero_set))
    survivor_pairs = tuple(
        (src.param_index(s, p), dst.param_index(mapping[s], p))
        for s in survivors for p in ATTRIBUTE_NAMES)
    spectators = tuple(sorted(
        set(range(src.dim))
        - set(zero_indices)
        - {si for si, _ in survivor_pairs}))
    return ContractionMap(
        source=src, target=dst, zero_indices=zero_indices,
        survivor_pairs=survivor_pairs, spectator_indices=spectators,
        correspondence=tuple(mapping.items()))


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingMap:
    """Injective linear map of a small family's parameters into a big
    family: corresponding coordinates copied, everything else zero."""

    small: FamilyTemplate
    big: FamilyTemplate
    contraction: ContractionMap

    @property
    def image_dim(self) -> int:
        return self.small.dim

    def apply(self, theta_small) -> np.ndarray:
        theta_small = np.asarray(theta_small, dtype=float)
        if theta_small.shape != (self.small.dim,):
            raise DomainError("theta has the wrong dimension for the small family")
        return self.contraction.lift(theta_small)

    def project(self, theta_big) -> np.ndarray:
        theta_big = np.asarray(theta_big, dtype=float)
        return self.contraction.target_theta(theta_big)


def embed(small: FamilyTemplate, big: FamilyTemplate) -> EmbeddingMap:
    """Embedding of the small family onto the big family's contraction
    boundary; requires the declared correspondence."""
    return EmbeddingMap(small=small, big=big, contraction=contract(big, small))


# ---------------------------------------------------------------------------
# Geodesics and interpolating structures
# ---------------------------------------------------------------------------

class GeodesicPath:
    """Straight line in the (possibly embedded) parameter space.

    Cross-family paths run in the bigger family's coordinates: contracted
    coordinates scale linearly to zero, surviving coordinates morph
    linearly, and the removed slots' remaining parameters hold the big
    endpoint's values, so the path is a genuine straight segment and the
    contracted endpoint is reproduced exactly.
    """

    def __init__(self, family: FamilyTemplate, theta0: np.ndarray,
                 theta1: np.ndarray, start: StructureInstance,
                 end: StructureInstance,
                 contraction: ContractionMap | None = None):
        self.family = family
        self.theta0 = np.asarray(theta0, dtype=float)
        self.theta1 = np.asarray(theta1, dtype=float)
        self._start = start
        self._end = end
        self.contraction = contraction

    @property
    def length(self) -> float:
        """Box-normalised Euclidean length in the common family."""
        return float(np.linalg.norm((self.theta1 - self.theta0) / self.family.widths))

    def theta_at(self, s: float) -> np.ndarray:
        if not (0.0 <= s <= 1.0):
            raise DomainError(f"path parameter {s} outside [0, 1]")
        return (1.0 - s) * self.theta0 + s * self.theta1

    def point_at(self, s: float) -> StructureInstance:
        if s == 0.0:
            return self._start
        if s == 1.0:
            return self._end
        return StructureInstance(self.family, self.theta_at(s))


def geodesic(a: StructureInstance, b: StructureInstance) -> GeodesicPath:
    """Straight-line path with point_at(0) = a and point_at(1) = b.

    Same-family endpoints interpolate directly; otherwise one family must
    declare a contraction onto the other, and the path runs down (or up)
    that contraction corridor.
    """
    if a.family.name == b.family.name:
        return GeodesicPath(a.family, a.theta, b.theta, a, b)
    if a.family.contraction_to(b.family.name) is not None:
        cmap = contract(a.family, b.family)
        lifted = cmap.lift(b.theta, spectators_from=a.theta)
        return GeodesicPath(a.family, a.theta, lifted, a, b, contraction=cmap)
    if b.family.contraction_to(a.family.name) is not None:
        cmap = contract(b.family, a.family)
        lifted = cmap.lift(a.theta, spectators_from=b.theta)
        return GeodesicPath(b.family, lifted, b.theta, a, b, contraction=cmap)
    raise NoPathError(
        f"no family relation between {a.family.name!r} and {b.family.name!r}")


def interpolating_structure(s_s: StructureInstance,
                            s_t: StructureInstance) -> StructureInstance:
    """Midpoint of the geodesic: the simulated structure that splits one
    long transfer into two short ones."""
    return geodesic(s_s, s_t).point_at(0.5)


def family_distance(a: StructureInstance, b: StructureInstance) -> float:
    """Box-normalised Euclidean distance in the common (embedded) family.

    Cross-family distances match the removed slots' spectator parameters to
    the big endpoint, i.e. the distance to the nearest representative of
    the contracted structure, which keeps midpoint additivity exact.
    """
    return geodesic(a, b).length


# ---------------------------------------------------------------------------
# Family files
# ---------------------------------------------------------------------------

def family_to_dict(family: FamilyTemplate) -> dict:
    return {
        "name": family.name,
        "slots": [{"id": sid, "kind": kind.label()} for sid, kind in family.slots],
        "edges": [list(e) for e in family.slot_edges],
        "ground_attachments": list(family.ground_attachments),
        "box": {key: list(bounds) for key, bounds in family.box},
        "sensors": {s: slot for s, slot in family.sensors},
        "contractions": [
            {
                "target": spec.target.name,
                "zero_set": list(spec.zero_set),
                "correspondence": spec.correspondence_map(),
            }
            for spec in family.contractions
        ],
    }


def family_from_dict(doc: dict,
                     targets: dict[str, FamilyTemplate] | None = None) -> FamilyTemplate:
    targets = targets or {}
    try:
        contractions = []
        for entry in doc.get("contractions", ()):
            target_name = entry["target"]
            if target_name not in targets:
                raise ConfigurationError(
                    f"contraction target {target_name!r} not supplied")
            contractions.append(ContractionSpec(
                target=targets[target_name],
                zero_set=tuple(entry["zero_set"]),
                correspondence=tuple(entry["correspondence"].items())))
        return FamilyTemplate(
            name=doc["name"],
            slots=tuple((s["id"], kind_from_label(s["kind"])) for s in doc["slots"]),
            slot_edges=tuple((a, b) for a, b in doc.get("edges", ())),
            ground_attachments=tuple(doc.get("ground_attachments", ())),
            box=tuple((k, tuple(v)) for k, v in doc.get("box", {}).items()),
            sensors=tuple(doc.get("sensors", {}).items()),
            contractions=tuple(contractions),
        )
    except KeyError as exc:
        raise InvalidInputError(f"family document missing key {exc}") from None


def save_family(family: FamilyTemplate, path: str | Path) -> None:
    Path(path).write_text(json.dumps(family_to_dict(family), indent=2) + "\n")


def load_family(path: str | Path,
                targets: dict[str, FamilyTemplate] | None = None) -> FamilyTemplate:
    return family_from_dict(json.loads(Path(path).read_text()), targets)


BUILTIN_FAMILIES = {
    "single_span_bridge": single_span_family,
    "two_span_bridge": two_span_family,
    "three_span_bridge": three_span_family,
}


def builtin_family(name: str) -> FamilyTemplate:
    try:
        return BUILTIN_FAMILIES[name]()
    except KeyError:
        raise ConfigurationError(f"no built-in family {name!r}") from None
