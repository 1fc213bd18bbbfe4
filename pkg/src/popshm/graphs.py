"""Attributed-graph representation of structures and the base-space metric.

Structures are irreducible-element models: labelled vertices (element kind
plus a physical attribute block) joined by adjacency edges, with sensors
attached to vertices. The metric between two structures combines a
topological term from the maximum common induced subgraph with a
box-normalised Euclidean term over the matched attribute blocks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import InvalidInputError, NotFoundError

# Ordered physical attribute block carried by every non-ground element:
# length, width, thickness [m], Young's modulus [Pa], density [kg/m^3],
# Poisson ratio [-].
ATTRIBUTE_NAMES = ("l", "w", "t", "E", "rho", "nu")

# Default open parameter intervals for civil-structure magnitudes. Families
# may override per slot; these also supply the per-dimension scaling that
# makes the Euclidean attribute metric unit-free.
DEFAULT_PARAM_BOX = {
    "l": (1.0, 100.0),
    "w": (0.1, 30.0),
    "t": (0.05, 5.0),
    "E": (1.0e9, 5.0e11),
    "rho": (500.0, 10000.0),
    "nu": (0.1, 0.45),
}

DEFAULT_ATTRIBUTE_SCALE = tuple(
    hi - lo for (lo, hi) in (DEFAULT_PARAM_BOX[name] for name in ATTRIBUTE_NAMES)
)

_KNOWN_KIND_TAGS = ("ground", "deck", "pillar", "plate")


@dataclass(frozen=True)
class ElementKind:
    """Element category; vertices match in the common-subgraph search iff
    their kinds compare equal."""

    tag: str
    name: str | None = None

    def __post_init__(self):
        if self.tag not in _KNOWN_KIND_TAGS and self.tag != "other":
            raise InvalidInputError(f"unknown element kind tag {self.tag!r}")
        if self.tag == "other" and not self.name:
            raise InvalidInputError("kind 'other' requires a name")
        if self.tag != "other" and self.name is not None:
            raise InvalidInputError("only kind 'other' carries a name")

    @property
    def is_ground(self) -> bool:
        return self.tag == "ground"

    def label(self) -> str:
        return self.name if self.tag == "other" else self.tag


GROUND = ElementKind("ground")
DECK = ElementKind("deck")
PILLAR = ElementKind("pillar")
PLATE = ElementKind("plate")


def kind_from_label(label: str) -> ElementKind:
    if label in _KNOWN_KIND_TAGS:
        return ElementKind(label)
    return ElementKind("other", label)


@dataclass(frozen=True)
class IEVertex:
    """One irreducible element: id, kind and (for non-ground kinds) the
    six-value attribute block in ATTRIBUTE_NAMES order, SI units."""

    id: str
    kind: ElementKind
    attributes: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind.is_ground:
            if self.attributes:
                raise InvalidInputError(
                    f"ground vertex {self.id!r} must not carry attributes")
            return
        if len(self.attributes) != len(ATTRIBUTE_NAMES):
            raise InvalidInputError(
                f"vertex {self.id!r} needs {len(ATTRIBUTE_NAMES)} attributes, "
                f"got {len(self.attributes)}")
        object.__setattr__(self, "attributes", tuple(float(v) for v in self.attributes))
        for name, value in zip(ATTRIBUTE_NAMES, self.attributes):
            if not (value > 0.0) or not math.isfinite(value):
                raise InvalidInputError(
                    f"vertex {self.id!r} attribute {name} must be finite and > 0")
        nu = self.attributes[ATTRIBUTE_NAMES.index("nu")]
        if not (0.0 < nu < 0.5):
            raise InvalidInputError(f"vertex {self.id!r} nu must lie in (0, 0.5)")


def _normalise_edge(a: str, b: str) -> tuple[str, str]:
    if a == b:
        raise InvalidInputError(f"self-loop on vertex {a!r}")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class AttributedGraph:
    """Immutable attributed graph: a point in the base space.

    Invariants enforced at construction: connected, at least one ground
    vertex, and every sensor placed on an existing vertex (never an edge).
    """

    vertices: tuple[IEVertex, ...]
    edges: frozenset[tuple[str, str]]
    sensors: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        verts = tuple(sorted(self.vertices, key=lambda v: v.id))
        object.__setattr__(self, "vertices", verts)
        ids = [v.id for v in verts]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate vertex ids")
        if not verts:
            raise InvalidInputError("graph has no vertices")
        known = set(ids)
        edges = frozenset(_normalise_edge(a, b) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        for a, b in edges:
            if a not in known or b not in known:
                raise InvalidInputError(f"edge ({a!r}, {b!r}) references unknown vertex")
        sensors = tuple(sorted((str(s), str(v)) for s, v in self.sensors))
        object.__setattr__(self, "sensors", sensors)
        if len({s for s, _ in sensors}) != len(sensors):
            raise InvalidInputError("duplicate sensor ids")
        for sensor_id, vertex_id in sensors:
            if vertex_id not in known:
                raise InvalidInputError(
                    f"sensor {sensor_id!r} placed on unknown vertex {vertex_id!r}")
        if not any(v.kind.is_ground for v in verts):
            raise InvalidInputError("graph needs at least one ground vertex")
        if not self._connected():
            raise InvalidInputError("graph is not connected")

    def _connected(self) -> bool:
        ids = [v.id for v in self.vertices]
        adj: dict[str, set[str]] = {i: set() for i in ids}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(ids)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def vertex(self, vertex_id: str) -> IEVertex:
        for v in self.vertices:
            if v.id == vertex_id:
                return v
        raise NotFoundError(f"no vertex {vertex_id!r}")

    def has_edge(self, a: str, b: str) -> bool:
        return _normalise_edge(a, b) in self.edges

    def neighbours(self, vertex_id: str) -> tuple[str, ...]:
        self.vertex(vertex_id)
        out = []
        for a, b in self.edges:
            if a == vertex_id:
                out.append(b)
            elif b == vertex_id:
                out.append(a)
        return tuple(sorted(out))

    def sensor_map(self) -> dict[str, str]:
        return dict(self.sensors)


# ---------------------------------------------------------------------------
# Maximum common induced subgraph
# ---------------------------------------------------------------------------

def _association_graph(g1: AttributedGraph, g2: AttributedGraph):
    """Modular-product construction: association vertices are kind-compatible
    vertex pairs; association edges join pairs that preserve both adjacency
    and non-adjacency, so cliques correspond to common induced subgraphs."""
    v1 = g1.vertices
    v2 = g2.vertices
    pairs = [
        (i, j)
        for i in range(len(v1))
        for j in range(len(v2))
        if v1[i].kind == v2[j].kind
    ]
    n = len(pairs)
    adj = [0] * n
    e1 = {(a, b) for a, b in g1.edges}
    e2 = {(a, b) for a, b in g2.edges}

    def edge1(i, k):
        return _normalise_edge(v1[i].id, v1[k].id) in e1

    def edge2(j, l):
        return _normalise_edge(v2[j].id, v2[l].id) in e2

    for p in range(n):
        i, j = pairs[p]
        for q in range(p + 1, n):
            k, l = pairs[q]
            if i == k or j == l:
                continue
            if edge1(i, k) == edge2(j, l):
                adj[p] |= 1 << q
                adj[q] |= 1 << p
    return pairs, adj


def _colour_bound(cand: int, adj: list[int]) -> int:
    """Greedy colouring of the candidate set; the colour count bounds the
    largest clique inside it."""
    colours = 0
    rest = cand
    while rest:
        colours += 1
        avail = rest
        while avail:
            v = (avail & -avail).bit_length() - 1
            rest &= ~(1 << v)
            avail &= rest & ~adj[v]
    return colours


def _max_cliques(adj: list[int]) -> tuple[int, list[int]]:
    """Branch and bound over bitset adjacency; returns (maximum clique size,
    all cliques of that size as bitmasks). Pruning is strict-< so every
    maximum clique survives enumeration."""
    n = len(adj)
    if n == 0:
        return 0, []
    best_size = 0
    best: list[int] = []

    def expand(clique: int, size: int, cand: int):
        nonlocal best_size, best
        if size > best_size:
            best_size = size
            best = [clique]
        elif size == best_size and size > 0:
            best.append(clique)
        if cand == 0:
            return
        if size + bin(cand).count("1") < best_size:
            return
        if size + _colour_bound(cand, adj) < best_size:
            return
        work = cand
        while work:
            v = (work & -work).bit_length() - 1
            bit = 1 << v
            work &= ~bit
            expand(clique | bit, size + 1, work & adj[v])

    expand(0, 0, (1 << n) - 1)
    return best_size, [c for c in best if bin(c).count("1") == best_size]


def _greedy_clique(adj: list[int]) -> int:
    n = len(adj)
    order = sorted(range(n), key=lambda v: -bin(adj[v]).count("1"))
    best = 0
    for start in order[: min(n, 16)]:
        clique = 1 << start
        cand = adj[start]
        while cand:
            pick = max(
                (v for v in range(n) if cand >> v & 1),
                key=lambda v: bin(cand & adj[v]).count("1"),
            )
            clique |= 1 << pick
            cand &= adj[pick]
        best = max(best, bin(clique).count("1"))
    return best


DEFAULT_EXACT_LIMIT = 12


def _check_mcs_inputs(g1: AttributedGraph, g2: AttributedGraph,
                      max_exact: int, allow_greedy: bool) -> bool:
    if g1.n_vertices == 0 or g2.n_vertices == 0:
        raise InvalidInputError("common-subgraph search needs non-empty graphs")
    if max(g1.n_vertices, g2.n_vertices) > max_exact:
        if not allow_greedy:
            raise InvalidInputError(
                f"exact search limited to {max_exact} vertices; "
                "pass allow_greedy=True for a heuristic result")
        return False
    return True


def mcs_size(g1: AttributedGraph, g2: AttributedGraph, *,
             max_exact: int = DEFAULT_EXACT_LIMIT,
             allow_greedy: bool = False) -> int:
    """Vertex count of the maximum common induced subgraph.

    Vertices are compatible iff their kinds are equal; edges and non-edges
    must both be preserved. Exact branch-and-bound up to ``max_exact``
    vertices, a greedy heuristic beyond that only when explicitly allowed.
    """
    exact = _check_mcs_inputs(g1, g2, max_exact, allow_greedy)
    _, adj = _association_graph(g1, g2)
    if exact:
        size, _ = _max_cliques(adj)
        return size
    return _greedy_clique(adj)


def _mcs_mappings(g1: AttributedGraph, g2: AttributedGraph):
    """All maximum common-subgraph vertex correspondences, as lists of
    (index-into-g1, index-into-g2) pairs."""
    pairs, adj = _association_graph(g1, g2)
    size, cliques = _max_cliques(adj)
    mappings = []
    for clique in cliques:
        mapping = [pairs[v] for v in range(len(pairs)) if clique >> v & 1]
        mappings.append(mapping)
    return size, mappings


# ---------------------------------------------------------------------------
# Base-space metric
# ---------------------------------------------------------------------------

def topological_distance(g1: AttributedGraph, g2: AttributedGraph, *,
                         max_exact: int = DEFAULT_EXACT_LIMIT,
                         allow_greedy: bool = False) -> float:
    """1 - |mcs| / max(|V1|, |V2|); zero exactly for kind-isomorphic pairs."""
    size = mcs_size(g1, g2, max_exact=max_exact, allow_greedy=allow_greedy)
    return 1.0 - size / max(g1.n_vertices, g2.n_vertices)


def _attribute_term(g1: AttributedGraph, g2: AttributedGraph,
                    mapping, scale) -> float:
    total = 0.0
    for i, j in mapping:
        a = g1.vertices[i]
        b = g2.vertices[j]
        if a.kind.is_ground:
            continue
        for d in range(len(ATTRIBUTE_NAMES)):
            diff = (a.attributes[d] - b.attributes[d]) / scale[d]
            total += diff * diff
    return math.sqrt(total)


def graph_distance(g1: AttributedGraph, g2: AttributedGraph, *,
                   lambda_attr: float = 1.0,
                   attr_scale: tuple[float, ...] | None = None,
                   max_exact: int = DEFAULT_EXACT_LIMIT) -> float:
    """Base-space metric: topological part plus a box-normalised Euclidean
    attribute part over the best maximum common-subgraph correspondence.

    For kind-isomorphic graphs the topological part vanishes and the result
    is lambda_attr times the minimum, over kind-preserving isomorphisms, of
    the norm of the stacked attribute differences.
    """
    scale = DEFAULT_ATTRIBUTE_SCALE if attr_scale is None else tuple(attr_scale)
    if len(scale) != len(ATTRIBUTE_NAMES):
        raise InvalidInputError("attr_scale needs one width per attribute")
    _check_mcs_inputs(g1, g2, max_exact, allow_greedy=False)
    size, mappings = _mcs_mappings(g1, g2)
    d_top = 1.0 - size / max(g1.n_vertices, g2.n_vertices)
    if not mappings:
        return d_top
    attr = min(_attribute_term(g1, g2, m, scale) for m in mappings)
    return d_top + lambda_attr * attr


# ---------------------------------------------------------------------------
# Populations and source selection
# ---------------------------------------------------------------------------

@dataclass
class PopulationMember:
    """One structure in a population. ``instance`` (a family point) and
    ``fibre``/``labels`` are attached when known; real structures may carry
    only the graph."""

    graph: AttributedGraph
    provenance: str = "simulated"
    instance: object | None = None
    fibre: object | None = None
    labels: object | None = None

    def __post_init__(self):
        if self.provenance not in ("real", "simulated"):
            raise InvalidInputError("provenance must be 'real' or 'simulated'")

    @property
    def has_data(self) -> bool:
        fibre = self.fibre
        return fibre is not None and getattr(fibre, "record_count", 0) > 0


class Population:
    """Mapping of structure id to member. Real and simulated structures
    coexist, distinguished only by the provenance flag. Mutation is not
    internally serialised; callers coordinate writers."""

    def __init__(self):
        self._members: dict[str, PopulationMember] = {}

    def add(self, structure_id: str, graph: AttributedGraph, *,
            provenance: str = "simulated", instance=None, fibre=None,
            labels=None) -> PopulationMember:
        if structure_id in self._members:
            raise InvalidInputError(f"structure id {structure_id!r} already present")
        member = PopulationMember(graph, provenance, instance, fibre, labels)
        self._members[structure_id] = member
        return member

    def __contains__(self, structure_id: str) -> bool:
        return structure_id in self._members

    def __len__(self) -> int:
        return len(self._members)

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._members))

    def member(self, structure_id: str) -> PopulationMember:
        try:
            return self._members[structure_id]
        except KeyError:
            raise NotFoundError(f"no structure {structure_id!r}") from None

    def items(self):
        return ((sid, self._members[sid]) for sid in self.ids())


def select_source(population: Population, target_id: str, d_s: float, *,
                  lambda_attr: float = 1.0,
                  attr_scale: tuple[float, ...] | None = None) -> str | None:
    """Nearest data-rich candidate within the transfer threshold.

    Returns the structure id minimising the base-space distance to the
    target among members with populated fibres (target excluded), provided
    that minimum is <= d_s; None otherwise. Ties break to the lowest id.
    """
    target = population.member(target_id)
    best_id = None
    best_d = math.inf
    for sid, member in population.items():
        if sid == target_id or not member.has_data:
            continue
        d = graph_distance(member.graph, target.graph,
                           lambda_attr=lambda_attr, attr_scale=attr_scale)
        if d < best_d:
            best_d = d
            best_id = sid
    if best_id is None or best_d > d_s:
        return None
    return best_id


# ---------------------------------------------------------------------------
# Interchange files
# ---------------------------------------------------------------------------

def graph_to_dict(graph: AttributedGraph, structure_id: str,
                  provenance: str = "simulated") -> dict:
    vertices = []
    for v in graph.vertices:
        entry: dict = {"id": v.id, "kind": v.kind.label()}
        if not v.kind.is_ground:
            entry["attributes"] = list(v.attributes)
        vertices.append(entry)
    return {
        "id": structure_id,
        "vertices": vertices,
        "edges": [list(e) for e in sorted(graph.edges)],
        "sensors": dict(graph.sensors),
        "provenance": provenance,
    }


def graph_from_dict(doc: Mapping) -> tuple[str, AttributedGraph, str]:
    try:
        vertices = tuple(
            IEVertex(
                id=str(v["id"]),
                kind=kind_from_label(str(v["kind"])),
                attributes=tuple(v.get("attributes", ())),
            )
            for v in doc["vertices"]
        )
        edges = frozenset(_normalise_edge(str(a), str(b)) for a, b in doc["edges"])
        sensors = tuple((str(s), str(v)) for s, v in doc.get("sensors", {}).items())
        graph = AttributedGraph(vertices=vertices, edges=edges, sensors=sensors)
        return str(doc["id"]), graph, str(doc.get("provenance", "simulated"))
    except KeyError as exc:
        raise InvalidInputError(f"structure document missing key {exc}") from None


def save_graph(graph: AttributedGraph, structure_id: str, path: str | Path, *,
               provenance: str = "simulated") -> None:
    Path(path).write_text(
        json.dumps(graph_to_dict(graph, structure_id, provenance), indent=2) + "\n")


def load_graph(path: str | Path) -> tuple[str, AttributedGraph, str]:
    return graph_from_dict(json.loads(Path(path).read_text()))
