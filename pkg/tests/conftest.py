import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from popshm.graphs import (
    DECK,
    GROUND,
    PILLAR,
    PLATE,
    AttributedGraph,
    ElementKind,
    IEVertex,
)

KIND_POOL = (GROUND, DECK, PILLAR, PLATE)


def default_attributes(rng=None):
    """A physically valid attribute block inside the default box."""
    if rng is None:
        return (10.0, 2.0, 0.5, 2.0e11, 7800.0, 0.3)
    return (
        float(rng.uniform(2.0, 90.0)),
        float(rng.uniform(0.5, 20.0)),
        float(rng.uniform(0.1, 4.0)),
        float(rng.uniform(5e9, 4e11)),
        float(rng.uniform(1000.0, 9000.0)),
        float(rng.uniform(0.15, 0.4)),
    )


def make_vertex(vid, kind, rng=None):
    if kind.is_ground:
        return IEVertex(vid, kind)
    return IEVertex(vid, kind, default_attributes(rng))


def random_graph(rng, n_vertices):
    """Random connected attributed graph with at least one ground vertex."""
    kinds = [GROUND] + [KIND_POOL[rng.integers(len(KIND_POOL))]
                        for _ in range(n_vertices - 1)]
    vertices = tuple(make_vertex(f"v{i}", kinds[i], rng) for i in range(n_vertices))
    edges = set()
    ids = [v.id for v in vertices]
    for i in range(1, n_vertices):
        j = int(rng.integers(i))
        edges.add(tuple(sorted((ids[i], ids[j]))))
    for i in range(n_vertices):
        for j in range(i + 1, n_vertices):
            if rng.random() < 0.25:
                edges.add(tuple(sorted((ids[i], ids[j]))))
    return AttributedGraph(vertices=vertices, edges=frozenset(edges))


def two_span_graph(attrs=None):
    """Hand-coded two-span bridge: decks D1, D2 anchored to ground at their
    outer ends, joined at a grounded pillar junction."""
    attrs = attrs or {}
    vertices = (
        make_vertex("D1", DECK) if "D1" not in attrs else IEVertex("D1", DECK, attrs["D1"]),
        make_vertex("D2", DECK) if "D2" not in attrs else IEVertex("D2", DECK, attrs["D2"]),
        make_vertex("P1", PILLAR) if "P1" not in attrs else IEVertex("P1", PILLAR, attrs["P1"]),
        IEVertex("G1", GROUND),
        IEVertex("G2", GROUND),
        IEVertex("G3", GROUND),
    )
    edges = frozenset({
        ("D1", "G1"), ("D1", "P1"), ("D1", "D2"),
        ("D2", "P1"), ("G2", "P1"), ("D2", "G3"),
    })
    return AttributedGraph(vertices=vertices, edges=edges)


def three_span_graph():
    """Hand-coded three-span bridge: decks D1-D2-D3 in a chain, grounded
    pillars at both internal junctions, outer deck ends grounded."""
    vertices = (
        make_vertex("D1", DECK), make_vertex("D2", DECK), make_vertex("D3", DECK),
        make_vertex("P1", PILLAR), make_vertex("P2", PILLAR),
        IEVertex("G1", GROUND), IEVertex("G2", GROUND),
        IEVertex("G3", GROUND), IEVertex("G4", GROUND),
    )
    edges = frozenset({
        ("D1", "G1"), ("D1", "P1"), ("D1", "D2"), ("D2", "P1"),
        ("D2", "P2"), ("D2", "D3"), ("D3", "P2"),
        ("G2", "P1"), ("G3", "P2"), ("D3", "G4"),
    })
    return AttributedGraph(vertices=vertices, edges=edges)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
