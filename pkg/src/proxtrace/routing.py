"""Safe-route recommendation on a city graph.

Shortest path by Dijkstra over the subgraph induced by non-hotspot nodes;
hotspot exclusion happens at relaxation time rather than by copying the
graph. The baseline route ignores hotspots and exists for cost comparison.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable


class UnknownCityError(KeyError):
    """A route endpoint is not a node of the graph."""


class HotspotEndpointError(ValueError):
    """A route endpoint is itself a hotspot (distinct from plain NoPath)."""


@dataclass
class CityGraph:
    """Undirected weighted city graph (km edges) with a hotspot node set."""

    adjacency: dict[str, dict[str, float]] = field(default_factory=dict)
    hotspots: set[str] = field(default_factory=set)

    def add_node(self, city: str) -> None:
        self.adjacency.setdefault(city, {})

    def add_edge(self, a: str, b: str, km: float) -> None:
        if a == b:
            raise ValueError(f"self-loop on {a!r}")
        if not km > 0:
            raise ValueError(f"edge weight must be positive: {a}-{b} {km}")
        self.adjacency.setdefault(a, {})[b] = float(km)
        self.adjacency.setdefault(b, {})[a] = float(km)

    def mark_hotspot(self, city: str) -> None:
        if city not in self.adjacency:
            raise UnknownCityError(city)
        self.hotspots.add(city)

    @property
    def nodes(self) -> set[str]:
        return set(self.adjacency)

    def edge_weight(self, a: str, b: str) -> float:
        return self.adjacency[a][b]

    @classmethod
    def from_edges(
        cls, edges: Iterable[tuple[str, str, float]], hotspots: Iterable[str] = ()
    ) -> "CityGraph":
        g = cls()
        for a, b, km in edges:
            g.add_edge(a, b, km)
        for city in hotspots:
            g.mark_hotspot(city)
        return g


@dataclass(frozen=True)
class RouteResult:
    path: tuple[str, ...] | None
    total_cost: float

    @property
    def found(self) -> bool:
        return self.path is not None


NO_PATH = RouteResult(None, math.inf)


def _dijkstra(g: CityGraph, source: str, dest: str, blocked: set[str]) -> RouteResult:
    # heap entries are (distance, node); equal distances pop in lexicographic
    # node order, which keeps tie-broken paths deterministic
    dist: dict[str, float] = {source: 0.0}
    last: dict[str, str] = {}
    done: set[str] = set()
    heap: list[tuple[float, str]] = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dest:
            break
        for v, w in g.adjacency[u].items():
            if v in blocked or v in done:
                continue
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                last[v] = u
                heapq.heappush(heap, (nd, v))
    if dest not in done:
        return NO_PATH
    path = [dest]
    while path[-1] != source:
        path.append(last[path[-1]])
    return RouteResult(tuple(reversed(path)), dist[dest])


def _require_nodes(g: CityGraph, *cities: str) -> None:
    for city in cities:
        if city not in g.adjacency:
            raise UnknownCityError(city)


def safe_route(g: CityGraph, source: str, dest: str) -> RouteResult:
    """Shortest path that never touches a hotspot node.

    Endpoints must themselves be non-hotspots; violating that is a
    precondition error, not a NoPath result.
    """
    _require_nodes(g, source, dest)
    if source in g.hotspots or dest in g.hotspots:
        bad = source if source in g.hotspots else dest
        raise HotspotEndpointError(f"route endpoint {bad!r} is a hotspot")
    if source == dest:
        return RouteResult((source,), 0.0)
    return _dijkstra(g, source, dest, g.hotspots)


def baseline_route(g: CityGraph, source: str, dest: str) -> RouteResult:
    """Plain shortest path ignoring hotspots (the cost-comparison baseline)."""
    _require_nodes(g, source, dest)
    if source == dest:
        return RouteResult((source,), 0.0)
    return _dijkstra(g, source, dest, set())


def load_graph_file(path: str | Path) -> CityGraph:
    """Parse the graph file format: header line, then "city_a,city_b,km" rows."""
    g = CityGraph()
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "city_a,city_b,km":
            raise ValueError(f"{path}: expected header 'city_a,city_b,km', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'city_a,city_b,km'")
            g.add_edge(parts[0].strip(), parts[1].strip(), float(parts[2]))
    return g


def load_hotspot_file(path: str | Path) -> set[str]:
    """One hotspot city per line; blank lines and '#' comments ignored."""
    out: set[str] = set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.add(line)
    return out


def india_city_graph(hotspots: Iterable[str] = ()) -> CityGraph:
    """The packaged 10-city road-distance fixture.

    Edge lengths are approximate road distances; the two route totals the
    fixture is calibrated to are Pune -> New Delhi at 1455 km via Indore and
    1540 km via Bhopal when Indore is excluded.
    """
    ref = resources.files("proxtrace.data").joinpath("india_cities.csv")
    with resources.as_file(ref) as path:
        g = load_graph_file(path)
    for city in hotspots:
        g.mark_hotspot(city)
    return g
