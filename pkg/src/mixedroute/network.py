"""Road network representation, route enumeration and network-file ingestion."""

from __future__ import annotations

import heapq
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised for invalid network, demand or route inputs."""


@dataclass(frozen=True)
class Link:
    """Directed road link.

    ``cost_poly`` optionally overrides the BPR curve with a custom travel-time
    polynomial in the link flow: ``t(x) = sum(c[j] * x**j)`` minutes.
    """

    id: int
    tail: int
    head: int
    free_flow_time: float
    capacity: float
    length: float = 0.0
    grade: float = 0.0
    cost_poly: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.tail == self.head:
            raise NetworkError(f"link {self.id}: self-loop at node {self.tail}")
        if self.capacity <= 0:
            raise NetworkError(f"link {self.id}: capacity must be positive")
        if self.length < 0:
            raise NetworkError(f"link {self.id}: negative length")
        if self.cost_poly is None:
            if self.free_flow_time <= 0:
                raise NetworkError(f"link {self.id}: free-flow time must be positive")
        else:
            if len(self.cost_poly) == 0 or any(c < 0 for c in self.cost_poly):
                raise NetworkError(
                    f"link {self.id}: custom cost polynomial needs nonnegative coefficients")
            if self.free_flow_time < 0:
                raise NetworkError(f"link {self.id}: negative free-flow time")

    @property
    def zero_flow_time(self) -> float:
        """Travel time at zero flow, used to rank routes."""
        if self.cost_poly is not None:
            return float(self.cost_poly[0])
        return float(self.free_flow_time)


@dataclass(frozen=True)
class ODPair:
    origin: int
    destination: int
    demand: float

    def __post_init__(self):
        if self.demand < 0:
            raise NetworkError(f"negative demand for O-D {self.origin}->{self.destination}")
        if self.origin == self.destination:
            raise NetworkError(f"O-D pair with identical origin and destination {self.origin}")


@dataclass(frozen=True, eq=False)
class Network:
    nodes: tuple[int, ...]
    links: tuple[Link, ...]
    incidence: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {lk.id: i for i, lk in enumerate(self.links)})
        object.__setattr__(self, "_ids", tuple(lk.id for lk in self.links))
        out: dict[int, list[int]] = {n: [] for n in self.nodes}
        for i, lk in enumerate(self.links):
            out[lk.tail].append(i)
        object.__setattr__(self, "_out", {n: tuple(v) for n, v in out.items()})
        # node -> ((position, link id, head), ...) for the path searches
        adj = {n: tuple((a, self.links[a].id, self.links[a].head) for a in v) for n, v in out.items()}
        object.__setattr__(self, "_adj", adj)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def link_ids(self) -> tuple[int, ...]:
        return self._ids

    def link_index(self, link_id: int) -> int:
        try:
            return self._index[link_id]
        except KeyError:
            raise NetworkError(f"unknown link id {link_id}") from None

    def out_links(self, node: int) -> tuple[int, ...]:
        """Positions of the links leaving ``node``."""
        return self._out.get(node, ())

    def has_node(self, node: int) -> bool:
        return node in self._out


def build_network(links: Iterable[Link]) -> Network:
    links = tuple(links)
    if not links:
        raise NetworkError("network needs at least one link")
    seen = set()
    for lk in links:
        if lk.id in seen:
            raise NetworkError(f"duplicate link id {lk.id}")
        seen.add(lk.id)
    nodes = tuple(sorted({lk.tail for lk in links} | {lk.head for lk in links}))
    pos = {n: i for i, n in enumerate(nodes)}
    inc = np.zeros((len(nodes), len(links)))
    for j, lk in enumerate(links):
        inc[pos[lk.tail], j] = 1.0
        inc[pos[lk.head], j] = -1.0
    inc.setflags(write=False)
    return Network(nodes, links, inc)


def validate_ods(net: Network, ods: Sequence[ODPair]) -> None:
    for od in ods:
        if not (net.has_node(od.origin) and net.has_node(od.destination)):
            raise NetworkError(f"O-D {od.origin}->{od.destination} references a missing node")


# ---------------------------------------------------------------------------
# shortest paths


def shortest_path_tree(net: Network, origin: int, times: np.ndarray,
                       banned_links: frozenset = frozenset(),
                       banned_nodes: frozenset = frozenset()):
    """Dijkstra from ``origin`` with ties broken by lexicographic link-id sequence.

    Returns ``{node: (distance, link_id_path)}`` for every reachable node.
    """
    t = times.tolist() if isinstance(times, np.ndarray) else list(times)
    adj = net._adj
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    heap = [(0.0, (), origin)]
    push, pop = heapq.heappush, heapq.heappop
    while heap:
        d, path, node = pop(heap)
        if node in best:
            continue
        best[node] = (d, path)
        for a, lid, head in adj.get(node, ()):
            if head in best or head in banned_nodes or lid in banned_links:
                continue
            push(heap, (d + t[a], path + (lid,), head))
    return best


def path_cost(net: Network, path: Sequence[int], times: np.ndarray) -> float:
    return float(sum(times[net.link_index(lid)] for lid in path))


def path_nodes(net: Network, path: Sequence[int]) -> list[int]:
    links = [net.links[net.link_index(lid)] for lid in path]
    return [links[0].tail] + [lk.head for lk in links]


def k_shortest_paths(net: Network, origin: int, destination: int, k: int,
                     times: np.ndarray | None = None) -> list[tuple[int, ...]]:
    """Yen's loopless k-shortest paths, ordered by (cost, link-id sequence)."""
    if k < 1:
        raise NetworkError("k must be at least 1")
    if times is None:
        times = np.array([lk.zero_flow_time for lk in net.links])
    tree = shortest_path_tree(net, origin, times)
    if destination not in tree:
        return []
    found = [tree[destination][1]]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen = {found[0]}
    while len(found) < k:
        prev = found[-1]
        nodes = path_nodes(net, prev)
        for i in range(len(prev)):
            spur_node = nodes[i]
            root = prev[:i]
            banned_links = {p[i] for p in found if p[:i] == root and len(p) > i}
            banned_nodes = frozenset(nodes[:i])
            spur = shortest_path_tree(net, spur_node, times,
                                      frozenset(banned_links), banned_nodes)
            if destination not in spur:
                continue
            cand = root + spur[destination][1]
            if cand not in seen:
                seen.add(cand)
                heapq.heappush(candidates, (path_cost(net, cand, times), cand))
        if not candidates:
            break
        found.append(heapq.heappop(candidates)[1])
    return found


# ---------------------------------------------------------------------------
# routes and flows


@dataclass(frozen=True)
class Route:
    od_index: int
    links: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class RouteSet:
    routes_per_od: tuple[tuple[Route, ...], ...]
    incidence: np.ndarray = field(repr=False)

    @property
    def n_routes(self) -> int:
        return self.incidence.shape[1]

    @property
    def n_ods(self) -> int:
        return len(self.routes_per_od)

    @property
    def offsets(self) -> np.ndarray:
        """Start column of each O-D block, with a trailing total."""
        return np.concatenate([[0], np.cumsum([len(r) for r in self.routes_per_od])]).astype(int)

    @property
    def route_od(self) -> np.ndarray:
        """O-D index of every route column."""
        return np.repeat(np.arange(self.n_ods), [len(r) for r in self.routes_per_od])

    @property
    def routes(self) -> list[Route]:
        return [r for block in self.routes_per_od for r in block]

    def blocks(self):
        off = self.offsets
        return [slice(off[i], off[i + 1]) for i in range(self.n_ods)]


def make_route_set(net: Network, routes_per_od: Sequence[Sequence[Sequence[int]]]) -> RouteSet:
    """Build a RouteSet (and its link-route incidence) from link-id sequences."""
    blocks = []
    for i, paths in enumerate(routes_per_od):
        blocks.append(tuple(Route(i, tuple(p)) for p in paths))
    total = sum(len(b) for b in blocks)
    inc = np.zeros((net.n_links, total))
    col = 0
    for block in blocks:
        for route in block:
            _check_route(net, route)
            for lid in route.links:
                inc[net.link_index(lid), col] = 1.0
            col += 1
    inc.setflags(write=False)
    return RouteSet(tuple(blocks), inc)


def _check_route(net: Network, route: Route) -> None:
    if not route.links:
        raise NetworkError("empty route")
    nodes = path_nodes(net, route.links)
    for a, b in zip(route.links, route.links[1:]):
        if net.links[net.link_index(a)].head != net.links[net.link_index(b)].tail:
            raise NetworkError(f"route {route.links} is not a connected chain")
    if len(set(nodes)) != len(nodes):
        raise NetworkError(f"route {route.links} repeats a node")


def enumerate_routes(net: Network, ods: Sequence[ODPair], k: int = 3) -> RouteSet:
    validate_ods(net, ods)
    paths = []
    for od in ods:
        found = k_shortest_paths(net, od.origin, od.destination, k)
        if not found and od.demand > 0:
            raise NetworkError(f"O-D {od.origin}->{od.destination} is disconnected")
        paths.append(found)
    return make_route_set(net, paths)


class RouteProbabilityMatrix:
    """Ragged route-choice matrix: row ``i`` holds the route fractions of O-D ``i``."""

    def __init__(self, rows: Sequence[Sequence[float]]):
        self.rows = [np.asarray(r, dtype=float) for r in rows]

    @classmethod
    def uniform(cls, rs: RouteSet) -> RouteProbabilityMatrix:
        return cls([np.full(len(b), 1.0 / len(b)) if b else np.zeros(0)
                    for b in rs.routes_per_od])

    @classmethod
    def from_flat(cls, rs: RouteSet, p: np.ndarray) -> RouteProbabilityMatrix:
        return cls([p[s].copy() for s in rs.blocks()])

    def flat(self) -> np.ndarray:
        if not self.rows:
            return np.zeros(0)
        return np.concatenate(self.rows)

    def validate(self, rs: RouteSet | None = None, atol: float = 1e-9) -> None:
        if rs is not None:
            if len(self.rows) != rs.n_ods:
                raise NetworkError("probability matrix row count differs from O-D count")
            for row, block in zip(self.rows, rs.routes_per_od):
                if len(row) != len(block):
                    raise NetworkError("probability row length differs from route count")
        for row in self.rows:
            if row.size == 0:
                continue
            if np.any(row < -atol) or np.any(row > 1 + atol):
                raise NetworkError("route probabilities must lie in [0, 1]")
            if abs(row.sum() - 1.0) > atol:
                raise NetworkError("route probabilities must sum to one per O-D")

    def __repr__(self):
        return f"RouteProbabilityMatrix({[r.tolist() for r in self.rows]})"


def route_demand(rs: RouteSet, ods: Sequence[ODPair]) -> np.ndarray:
    """Per-route copy of the owning O-D demand."""
    if len(ods) != rs.n_ods:
        raise NetworkError("O-D list length differs from route set")
    g = np.array([od.demand for od in ods], dtype=float)
    return g[rs.route_od] if rs.n_routes else np.zeros(0)


def route_flows_to_link_flows(P: RouteProbabilityMatrix, ods: Sequence[ODPair],
                              rs: RouteSet) -> np.ndarray:
    """Link flows ``x = A P^T g``."""
    if len(P.rows) != len(ods) or len(ods) != rs.n_ods:
        raise NetworkError("dimension mismatch between P, demand and route set")
    P.validate(rs)
    f = P.flat() * route_demand(rs, ods)
    return rs.incidence @ f


# ---------------------------------------------------------------------------
# fixtures


def braess_fixture():
    """The 4-node, 5-link Braess network with 4000 veh/hr from node 1 to node 4.

    Returns the network, the O-D list and the custom travel-time table
    (link id -> polynomial coefficients in flow, minutes).
    """
    table = {
        1: (0.0, 0.01),
        2: (45.0,),
        3: (45.0,),
        4: (0.0,),
        5: (0.0, 0.01),
    }
    spec = [  # id, tail, head, length
        (1, 1, 2, 30.5),
        (2, 1, 3, 30.5),
        (3, 2, 4, 30.5),
        (4, 2, 3, 0.0),
        (5, 3, 4, 30.5),
    ]
    links = [Link(lid, t, h, free_flow_time=table[lid][0], capacity=1.0,
                  length=length, cost_poly=table[lid])
             for lid, t, h, length in spec]
    return build_network(links), [ODPair(1, 4, 4000.0)], table


def grid_network(rows: int = 4, cols: int = 4, n_ods: int = 8, seed: int = 0,
                 demand_range=(300.0, 900.0)):
    """Seeded synthetic grid with two-way BPR links and random O-D demand."""
    rng = np.random.default_rng(seed)
    node = lambda r, c: r * cols + c + 1  # noqa: E731
    links = []
    lid = itertools.count(1)
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= rows or c2 >= cols:
                    continue
                length = float(rng.uniform(0.8, 2.0))
                speed = float(rng.choice([30.0, 45.0, 60.0]))
                t0 = 60.0 * length / speed
                cap = float(rng.choice([600.0, 900.0, 1200.0]))
                for a, b in ((node(r, c), node(r2, c2)), (node(r2, c2), node(r, c))):
                    links.append(Link(next(lid), a, b, t0, cap, length))
    net = build_network(links)
    pairs = set()
    ods = []
    while len(ods) < n_ods:
        o, d = (int(v) for v in rng.choice(net.nodes, size=2, replace=False))
        if (o, d) in pairs:
            continue
        pairs.add((o, d))
        ods.append(ODPair(o, d, float(round(rng.uniform(*demand_range), 1))))
    return net, ods


# ---------------------------------------------------------------------------
# TNTP-style files

_META = re.compile(r"^\s*<([^>]+)>\s*(.*)$")


def _read_metadata(lines, required):
    meta = {}
    body_start = None
    for n, line in enumerate(lines):
        text = line.strip()
        if not text or text.startswith("~"):
            continue
        m = _META.match(text)
        if not m:
            raise NetworkError(f"line {n + 1}: expected metadata, got {text!r}")
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            body_start = n + 1
            break
        meta[key] = m.group(2).strip()
    if body_start is None:
        raise NetworkError("missing <END OF METADATA>")
    for key in required:
        if key not in meta:
            raise NetworkError(f"missing metadata field <{key}>")
    return meta, body_start


def _parse_network(text: str) -> Network:
    lines = text.splitlines()
    meta, start = _read_metadata(lines, ("NUMBER OF NODES", "NUMBER OF LINKS"))
    try:
        n_links = int(meta["NUMBER OF LINKS"])
        int(meta["NUMBER OF NODES"])
    except ValueError:
        raise NetworkError("node and link counts must be integers") from None
    links = []
    for n in range(start, len(lines)):
        text_line = lines[n].strip()
        if not text_line or text_line.startswith("~"):
            continue
        fields = text_line.rstrip(";").split()
        if len(fields) != 10:
            raise NetworkError(f"line {n + 1}: expected 10 link columns, found {len(fields)}")
        try:
            tail, head = int(fields[0]), int(fields[1])
            cap, length, t0 = float(fields[2]), float(fields[3]), float(fields[4])
        except ValueError:
            raise NetworkError(f"line {n + 1}: non-numeric link field") from None
        links.append(Link(len(links) + 1, tail, head, t0, cap, length))
    if len(links) != n_links:
        raise NetworkError(f"header declares {n_links} links, file has {len(links)}")
    return build_network(links)


def _parse_trips(text: str) -> list[ODPair]:
    lines = text.splitlines()
    _, start = _read_metadata(lines, ("TOTAL OD FLOW",))
    table: dict[tuple[int, int], float] = {}
    origin = None
    for n in range(start, len(lines)):
        text_line = lines[n].strip()
        if not text_line or text_line.startswith("~"):
            continue
        if text_line.lower().startswith("origin"):
            parts = text_line.split()
            if len(parts) != 2:
                raise NetworkError(f"line {n + 1}: malformed origin header")
            origin = int(parts[1])
            continue
        if origin is None:
            raise NetworkError(f"line {n + 1}: demand entry before any Origin block")
        for entry in text_line.split(";"):
            entry = entry.strip()
            if not entry:
                continue
            dest, sep, flow = entry.partition(":")
            if not sep:
                raise NetworkError(f"line {n + 1}: malformed demand entry {entry!r}")
            try:
                dest_i, value = int(dest), float(flow)
            except ValueError:
                raise NetworkError(f"line {n + 1}: malformed demand entry {entry!r}") from None
            if value < 0:
                raise NetworkError(f"line {n + 1}: negative demand")
            if dest_i == origin:
                if value > 0:
                    raise NetworkError(f"line {n + 1}: positive demand from {origin} to itself")
                continue
            if value == 0:
                continue
            table[(origin, dest_i)] = table.get((origin, dest_i), 0.0) + value
    return [ODPair(o, d, g) for (o, d), g in table.items()]


def parse_network_files(net_text: str, trips_text: str) -> tuple[Network, list[ODPair]]:
    net = _parse_network(net_text)
    ods = _parse_trips(trips_text)
    validate_ods(net, ods)
    return net, ods


def format_network(net: Network) -> str:
    out = [f"<NUMBER OF NODES> {len(net.nodes)}",
           f"<NUMBER OF LINKS> {net.n_links}",
           "<END OF METADATA>",
           "",
           "~ tail head capacity length free_flow_time b power speed_limit toll type ;"]
    for lk in net.links:
        out.append(f"{lk.tail} {lk.head} {lk.capacity!r} {lk.length!r} "
                   f"{lk.free_flow_time!r} 0.15 4 0 0 1 ;")
    return "\n".join(out) + "\n"


def format_trips(ods: Sequence[ODPair]) -> str:
    total = sum(od.demand for od in ods)
    out = [f"<NUMBER OF ZONES> {len({od.origin for od in ods})}",
           f"<TOTAL OD FLOW> {total!r}",
           "<END OF METADATA>", ""]
    by_origin: dict[int, list[ODPair]] = {}
    for od in ods:
        by_origin.setdefault(od.origin, []).append(od)
    for o in sorted(by_origin):
        out.append(f"Origin {o}")
        out.append("  ".join(f"{od.destination} : {od.demand!r};" for od in by_origin[o]))
        out.append("")
    return "\n".join(out)
