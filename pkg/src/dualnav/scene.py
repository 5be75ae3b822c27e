"""Synthetic indoor scene graphs.

A scene is a small undirected graph of rooms.  Node features are stable
hashes of the room's region and landmark tokens, salted with the scene id,
so a scene file round-trips bitwise without storing float vectors.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import threading
from dataclasses import dataclass, field

import numpy as np

FEATURE_DIM = 64

SCENE_TYPES = ("residential", "office", "mall", "hotel", "cinema", "depot")

_REGIONS = {
    "residential": ("kitchen", "hallway", "bedroom", "bathroom", "den", "dining", "porch", "study"),
    "office": ("lobby", "corridor", "bullpen", "meeting", "pantry", "archive", "reception", "atrium"),
    "mall": ("entrance", "atrium", "foodcourt", "boutique", "arcade", "plaza", "kiosk", "gallery"),
    "hotel": ("lobby", "corridor", "suite", "gym", "pool", "bar", "terrace", "laundry"),
    "cinema": ("foyer", "ticketing", "screen", "concession", "balcony", "projection", "lounge", "stairwell"),
    "depot": ("annex", "workshop", "garage", "cellar", "attic", "yard", "shed", "loft"),
}

_COLORS = ("red", "blue", "green", "white", "black", "golden", "wooden", "marble")
_OBJECTS = ("painting", "vase", "lamp", "statue", "plant", "clock", "mirror", "bench", "sign", "rug")

# Geometry knobs: rooms are kept at least MIN_SEPARATION apart so edge
# lengths stay comparable to the 3 m success radius used by the metrics.
MIN_SEPARATION = 3.2
_BOX_SCALE = 4.0


class NoPathError(ValueError):
    """Raised when no path exists between two nodes."""


@dataclass(frozen=True, eq=False)
class Node:
    """One room: an id, a position in meters, and what can be seen there."""

    node_id: str
    position: tuple[float, float, float]
    region: str
    landmarks: tuple[str, ...]
    description: str
    feature: np.ndarray

    def __post_init__(self) -> None:
        if not self.description:
            raise ValueError(f"node {self.node_id} has an empty description")


@dataclass(frozen=True, eq=False)
class SceneGraph:
    """Undirected room graph, immutable after construction."""

    scene_id: str
    scene_type: str
    nodes: dict[str, Node]
    edges: tuple[tuple[str, str, float], ...]
    _adjacency: dict[str, dict[str, float]] = field(repr=False, init=False, default_factory=dict)
    _geodesic_memo: dict[str, dict[str, float]] = field(repr=False, init=False, default_factory=dict)
    _memo_lock: threading.Lock = field(repr=False, init=False, default_factory=threading.Lock)

    def __post_init__(self) -> None:
        adjacency: dict[str, dict[str, float]] = {node_id: {} for node_id in self.nodes}
        for a, b, dist in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge ({a}, {b}) references an unknown node")
            if a == b:
                raise ValueError(f"self-loop on node {a}")
            if dist <= 0.0:
                raise ValueError(f"edge ({a}, {b}) has non-positive length {dist}")
            if b in adjacency[a] and not np.isclose(adjacency[a][b], dist):
                raise ValueError(f"conflicting duplicate edge ({a}, {b})")
            adjacency[a][b] = dist
            adjacency[b][a] = dist
        object.__setattr__(self, "_adjacency", adjacency)
        self._check_connected()

    def _check_connected(self) -> None:
        if not self.nodes:
            raise ValueError("scene has no nodes")
        seen = set()
        stack = [next(iter(self.nodes))]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(self._adjacency[cur])
        if len(seen) != len(self.nodes):
            raise ValueError("scene graph is not connected")

    def neighbors(self, node_id: str) -> dict[str, float]:
        """Neighbor ids of a node mapped to edge lengths in meters."""
        if node_id not in self.nodes:
            raise KeyError(f"unknown node {node_id}")
        return dict(self._adjacency[node_id])

    def edge_length(self, a: str, b: str) -> float:
        try:
            return self._adjacency[a][b]
        except KeyError:
            raise ValueError(f"nodes {a} and {b} are not adjacent") from None

    def degree(self, node_id: str) -> int:
        return len(self._adjacency[node_id])

    def _dijkstra(self, source: str) -> dict[str, float]:
        if source not in self.nodes:
            raise KeyError(f"unknown node {source}")
        with self._memo_lock:
            cached = self._geodesic_memo.get(source)
        if cached is not None:
            return cached
        dist = {source: 0.0}
        heap = [(0.0, source)]
        while heap:
            d, cur = heapq.heappop(heap)
            if d > dist.get(cur, np.inf):
                continue
            for nxt, w in self._adjacency[cur].items():
                cand = d + w
                if cand < dist.get(nxt, np.inf):
                    dist[nxt] = cand
                    heapq.heappush(heap, (cand, nxt))
        with self._memo_lock:
            self._geodesic_memo[source] = dist
        return dist

    def geodesic(self, a: str, b: str) -> float:
        """Shortest-path distance in meters between two nodes."""
        dist = self._dijkstra(a)
        if b not in dist:
            if b not in self.nodes:
                raise KeyError(f"unknown node {b}")
            raise NoPathError(f"no path from {a} to {b}")
        return dist[b]

    def all_tokens(self) -> set[str]:
        """Every region and landmark token that occurs in this scene."""
        tokens: set[str] = set()
        for node in self.nodes.values():
            tokens.add(node.region)
            tokens.update(node.landmarks)
        return tokens


def _token_seed(salt: str, token: str) -> int:
    digest = hashlib.blake2b(f"{salt}:{token}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def node_feature(scene_id: str, region: str, landmarks: tuple[str, ...], dim: int = FEATURE_DIM) -> np.ndarray:
    """Unit-norm feature vector derived only from scene id, region, and landmarks."""
    total = np.zeros(dim)
    for token in (region, *landmarks):
        rng = np.random.Generator(np.random.PCG64(_token_seed(scene_id, token)))
        total += rng.standard_normal(dim)
    norm = float(np.linalg.norm(total))
    if norm == 0.0:  # unreachable for non-empty token lists, kept for safety
        total[0] = 1.0
        norm = 1.0
    return total / norm


def shortest_path(scene: SceneGraph, a: str, b: str) -> list[str]:
    """Shortest path from a to b as a node-id list, including both endpoints.

    Among equal-length paths the lexicographically smallest node-id sequence
    is returned, so results are stable across runs.
    """
    if a not in scene.nodes:
        raise KeyError(f"unknown node {a}")
    if b not in scene.nodes:
        raise KeyError(f"unknown node {b}")
    if a == b:
        return [a]
    dist_to_goal = scene._dijkstra(b)
    if a not in dist_to_goal:
        raise NoPathError(f"no path from {a} to {b}")
    path = [a]
    cur = a
    while cur != b:
        remaining = dist_to_goal[cur]
        choices = [
            nxt
            for nxt, w in scene.neighbors(cur).items()
            if abs(w + dist_to_goal.get(nxt, np.inf) - remaining) <= 1e-9
        ]
        if not choices:  # float slack too tight; cannot happen with consistent weights
            raise NoPathError(f"no consistent shortest-path step from {cur} to {b}")
        cur = min(choices)
        path.append(cur)
    return path


def path_length(scene: SceneGraph, path: list[str]) -> float:
    """Sum of edge lengths along a node path; consecutive nodes must be adjacent."""
    total = 0.0
    for a, b in zip(path, path[1:]):
        total += scene.edge_length(a, b)
    return total


def _sample_positions(rng: np.random.Generator, n_nodes: int) -> list[tuple[float, float, float]]:
    side = _BOX_SCALE * float(np.sqrt(n_nodes)) + MIN_SEPARATION
    positions: list[tuple[float, float, float]] = []
    while len(positions) < n_nodes:
        x, y = rng.uniform(0.0, side, size=2)
        ok = all((x - px) ** 2 + (y - py) ** 2 >= MIN_SEPARATION**2 for px, py, _ in positions)
        if ok:
            positions.append((float(x), float(y), 0.0))
    return positions


def generate_scene(
    seed: int,
    scene_type: str = "residential",
    n_nodes: int = 12,
    feature_dim: int = FEATURE_DIM,
) -> SceneGraph:
    """Generate a connected scene graph, deterministic in its arguments.

    Scenes with at least five rooms always contain a branching room of
    degree >= 3.  Edge lengths are Euclidean distances between positions.
    """
    if scene_type not in SCENE_TYPES:
        raise ValueError(f"unknown scene type {scene_type!r}; expected one of {SCENE_TYPES}")
    if n_nodes < 2:
        raise ValueError("a scene needs at least two nodes")
    type_code = SCENE_TYPES.index(scene_type)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, type_code, n_nodes])))
    scene_id = f"{scene_type}-{seed:05d}-n{n_nodes}"

    positions = _sample_positions(rng, n_nodes)
    node_ids = [f"n{i:02d}" for i in range(n_nodes)]

    # Spanning tree with a guaranteed hub so branch decisions exist.
    edges: set[tuple[str, str]] = set()
    hub = int(rng.integers(0, n_nodes))
    attached = [hub]
    detached = [i for i in range(n_nodes) if i != hub]
    forced = min(3, len(detached))
    for _ in range(forced):
        idx = int(rng.integers(0, len(detached)))
        child = detached.pop(idx)
        edges.add((min(hub, child), max(hub, child)))
        attached.append(child)
    while detached:
        idx = int(rng.integers(0, len(detached)))
        child = detached.pop(idx)
        parent = attached[int(rng.integers(0, len(attached)))]
        edges.add((min(parent, child), max(parent, child)))
        attached.append(child)
    n_extra = max(1, n_nodes // 4)
    for _ in range(n_extra * 4):
        if len(edges) >= n_nodes - 1 + n_extra:
            break
        a, b = rng.integers(0, n_nodes, size=2)
        if a == b:
            continue
        edges.add((int(min(a, b)), int(max(a, b))))

    regions = _REGIONS[scene_type]
    nodes: dict[str, Node] = {}
    for i, node_id in enumerate(node_ids):
        region = regions[int(rng.integers(0, len(regions)))]
        color = _COLORS[int(rng.integers(0, len(_COLORS)))]
        obj = _OBJECTS[int(rng.integers(0, len(_OBJECTS)))]
        landmarks = (color, obj)
        description = f"a {region} with a {color} {obj}"
        nodes[node_id] = Node(
            node_id=node_id,
            position=positions[i],
            region=region,
            landmarks=landmarks,
            description=description,
            feature=node_feature(scene_id, region, landmarks, feature_dim),
        )

    edge_list = []
    for ia, ib in sorted(edges):
        a, b = node_ids[ia], node_ids[ib]
        pa, pb = np.asarray(nodes[a].position), np.asarray(nodes[b].position)
        edge_list.append((a, b, float(np.linalg.norm(pa - pb))))

    return SceneGraph(scene_id=scene_id, scene_type=scene_type, nodes=nodes, edges=tuple(edge_list))


def save_scene(scene: SceneGraph, path: str) -> None:
    """Write a scene to a JSON document (features are recomputed on load)."""
    doc = {
        "scene_id": scene.scene_id,
        "scene_type": scene.scene_type,
        "nodes": [
            {
                "id": node.node_id,
                "pos": list(node.position),
                "region": node.region,
                "landmarks": list(node.landmarks),
                "description": node.description,
            }
            for node in scene.nodes.values()
        ],
        "edges": [[a, b, dist] for a, b, dist in scene.edges],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene(path: str, feature_dim: int = FEATURE_DIM) -> SceneGraph:
    """Load and validate a scene JSON document."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("scene_id", "scene_type", "nodes", "edges"):
        if key not in doc:
            raise ValueError(f"scene document is missing {key!r}")
    scene_id = doc["scene_id"]
    nodes: dict[str, Node] = {}
    for raw in doc["nodes"]:
        node_id = raw["id"]
        if node_id in nodes:
            raise ValueError(f"duplicate node id {node_id}")
        landmarks = tuple(raw["landmarks"])
        pos = raw["pos"]
        if len(pos) != 3:
            raise ValueError(f"node {node_id} position must have three coordinates")
        nodes[node_id] = Node(
            node_id=node_id,
            position=(float(pos[0]), float(pos[1]), float(pos[2])),
            region=raw["region"],
            landmarks=landmarks,
            description=raw["description"],
            feature=node_feature(scene_id, raw["region"], landmarks, feature_dim),
        )
    edges = tuple((a, b, float(dist)) for a, b, dist in doc["edges"])
    return SceneGraph(scene_id=scene_id, scene_type=doc["scene_type"], nodes=nodes, edges=edges)


__all__ = [
    "FEATURE_DIM",
    "MIN_SEPARATION",
    "SCENE_TYPES",
    "Node",
    "NoPathError",
    "SceneGraph",
    "generate_scene",
    "load_scene",
    "node_feature",
    "path_length",
    "save_scene",
    "shortest_path",
]
