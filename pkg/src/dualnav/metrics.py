"""Trajectory evaluation: TL, NE, SR, SPL, and nDTW over scene graphs.

All distances are geodesic (shortest path through the graph), not straight
line, so a wall between two rooms counts against the agent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .env import Episode, validate_episode
from .scene import SceneGraph, path_length

SUCCESS_RADIUS = 3.0

CSV_HEADER = ("episode_id", "TL", "NE", "SR", "SPL", "nDTW")


@dataclass(frozen=True)
class MetricsReport:
    episode_id: str
    TL: float
    NE: float
    SR: int
    SPL: float
    nDTW: float

    def __post_init__(self) -> None:
        for name in ("TL", "NE", "SPL", "nDTW"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        if self.SR not in (0, 1):
            raise ValueError("SR must be 0 or 1")
        if self.SPL > self.SR + 1e-12:
            raise ValueError("SPL cannot exceed SR")


def dtw_cost(scene: SceneGraph, seq_a: list[str], seq_b: list[str]) -> float:
    """Dynamic-time-warping cost between two node sequences.

    Pairwise cost is the geodesic distance between matched nodes.
    """
    if not seq_a or not seq_b:
        raise ValueError("DTW needs non-empty sequences")
    n, m = len(seq_a), len(seq_b)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d = scene.geodesic(seq_a[i - 1], seq_b[j - 1])
            acc[i, j] = d + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def ndtw(scene: SceneGraph, trajectory: list[str], reference: list[str], radius: float = SUCCESS_RADIUS) -> float:
    """Normalized DTW fidelity in (0, 1]; 1.0 only for the exact reference."""
    cost = dtw_cost(scene, trajectory, reference)
    return float(math.exp(-cost / (len(reference) * radius)))


def evaluate(
    scene: SceneGraph,
    episode: Episode,
    trajectory: list[str],
    radius: float = SUCCESS_RADIUS,
) -> MetricsReport:
    """Score a finished trajectory against an episode.

    The trajectory must start at the episode start and move along edges
    only; success means stopping strictly inside the radius around the
    goal, measured along the graph.
    """
    validate_episode(scene, episode)
    if not trajectory:
        raise ValueError("trajectory is empty")
    if trajectory[0] != episode.start:
        raise ValueError(f"trajectory starts at {trajectory[0]}, episode starts at {episode.start}")
    for node in trajectory:
        if node not in scene.nodes:
            raise ValueError(f"trajectory visits unknown node {node}")
    tl = path_length(scene, trajectory)
    ne = scene.geodesic(trajectory[-1], episode.goal)
    sr = 1 if ne < radius else 0
    l_star = path_length(scene, list(episode.reference_path))
    spl = sr * l_star / max(tl, l_star) if l_star > 0 else float(sr)
    fidelity = ndtw(scene, trajectory, list(episode.reference_path), radius)
    return MetricsReport(
        episode_id=episode.episode_id,
        TL=tl,
        NE=ne,
        SR=sr,
        SPL=spl,
        nDTW=fidelity,
    )


def write_metrics_csv(path: str, reports: list[MetricsReport]) -> None:
    """Write reports as CSV with the canonical header."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in reports:
            writer.writerow([r.episode_id, f"{r.TL:.6f}", f"{r.NE:.6f}", r.SR, f"{r.SPL:.6f}", f"{r.nDTW:.6f}"])


def read_metrics_csv(path: str) -> list[MetricsReport]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        out = []
        for row in reader:
            out.append(
                MetricsReport(
                    episode_id=row[0],
                    TL=float(row[1]),
                    NE=float(row[2]),
                    SR=int(row[3]),
                    SPL=float(row[4]),
                    nDTW=float(row[5]),
                )
            )
        return out


__all__ = [
    "CSV_HEADER",
    "MetricsReport",
    "SUCCESS_RADIUS",
    "dtw_cost",
    "evaluate",
    "ndtw",
    "read_metrics_csv",
    "write_metrics_csv",
]
