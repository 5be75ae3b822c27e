"""Bounded experience library with similarity-gated inserts and decay.

Entries are immutable values; merges and cleanup swap entries for new
objects under a writer lock, so concurrent readers can hold retrieved
entries without ever observing a partial update.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field

DEFAULT_CAPACITY = 100
LIBRARY_FORMAT = "dualnav-library"
LIBRARY_VERSION = 1


@dataclass(frozen=True)
class LibraryParams:
    """Constants controlling similarity, merging, quality, and retrieval."""

    alpha: float = 0.6           # categorical vs numeric similarity mix
    tau_update: float = 0.7      # merge-vs-append similarity gate
    update_weight: float = 0.6   # weight of the old success rate in a merge
    w: tuple[float, float, float] = (0.5, 0.3, 0.2)  # quality term weights
    f_max: int = 10              # frequency saturation
    beta: float = 0.1            # recency decay rate per time unit
    tau_quality: float = 0.3     # cleanup keep threshold
    tau_retrieve: float = 0.5    # retrieval similarity floor
    m_retrieve: int = 5          # retrieval count cap


@dataclass(frozen=True)
class Experience:
    """One distilled navigation experience.

    The four token sets hold scene type, spatial context, spatial rules,
    and strategy; eta_s is the estimated success rate of the strategy.
    """

    S_t: frozenset[str]
    C_s: frozenset[str]
    R_s: frozenset[str]
    T_n: frozenset[str]
    eta_s: float
    f: int = 1
    t_last: float = 0.0
    raw_text: str = ""

    def __post_init__(self) -> None:
        for name in ("S_t", "C_s", "R_s", "T_n"):
            val = getattr(self, name)
            if not isinstance(val, frozenset):
                object.__setattr__(self, name, frozenset(val))
        if not 0.0 <= self.eta_s <= 1.0:
            raise ValueError(f"eta_s must lie in [0, 1], got {self.eta_s}")
        if self.f < 1:
            raise ValueError(f"f must be >= 1, got {self.f}")


@dataclass(frozen=True)
class RetrievalKey:
    """Current-context token sets used to look up relevant experiences."""

    S_t_cur: frozenset[str]
    C_s_cur: frozenset[str]
    T_n_cur: frozenset[str]

    def __post_init__(self) -> None:
        sets = (self.S_t_cur, self.C_s_cur, self.T_n_cur)
        for name, val in zip(("S_t_cur", "C_s_cur", "T_n_cur"), sets):
            if not isinstance(val, frozenset):
                object.__setattr__(self, name, frozenset(val))
        if not any((self.S_t_cur, self.C_s_cur, self.T_n_cur)):
            raise ValueError("retrieval key needs at least one non-empty field")


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    """Set overlap in [0, 1]; two empty sets count as identical."""
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def categorical_similarity(e1: Experience, e2: Experience) -> float:
    """Mean Jaccard overlap across the four token-set fields."""
    total = (
        jaccard(e1.S_t, e2.S_t)
        + jaccard(e1.C_s, e2.C_s)
        + jaccard(e1.R_s, e2.R_s)
        + jaccard(e1.T_n, e2.T_n)
    )
    return total / 4.0


def numeric_vector(e: Experience, f_max: int) -> tuple[float, float]:
    return (e.eta_s, min(e.f / f_max, 1.0))


def numeric_similarity(e1: Experience, e2: Experience, f_max: int) -> float:
    """Cosine similarity of the numeric profiles, clamped to [0, 1]."""
    v1 = numeric_vector(e1, f_max)
    v2 = numeric_vector(e2, f_max)
    n1 = math.hypot(*v1)
    n2 = math.hypot(*v2)
    if n1 == 0.0 and n2 == 0.0:
        return 1.0
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    cos = (v1[0] * v2[0] + v1[1] * v2[1]) / (n1 * n2)
    return max(0.0, min(1.0, cos))


def similarity(e1: Experience, e2: Experience, params: LibraryParams) -> float:
    """Blend of categorical and numeric similarity, in [0, 1]."""
    cat = categorical_similarity(e1, e2)
    num = numeric_similarity(e1, e2, params.f_max)
    return params.alpha * cat + (1.0 - params.alpha) * num


def merge(e_old: Experience, e_new: Experience, weight: float) -> Experience:
    """Fold a new experience into an existing one.

    Token sets union, the success rate is a weighted blend favoring the
    old entry by ``weight``, and the reuse count increments by exactly 1.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError("merge weight must lie in [0, 1]")
    return Experience(
        S_t=e_old.S_t | e_new.S_t,
        C_s=e_old.C_s | e_new.C_s,
        R_s=e_old.R_s | e_new.R_s,
        T_n=e_old.T_n | e_new.T_n,
        eta_s=weight * e_old.eta_s + (1.0 - weight) * e_new.eta_s,
        f=e_old.f + 1,
        t_last=e_new.t_last,
        raw_text=e_new.raw_text or e_old.raw_text,
    )


def quality(e: Experience, now: float, params: LibraryParams) -> float:
    """Quality score mixing success rate, reuse frequency, and recency."""
    if now < e.t_last:
        raise ValueError(f"now={now} precedes the entry's t_last={e.t_last}")
    w_eta, w_freq, w_rec = params.w
    return (
        w_eta * e.eta_s
        + w_freq * min(e.f / params.f_max, 1.0)
        + w_rec * math.exp(-params.beta * (now - e.t_last))
    )


def key_similarity(key: RetrievalKey, e: Experience) -> float:
    """Mean Jaccard between the key and the entry's matching fields."""
    total = (
        jaccard(key.S_t_cur, e.S_t)
        + jaccard(key.C_s_cur, e.C_s)
        + jaccard(key.T_n_cur, e.T_n)
    )
    return total / 3.0


@dataclass
class ExperienceLibrary:
    """Capacity-bounded store; never holds more than K entries."""

    capacity: int = DEFAULT_CAPACITY
    params: LibraryParams = field(default_factory=LibraryParams)
    entries: list[Experience] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if len(self.entries) > self.capacity:
            raise ValueError("initial entries exceed capacity")

    def __len__(self) -> int:
        return len(self.entries)

    def snapshot(self) -> list[Experience]:
        """Entries as an independent list (entries themselves are immutable)."""
        with self._lock:
            return list(self.entries)

    def upsert(self, e_new: Experience, now: float) -> str:
        """Insert or merge one experience; returns what happened.

        The most similar existing entry absorbs the new one when their
        similarity reaches tau_update; otherwise the entry is appended and,
        if over capacity, the lowest-quality entry is evicted.
        """
        with self._lock:
            best_idx = -1
            best_sim = -1.0
            for idx, entry in enumerate(self.entries):
                sim = similarity(entry, e_new, self.params)
                if sim > best_sim:  # strict: ties keep the lowest index
                    best_sim = sim
                    best_idx = idx
            if best_idx >= 0 and best_sim >= self.params.tau_update:
                self.entries[best_idx] = merge(self.entries[best_idx], e_new, self.params.update_weight)
                return "merged"
            self.entries.append(e_new)
            if len(self.entries) <= self.capacity:
                return "appended"
            qualities = [quality(e, now, self.params) for e in self.entries]
            evict_idx = min(range(len(qualities)), key=lambda i: (qualities[i], i))
            self.entries.pop(evict_idx)
            return "evicted"

    def cleanup(self, now: float) -> int:
        """Drop stale entries; keep the K best by quality, ordered best-first.

        Returns the number of entries removed.
        """
        with self._lock:
            before = len(self.entries)
            scored = [(quality(e, now, self.params), e) for e in self.entries]
            kept = [(q, e) for q, e in scored if q >= self.params.tau_quality]
            kept.sort(key=lambda pair: (-pair[0], pair[1].t_last))
            self.entries = [e for _, e in kept[: self.capacity]]
            return before - len(self.entries)

    def retrieve(self, key: RetrievalKey, now: float) -> list[Experience]:
        """Most relevant entries for a context, best match first.

        Entries below the similarity floor are excluded; ties prefer the
        higher-quality entry, then insertion order.
        """
        with self._lock:
            scored = []
            for idx, e in enumerate(self.entries):
                sim = key_similarity(key, e)
                if sim >= self.params.tau_retrieve:
                    scored.append((sim, quality(e, now, self.params), idx, e))
        scored.sort(key=lambda item: (-item[0], -item[1], item[2]))
        return [e for _, _, _, e in scored[: self.params.m_retrieve]]


def save_library(lib: ExperienceLibrary, path: str) -> None:
    """JSON-lines dump: one header line, then one entry per line."""
    header = {
        "format": LIBRARY_FORMAT,
        "version": LIBRARY_VERSION,
        "K": lib.capacity,
        "params": {
            "alpha": lib.params.alpha,
            "tau_update": lib.params.tau_update,
            "update_weight": lib.params.update_weight,
            "w": list(lib.params.w),
            "f_max": lib.params.f_max,
            "beta": lib.params.beta,
            "tau_quality": lib.params.tau_quality,
            "tau_retrieve": lib.params.tau_retrieve,
            "m_retrieve": lib.params.m_retrieve,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for e in lib.snapshot():
            fh.write(
                json.dumps(
                    {
                        "S_t": sorted(e.S_t),
                        "C_s": sorted(e.C_s),
                        "R_s": sorted(e.R_s),
                        "T_n": sorted(e.T_n),
                        "eta_s": e.eta_s,
                        "f": e.f,
                        "t_last": e.t_last,
                        "raw_text": e.raw_text,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_library(path: str) -> ExperienceLibrary:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError("library file is empty")
    header = json.loads(lines[0])
    if header.get("format") != LIBRARY_FORMAT:
        raise ValueError("not a library file")
    if header.get("version") != LIBRARY_VERSION:
        raise ValueError(f"unsupported library version {header.get('version')}")
    raw = header["params"]
    params = LibraryParams(
        alpha=raw["alpha"],
        tau_update=raw["tau_update"],
        update_weight=raw["update_weight"],
        w=tuple(raw["w"]),
        f_max=raw["f_max"],
        beta=raw["beta"],
        tau_quality=raw["tau_quality"],
        tau_retrieve=raw["tau_retrieve"],
        m_retrieve=raw["m_retrieve"],
    )
    entries = []
    for line in lines[1:]:
        rec = json.loads(line)
        entries.append(
            Experience(
                S_t=frozenset(rec["S_t"]),
                C_s=frozenset(rec["C_s"]),
                R_s=frozenset(rec["R_s"]),
                T_n=frozenset(rec["T_n"]),
                eta_s=rec["eta_s"],
                f=rec["f"],
                t_last=rec["t_last"],
                raw_text=rec.get("raw_text", ""),
            )
        )
    return ExperienceLibrary(capacity=header["K"], params=params, entries=entries)


__all__ = [
    "DEFAULT_CAPACITY",
    "Experience",
    "ExperienceLibrary",
    "LibraryParams",
    "RetrievalKey",
    "categorical_similarity",
    "jaccard",
    "key_similarity",
    "load_library",
    "merge",
    "numeric_similarity",
    "numeric_vector",
    "quality",
    "save_library",
    "similarity",
]
