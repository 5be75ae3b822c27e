"""
The bounded experience library
==============================

Worked similarity, merge, and quality numbers, then the full upsert /
retrieve / cleanup lifecycle under a small capacity.
"""

import math

from dualnav.explib import (
    Experience,
    ExperienceLibrary,
    LibraryParams,
    RetrievalKey,
    merge,
    quality,
    similarity,
)

params = LibraryParams()
print(f"alpha={params.alpha} tau_update={params.tau_update} w={params.w} "
      f"f_max={params.f_max} tau_quality={params.tau_quality}")

office_kitchen = Experience(
    S_t=frozenset({"office"}), C_s=frozenset({"lobby"}),
    R_s=frozenset({"vase"}), T_n=frozenset({"prefer"}),
    eta_s=0.8, f=5, t_last=0.0,
)
office_lamp = Experience(
    S_t=frozenset({"office"}), C_s=frozenset({"lobby"}),
    R_s=frozenset({"lamp"}), T_n=frozenset({"branch"}),
    eta_s=0.8, f=5, t_last=0.0,
)

# Two identical and two disjoint categorical fields, same numeric profile:
# 0.6 * 0.5 + 0.4 * 1.0 = 0.7, exactly the merge threshold.
print(f"\nsimilarity(office_kitchen, office_lamp) = {similarity(office_kitchen, office_lamp, params):.3f}")

merged = merge(office_kitchen, office_lamp, params.update_weight)
print(f"merged eta 0.6*0.8 + 0.4*0.8 = {merged.eta_s:.2f}, frequency {office_kitchen.f}+1 = {merged.f}")
print(f"merged rules: {sorted(merged.R_s)} (set union keeps both)")

q_now = quality(office_kitchen, now=0.0, params=params)
q_old = quality(office_kitchen, now=10.0, params=params)
print(f"\nquality fresh = {q_now:.4f}, after 10 idle time units = {q_old:.4f} "
      f"(recency term decays as exp(-0.1 * dt) = {math.exp(-1.0):.4f})")

# Lifecycle: capacity 3, four distinct experiences. The lowest-quality
# entry is evicted the moment the bound would be exceeded.
lib = ExperienceLibrary(capacity=3)
seeds = [
    ("mall", "atrium", "clock", 0.9),
    ("hotel", "suite", "lamp", 0.4),
    ("depot", "dock", "crate", 0.2),
    ("cinema", "foyer", "poster", 0.8),
]
for i, (scene_type, region, landmark, eta) in enumerate(seeds):
    e = Experience(
        S_t=frozenset({scene_type}), C_s=frozenset({region}),
        R_s=frozenset({landmark}), T_n=frozenset({"prefer"}),
        eta_s=eta, f=1, t_last=float(i),
    )
    event = lib.upsert(e, now=float(i))
    print(f"upsert {scene_type}: {event} (size {len(lib)})")

key = RetrievalKey(S_t_cur=frozenset({"mall"}), C_s_cur=frozenset({"atrium"}),
                   T_n_cur=frozenset({"prefer"}))
hits = lib.retrieve(key, now=4.0)
print(f"\nretrieve for a mall atrium: {[sorted(e.S_t) for e in hits]}")

# After a long idle stretch the recency term is gone; the weak hotel entry
# (quality 0.5*0.4 + 0.3*0.1 = 0.23 < 0.3) no longer earns its slot.
removed = lib.cleanup(now=30.0)
print(f"cleanup after a long idle stretch removed {removed}, {len(lib)} remain")
