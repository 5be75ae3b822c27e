"""Model parameters, initialization, and the checkpoint file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    """Architecture sizes shared across the policy and fusion stack."""

    feature_dim: int = 64       # D: visual/node feature width
    exp_dim: int = 48           # d: experience embedding width
    heads: int = 4              # attention heads; must divide exp_dim
    token_vocab: int = 256      # hash buckets for instruction tokens
    field_vocab: int = 1024     # hash buckets per experience field table

    def __post_init__(self) -> None:
        if self.exp_dim % self.heads != 0:
            raise ValueError("heads must divide exp_dim")
        if self.exp_dim % 3 != 0:
            raise ValueError("exp_dim must split evenly across the three field tables")


@dataclass(eq=False)
class EncoderParams:
    """Experience encoder: per-field embedding tables plus an output mix."""

    table_s: np.ndarray   # (field_vocab, exp_dim // 3) scene-type tokens
    table_c: np.ndarray   # (field_vocab, exp_dim // 3) spatial-context tokens
    table_t: np.ndarray   # (field_vocab, exp_dim // 3) strategy tokens
    out_proj: np.ndarray  # (exp_dim, exp_dim)


@dataclass(eq=False)
class FusionParams:
    """Cross-attention from candidate views onto encoded experiences."""

    w_q: np.ndarray       # (feature_dim, exp_dim)
    w_k: np.ndarray       # (exp_dim, exp_dim)
    w_v: np.ndarray       # (exp_dim, exp_dim)
    w_o: np.ndarray       # (exp_dim, exp_dim)
    w_fusion: np.ndarray  # (feature_dim, feature_dim + exp_dim)
    b_fusion: np.ndarray  # (feature_dim,)
    heads: int = 4


@dataclass(eq=False)
class PolicyParams:
    """Everything the decision step needs, fusion stack included."""

    token_embed: np.ndarray  # (token_vocab, feature_dim)
    instr_proj: np.ndarray   # (feature_dim, feature_dim)
    cand_proj: np.ndarray    # (feature_dim, feature_dim)
    scale_gate: float
    stop_bias: float
    fusion: FusionParams
    encoder: EncoderParams
    dims: ModelDims = field(default_factory=ModelDims)


def stable_bucket(token: str, buckets: int, salt: str = "") -> int:
    """Process-independent hash bucket for a token."""
    digest = hashlib.blake2b(f"{salt}:{token}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % buckets


def token_ids(tokens, buckets: int, salt: str = "") -> list[int]:
    return [stable_bucket(t, buckets, salt) for t in tokens]


def init_params(seed: int, dims: ModelDims | None = None, scale: float = 0.1) -> PolicyParams:
    """Small random init, deterministic in the seed."""
    if dims is None:
        dims = ModelDims()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    d3 = dims.exp_dim // 3

    def mat(*shape):
        return rng.normal(0.0, scale, size=shape)

    encoder = EncoderParams(
        table_s=mat(dims.field_vocab, d3),
        table_c=mat(dims.field_vocab, d3),
        table_t=mat(dims.field_vocab, d3),
        out_proj=mat(dims.exp_dim, dims.exp_dim),
    )
    fusion = FusionParams(
        w_q=mat(dims.feature_dim, dims.exp_dim),
        w_k=mat(dims.exp_dim, dims.exp_dim),
        w_v=mat(dims.exp_dim, dims.exp_dim),
        w_o=mat(dims.exp_dim, dims.exp_dim),
        w_fusion=mat(dims.feature_dim, dims.feature_dim + dims.exp_dim),
        b_fusion=np.zeros(dims.feature_dim),
        heads=dims.heads,
    )
    return PolicyParams(
        token_embed=mat(dims.token_vocab, dims.feature_dim),
        instr_proj=mat(dims.feature_dim, dims.feature_dim),
        cand_proj=mat(dims.feature_dim, dims.feature_dim),
        scale_gate=0.0,
        stop_bias=0.0,
        fusion=fusion,
        encoder=encoder,
        dims=dims,
    )


# Named-tensor view used by the optimizer, the gradient checker, and the
# checkpoint writer. Scalars travel as 0-d arrays.
_TENSOR_NAMES = (
    "token_embed", "instr_proj", "cand_proj", "scale_gate", "stop_bias",
    "fusion.w_q", "fusion.w_k", "fusion.w_v", "fusion.w_o",
    "fusion.w_fusion", "fusion.b_fusion",
    "encoder.table_s", "encoder.table_c", "encoder.table_t", "encoder.out_proj",
)


def tensor_map(params: PolicyParams) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name in _TENSOR_NAMES:
        obj = params
        *path, leaf = name.split(".")
        for part in path:
            obj = getattr(obj, part)
        val = getattr(obj, leaf)
        out[name] = np.asarray(val, dtype=float)
    return out


def set_tensor(params: PolicyParams, name: str, value: np.ndarray) -> None:
    obj = params
    *path, leaf = name.split(".")
    for part in path:
        obj = getattr(obj, part)
    current = getattr(obj, leaf)
    if isinstance(current, float):
        setattr(obj, leaf, float(value))
    else:
        setattr(obj, leaf, np.asarray(value, dtype=float))


def zero_grads(params: PolicyParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in tensor_map(params).items()}


def add_grads(total: dict[str, np.ndarray], part: dict[str, np.ndarray]) -> None:
    for name, g in part.items():
        total[name] += g


def apply_sgd(params: PolicyParams, grads: dict[str, np.ndarray], lr: float) -> None:
    """One in-place gradient-descent step."""
    tensors = tensor_map(params)
    for name, g in grads.items():
        set_tensor(params, name, tensors[name] - lr * g)


def clone_params(params: PolicyParams) -> PolicyParams:
    fresh = init_params(0, params.dims)
    for name, t in tensor_map(params).items():
        set_tensor(fresh, name, t.copy())
    return fresh


def save_checkpoint(params: PolicyParams, path: str) -> None:
    """Named-tensor JSON dump with a versioned header."""
    doc = {
        "format": "dualnav-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dims": {f.name: getattr(params.dims, f.name) for f in fields(ModelDims)},
        "tensors": {
            name: {"shape": list(t.shape), "data": t.ravel().tolist()}
            for name, t in tensor_map(params).items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> PolicyParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "dualnav-checkpoint":
        raise ValueError("not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    dims = ModelDims(**doc["dims"])
    params = init_params(0, dims)
    for name, entry in doc["tensors"].items():
        if name not in _TENSOR_NAMES:
            raise ValueError(f"unknown tensor {name!r} in checkpoint")
        arr = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        set_tensor(params, name, arr)
    return params


__all__ = [
    "CHECKPOINT_VERSION",
    "EncoderParams",
    "FusionParams",
    "ModelDims",
    "PolicyParams",
    "add_grads",
    "apply_sgd",
    "clone_params",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "set_tensor",
    "stable_bucket",
    "tensor_map",
    "token_ids",
    "zero_grads",
]
