"""Experience encoding, cross-attention fusion, and manual gradients.

The decision pipeline runs in two phases.  Per episode: encode the
instruction and the retrieved experiences (key/value projections
included).  Per step: project the local candidate views, attend onto the
encoded experiences, fuse, and score the ordered action space.  Both
phases cache every intermediate so the backward pass can produce exact
analytic gradients for all parameters; gradient correctness is enforced
against finite differences in the test suite.

Arrays can be padded to fixed shapes with accompanying masks.  Padding
keeps the multiply-accumulate count of a decision step independent of how
many candidates or experiences happen to be valid, which is what makes
per-step cost comparisons across task difficulty meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .explib import Experience
from .instructions import Instruction
from .params import EncoderParams, FusionParams, PolicyParams, token_ids

NEG_INF = -1e30

_FIELD_SALTS = (("S_t", "table_s"), ("C_s", "table_c"), ("T_n", "table_t"))


class NoExperiencesError(ValueError):
    """Attention was asked to run with zero valid experiences."""


def encode_experience(enc: EncoderParams, e: Experience) -> np.ndarray:
    """Embed one experience into a d-vector.

    Each categorical field is mean-pooled over hash-bucket embeddings
    (empty fields pool to zero), the three field vectors are concatenated,
    then mixed through the output projection and a ReLU.
    """
    vocab, d3 = enc.table_s.shape
    parts = []
    for field_name, table_name in _FIELD_SALTS:
        tokens = sorted(getattr(e, field_name))
        table = getattr(enc, table_name)
        if tokens:
            ids = token_ids(tokens, vocab, salt=field_name)
            parts.append(table[ids].mean(axis=0))
        else:
            parts.append(np.zeros(d3))
    z = np.concatenate(parts)
    return np.maximum(enc.out_proj @ z, 0.0)


def attend(
    fp: FusionParams,
    f_v: np.ndarray,
    f_e: np.ndarray,
    key_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head attention from candidate views onto experiences.

    Returns (F_att with shape (L, d), omega with shape (heads, L, M)).
    Masked experience rows receive exactly zero weight; each attention row
    is a distribution over the valid experiences.
    """
    f_v = np.atleast_2d(np.asarray(f_v, dtype=float))
    f_e = np.atleast_2d(np.asarray(f_e, dtype=float))
    m = f_e.shape[0]
    if key_mask is None:
        key_mask = np.ones(m, dtype=bool)
    if m == 0 or not key_mask.any():
        raise NoExperiencesError("attend needs at least one valid experience row")
    fwd = _attention_forward(fp, f_v, f_e, key_mask)
    return fwd["f_att"], fwd["omega"]


def _attention_core(fp: FusionParams, q: np.ndarray, k: np.ndarray, v: np.ndarray, key_mask) -> dict:
    length = q.shape[0]
    m = k.shape[0]
    h = fp.heads
    d = fp.w_q.shape[1]
    dh = d // h
    scale = 1.0 / np.sqrt(dh)
    qh = q.reshape(length, h, dh).transpose(1, 0, 2)
    kh = k.reshape(m, h, dh).transpose(1, 0, 2)
    vh = v.reshape(m, h, dh).transpose(1, 0, 2)
    logits = (qh @ kh.transpose(0, 2, 1)) * scale
    logits = np.where(key_mask[None, None, :], logits, -np.inf)
    shifted = logits - logits.max(axis=2, keepdims=True)
    expd = np.exp(shifted)
    omega = expd / expd.sum(axis=2, keepdims=True)
    heads_out = omega @ vh
    concat = heads_out.transpose(1, 0, 2).reshape(length, d)
    f_att = concat @ fp.w_o
    return {
        "q": q, "qh": qh, "kh": kh, "vh": vh, "omega": omega,
        "concat": concat, "f_att": f_att, "scale": scale,
    }


def _attention_forward(fp: FusionParams, f_v, f_e, key_mask) -> dict:
    return _attention_core(fp, f_v @ fp.w_q, f_e @ fp.w_k, f_e @ fp.w_v, key_mask)


def fuse(fp: FusionParams, f_v: np.ndarray, f_att: np.ndarray) -> np.ndarray:
    """Fused candidate views: relu(W_fusion [F_v; F_att] + b)."""
    x = np.concatenate([np.atleast_2d(f_v), np.atleast_2d(f_att)], axis=1)
    pre = x @ fp.w_fusion.T + fp.b_fusion
    return np.maximum(pre, 0.0)


@dataclass
class EpisodeSetup:
    """Per-episode forward cache: instruction and experience encodings."""

    instr_ids: list[int]
    mean_embed: np.ndarray        # (D,)
    q: np.ndarray                 # (D,) instruction vector
    r: np.ndarray                 # (D,) cand_proj^T q, shared by all scores
    experiences: list[Experience]
    exp_ids: list[dict[str, list[int]]]
    z: np.ndarray                 # (Mp, d) concatenated field means
    pre_enc: np.ndarray           # (Mp, d) encoder pre-activations
    f_e: np.ndarray               # (Mp, d) encoded experiences (zero rows padded)
    k: np.ndarray                 # (Mp, d)
    v: np.ndarray                 # (Mp, d)
    key_mask: np.ndarray          # (Mp,) bool
    m_valid: int
    macs: int


@dataclass
class StepForward:
    """Per-step forward cache, everything the backward pass needs."""

    f_v: np.ndarray               # (Lp, D) raw candidate features, padded
    local_mask: np.ndarray        # (Lp,) bool
    glob: np.ndarray              # (Gp, D) cached frontier features, padded
    glob_mask: np.ndarray         # (Gp,) bool
    fused: bool
    attn: dict | None
    x: np.ndarray | None          # (Lp, D+d)
    pre_fuse: np.ndarray | None   # (Lp, D)
    f_fused: np.ndarray           # (Lp, D)
    gate: float
    local_raw: np.ndarray         # (Lp,) ungated local scores
    glob_raw: np.ndarray          # (Gp,) ungated global scores
    mean_fused: np.ndarray        # (D,)
    scores: np.ndarray            # (1+Lp+Gp,) gated, padding at NEG_INF
    action_mask: np.ndarray       # (1+Lp+Gp,) bool
    macs: int

    def valid_scores(self) -> np.ndarray:
        return self.scores[self.action_mask]


@dataclass
class SetupAccum:
    """Gradient accumulator for quantities shared across steps."""

    dq: np.ndarray
    dr: np.ndarray
    dk: np.ndarray
    dv: np.ndarray


def _pad_rows(mat: np.ndarray, rows: int, width: int) -> np.ndarray:
    mat = np.asarray(mat, dtype=float).reshape(-1, width)
    if mat.shape[0] > rows:
        raise ValueError(f"cannot pad {mat.shape[0]} rows down to {rows}")
    if mat.shape[0] == rows:
        return mat
    out = np.zeros((rows, width))
    out[: mat.shape[0]] = mat
    return out


def setup_episode(
    params: PolicyParams,
    instruction: Instruction,
    experiences: list[Experience],
    m_pad: int | None = None,
) -> EpisodeSetup:
    """Encode the instruction and experiences once for a whole episode."""
    dims = params.dims
    ids = token_ids(instruction.tokens, dims.token_vocab)
    if not ids:
        raise ValueError("instruction has no tokens")
    mean_embed = params.token_embed[ids].mean(axis=0)
    q = params.instr_proj @ mean_embed
    r = params.cand_proj.T @ q
    macs = len(ids) * dims.feature_dim + 2 * dims.feature_dim**2

    m_valid = len(experiences)
    mp = max(m_valid, m_pad or 0)
    d = dims.exp_dim
    d3 = d // 3
    vocab = dims.field_vocab
    exp_ids: list[dict[str, list[int]]] = []
    z = np.zeros((mp, d))
    for idx, e in enumerate(experiences):
        ids_by_field: dict[str, list[int]] = {}
        parts = []
        for field_name, _ in _FIELD_SALTS:
            tokens = sorted(getattr(e, field_name))
            fids = token_ids(tokens, vocab, salt=field_name) if tokens else []
            ids_by_field[field_name] = fids
            table = getattr(params.encoder, _table_for(field_name))
            parts.append(table[fids].mean(axis=0) if fids else np.zeros(d3))
            macs += len(fids) * d3
        exp_ids.append(ids_by_field)
        z[idx] = np.concatenate(parts)
    pre_enc = np.zeros((mp, d))
    f_e = np.zeros((mp, d))
    if m_valid:
        pre_enc[:m_valid] = z[:m_valid] @ params.encoder.out_proj.T
        f_e[:m_valid] = np.maximum(pre_enc[:m_valid], 0.0)
        macs += m_valid * d * d
    k = f_e @ params.fusion.w_k
    v = f_e @ params.fusion.w_v
    macs += 2 * mp * d * d
    key_mask = np.zeros(mp, dtype=bool)
    key_mask[:m_valid] = True
    return EpisodeSetup(
        instr_ids=ids,
        mean_embed=mean_embed,
        q=q,
        r=r,
        experiences=list(experiences),
        exp_ids=exp_ids,
        z=z,
        pre_enc=pre_enc,
        f_e=f_e,
        k=k,
        v=v,
        key_mask=key_mask,
        m_valid=m_valid,
        macs=macs,
    )


def _table_for(field_name: str) -> str:
    for fname, tname in _FIELD_SALTS:
        if fname == field_name:
            return tname
    raise KeyError(field_name)


def step_forward(
    params: PolicyParams,
    setup: EpisodeSetup,
    f_v_valid: np.ndarray,
    glob_valid: np.ndarray,
    l_pad: int | None = None,
    g_pad: int | None = None,
) -> StepForward:
    """Fuse and score one decision step.

    With zero valid experiences the attention/fusion stage is skipped and
    raw candidate features are scored directly (the unfused fallback).
    """
    dims = params.dims
    big_d = dims.feature_dim
    d = dims.exp_dim
    f_v_valid = np.asarray(f_v_valid, dtype=float).reshape(-1, big_d)
    l_valid = f_v_valid.shape[0]
    if l_valid == 0:
        raise ValueError("a decision step needs at least one local candidate")
    lp = max(l_valid, l_pad or 0)
    gp_valid = np.asarray(glob_valid, dtype=float).reshape(-1, big_d)
    g_valid = gp_valid.shape[0]
    gp = max(g_valid, g_pad or 0)
    f_v = _pad_rows(f_v_valid, lp, big_d)
    glob = _pad_rows(gp_valid, gp, big_d)
    local_mask = np.zeros(lp, dtype=bool)
    local_mask[:l_valid] = True
    glob_mask = np.zeros(gp, dtype=bool)
    glob_mask[:g_valid] = True

    macs = 0
    mp = setup.f_e.shape[0]
    if setup.m_valid > 0:
        attn = _attention_forward_cached(params.fusion, f_v, setup)
        x = np.concatenate([f_v, attn["f_att"]], axis=1)
        pre_fuse = x @ params.fusion.w_fusion.T + params.fusion.b_fusion
        f_fused = np.maximum(pre_fuse, 0.0)
        fused = True
        macs += lp * big_d * d          # Q projection
        macs += 2 * lp * mp * d         # attention logits and weighted sum
        macs += lp * d * d              # output projection
        macs += lp * (big_d + d) * big_d  # fusion layer
    else:
        attn = None
        x = None
        pre_fuse = None
        f_fused = f_v
        fused = False

    gate = 1.0 / (1.0 + np.exp(-params.scale_gate))
    local_raw = f_fused @ setup.r
    glob_raw = glob @ setup.r
    denom = float(local_mask.sum())
    mean_fused = (local_mask.astype(float) @ f_fused) / denom
    stop_score = params.stop_bias + float(mean_fused @ setup.q)
    macs += lp * big_d + gp * big_d     # local and global score blocks
    macs += lp * big_d + big_d          # masked mean and stop alignment

    scores = np.concatenate(([stop_score], gate * local_raw, (1.0 - gate) * glob_raw))
    action_mask = np.concatenate(([True], local_mask, glob_mask))
    scores = np.where(action_mask, scores, NEG_INF)
    return StepForward(
        f_v=f_v,
        local_mask=local_mask,
        glob=glob,
        glob_mask=glob_mask,
        fused=fused,
        attn=attn,
        x=x,
        pre_fuse=pre_fuse,
        f_fused=f_fused,
        gate=float(gate),
        local_raw=local_raw,
        glob_raw=glob_raw,
        mean_fused=mean_fused,
        scores=scores,
        action_mask=action_mask,
        macs=macs,
    )


def _attention_forward_cached(fp: FusionParams, f_v: np.ndarray, setup: EpisodeSetup) -> dict:
    """Attention forward reusing the per-episode K/V projections."""
    return _attention_core(fp, f_v @ fp.w_q, setup.k, setup.v, setup.key_mask)


def new_accum(params: PolicyParams, setup: EpisodeSetup) -> SetupAccum:
    d = params.dims.exp_dim
    big_d = params.dims.feature_dim
    mp = setup.f_e.shape[0]
    return SetupAccum(
        dq=np.zeros(big_d),
        dr=np.zeros(big_d),
        dk=np.zeros((mp, d)),
        dv=np.zeros((mp, d)),
    )


def step_backward(
    params: PolicyParams,
    setup: EpisodeSetup,
    fwd: StepForward,
    dscores: np.ndarray,
    grads: dict[str, np.ndarray],
    accum: SetupAccum,
) -> None:
    """Backpropagate one step's upstream score gradient.

    Writes parameter gradients into ``grads`` (same keys as tensor_map)
    and episode-shared contributions into ``accum``.  ``dscores`` must be
    zero at padded action slots.
    """
    dscores = np.asarray(dscores, dtype=float)
    lp = fwd.f_v.shape[0]
    u0 = float(dscores[0])
    u_loc = dscores[1 : 1 + lp]
    u_glob = dscores[1 + lp :]
    g = fwd.gate

    # Stop path: bias, instruction alignment, and the masked mean.
    grads["stop_bias"] += u0
    accum.dq += u0 * fwd.mean_fused
    denom = float(fwd.local_mask.sum())
    d_f_fused = (u0 / denom) * fwd.local_mask.astype(float)[:, None] * setup.q[None, :]

    # Gate mixes the two blocks; its gradient sees both raw score vectors.
    dgate = float(u_loc @ fwd.local_raw) - float(u_glob @ fwd.glob_raw)
    grads["scale_gate"] += dgate * g * (1.0 - g)

    # Local block through the fused features, global block through r only.
    d_f_fused += g * u_loc[:, None] * setup.r[None, :]
    accum.dr += g * (fwd.f_fused.T @ u_loc)
    accum.dr += (1.0 - g) * (fwd.glob.T @ u_glob)

    if fwd.fused:
        dpre = d_f_fused * (fwd.pre_fuse > 0)
        grads["fusion.w_fusion"] += dpre.T @ fwd.x
        grads["fusion.b_fusion"] += dpre.sum(axis=0)
        dx = dpre @ params.fusion.w_fusion
        d_f_att = dx[:, params.dims.feature_dim :]
        _attention_backward(params.fusion, fwd, setup, d_f_att, grads, accum)
    # Fallback steps scored raw features; those carry no parameters.


def _attention_backward(fp, fwd: StepForward, setup: EpisodeSetup, d_f_att, grads, accum) -> None:
    attn = fwd.attn
    h = fp.heads
    d = fp.w_q.shape[1]
    lp = fwd.f_v.shape[0]
    mp = setup.f_e.shape[0]
    dh = d // h
    dconcat = d_f_att @ fp.w_o.T
    grads["fusion.w_o"] += attn["concat"].T @ d_f_att
    dheads = dconcat.reshape(lp, h, dh).transpose(1, 0, 2)
    domega = dheads @ attn["vh"].transpose(0, 2, 1)
    dvh = attn["omega"].transpose(0, 2, 1) @ dheads
    omega = attn["omega"]
    dlogits = omega * (domega - (domega * omega).sum(axis=2, keepdims=True))
    scale = attn["scale"]
    dqh = (dlogits @ attn["kh"]) * scale
    dkh = (dlogits.transpose(0, 2, 1) @ attn["qh"]) * scale
    dq_flat = dqh.transpose(1, 0, 2).reshape(lp, d)
    grads["fusion.w_q"] += fwd.f_v.T @ dq_flat
    accum.dk += dkh.transpose(1, 0, 2).reshape(mp, d)
    accum.dv += dvh.transpose(1, 0, 2).reshape(mp, d)


def setup_backward(
    params: PolicyParams,
    setup: EpisodeSetup,
    accum: SetupAccum,
    grads: dict[str, np.ndarray],
) -> None:
    """Close the episode-level parts of the backward pass."""
    grads["fusion.w_k"] += setup.f_e.T @ accum.dk
    grads["fusion.w_v"] += setup.f_e.T @ accum.dv
    d_f_e = accum.dk @ params.fusion.w_k.T + accum.dv @ params.fusion.w_v.T

    d3 = params.dims.exp_dim // 3
    for idx in range(setup.m_valid):
        dpre = d_f_e[idx] * (setup.pre_enc[idx] > 0)
        grads["encoder.out_proj"] += np.outer(dpre, setup.z[idx])
        dz = params.encoder.out_proj.T @ dpre
        for fidx, (field_name, table_name) in enumerate(_FIELD_SALTS):
            ids = setup.exp_ids[idx][field_name]
            if not ids:
                continue
            dv = dz[fidx * d3 : (fidx + 1) * d3] / len(ids)
            for tid in ids:
                grads[f"encoder.{table_name}"][tid] += dv

    # r = cand_proj^T q couples the candidate projection and the
    # instruction vector; fold the accumulated dr into both.
    grads["cand_proj"] += np.outer(setup.q, accum.dr)
    accum.dq += params.cand_proj @ accum.dr

    grads["instr_proj"] += np.outer(accum.dq, setup.mean_embed)
    dmean = params.instr_proj.T @ accum.dq
    share = dmean / len(setup.instr_ids)
    for tid in setup.instr_ids:
        grads["token_embed"][tid] += share


__all__ = [
    "EpisodeSetup",
    "NoExperiencesError",
    "SetupAccum",
    "StepForward",
    "attend",
    "encode_experience",
    "fuse",
    "new_accum",
    "setup_backward",
    "setup_episode",
    "step_backward",
    "step_forward",
]
