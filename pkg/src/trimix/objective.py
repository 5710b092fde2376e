"""The TriMix objective.

One training step mixes a view with its row-reversed batch, pushes the
virtual batch through the network, and combines three terms: the
redundancy-reduction loss on the feature correlation matrix, the
decomposition loss tying the sample-similarity matrix to its mixing
ground truth, and the consistency loss tying virtual embeddings to the
linear mix of the originals'.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchParityError, ContractError, DimensionError, NumericError
from .model import ModelParams, forward
from .stats import CorrelationMatrix, cross_correlation, row_softmax, standardize
from .tensor import Tensor, add, apply_op, scalar_mul


@dataclass(frozen=True)
class MixFactor:
    """Per-step mixing coefficient, shared by every place that mixes."""

    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ContractError(f"mix factor must lie in [0, 1], got {self.value}")


@dataclass
class GroundTruthMatrix:
    """lam on the diagonal, 1-lam on the anti-diagonal, zero elsewhere."""

    values: Tensor
    lam: float


@dataclass
class LossBreakdown:
    total: float
    l_bt_inv: float
    l_bt_rr: float
    l_vrt: float
    l_con: float
    lam: float
    loss: Tensor = field(repr=False, default=None)  # on-tape scalar for backward


def sample_mix_factor(cfg, rng) -> MixFactor:
    if cfg.lambda_policy == "fixed":
        return MixFactor(cfg.lambda_fixed)
    return MixFactor(float(rng.random()))


def mixup(x: Tensor, lam) -> Tensor:
    """lam * x + (1 - lam) * flip_rows(x); even batch so no self-mixing."""
    lam = lam.value if isinstance(lam, MixFactor) else float(lam)
    MixFactor(lam)  # range check
    if x.shape[0] % 2 != 0:
        raise BatchParityError(
            f"mixup: batch size {x.shape[0]} is odd; the flip pairing needs an even batch"
        )
    xd = x.data
    out = lam * xd + (1.0 - lam) * xd[::-1]

    # the reversal permutation is symmetric, so the adjoint mixes the
    # upstream gradient with the same coefficients
    def rule(g):
        return (lam * g + (1.0 - lam) * g[::-1],)

    return apply_op("mixup", (x,), out, rule)


def ground_truth_matrix(batch: int, lam) -> GroundTruthMatrix:
    lam = lam.value if isinstance(lam, MixFactor) else float(lam)
    MixFactor(lam)  # range check
    if batch < 2:
        raise ContractError(f"ground_truth_matrix: batch must be >= 2, got {batch}")
    if batch % 2 != 0:
        raise BatchParityError(
            f"ground_truth_matrix: batch size {batch} is odd; the center row would "
            "conflate a mixed sample with a pure one"
        )
    eye = np.eye(batch)
    values = lam * eye + (1.0 - lam) * np.fliplr(eye)
    return GroundTruthMatrix(values=Tensor(values), lam=lam)


def loss_bt(c: CorrelationMatrix) -> tuple[Tensor, Tensor]:
    """Invariance and redundancy terms of the correlation-to-identity loss.

    Returns (sum_i (1 - C_ii)^2, sum_{i != j} C_ij^2); the caller weights
    and combines them.
    """
    values = c.values if isinstance(c, CorrelationMatrix) else c
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionError(f"loss_bt: expected a square matrix, got shape {list(values.shape)}")
    cd = values.data
    d = cd.shape[0]
    diag = np.diagonal(cd).copy()
    resid = 1.0 - diag

    def rule_inv(g):
        dc = np.zeros((d, d))
        np.fill_diagonal(dc, -2.0 * resid * float(g.reshape(-1)[0]))
        return (dc,)

    l_inv = apply_op("bt_invariance", (values,), np.array([(resid * resid).sum()]), rule_inv)

    def rule_rr(g):
        dc = 2.0 * float(g.reshape(-1)[0]) * cd
        np.fill_diagonal(dc, 0.0)
        return (dc,)

    l_rr = apply_op(
        "bt_redundancy", (values,), np.array([(cd * cd).sum() - (diag * diag).sum()]), rule_rr
    )
    return l_inv, l_rr


def mean_abs_diff(a: Tensor, b: Tensor, kind: str = "mean_abs_diff") -> Tensor:
    """Mean of |a - b| over all cells, as one tape node (L1 with mean
    reduction; subgradient 0 where the operands tie)."""
    if a.shape != b.shape:
        raise DimensionError(
            f"{kind}: shapes {list(a.shape)} and {list(b.shape)} do not match"
        )
    diff = a.data - b.data
    out = np.array([np.abs(diff).mean()])
    sgn = np.sign(diff)
    n = diff.size

    def rule(g):
        scaled = (float(g.reshape(-1)[0]) / n) * sgn
        return (scaled, -scaled)

    return apply_op(kind, (a, b), out, rule)


def loss_vrt(m_soft: Tensor, gt: GroundTruthMatrix) -> Tensor:
    """Mean absolute difference between the softmaxed similarity matrix and GT."""
    target = gt.values if isinstance(gt, GroundTruthMatrix) else gt
    return mean_abs_diff(m_soft, target, kind="loss_vrt")


def loss_con(z_tilde: Tensor, z_vrt: Tensor) -> Tensor:
    """Mean absolute difference between mixed-up and virtual embeddings."""
    return mean_abs_diff(z_tilde, z_vrt, kind="loss_con")


@contextmanager
def _term(name: str):
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"{name}: {exc}") from exc


def _flatten_views(views) -> tuple[Tensor, Tensor]:
    xb = views.x.data
    xpb = views.x_prime.data
    if xb.shape != xpb.shape:
        raise DimensionError(
            f"view pair shapes {list(xb.shape)} and {list(xpb.shape)} do not match"
        )
    b = xb.shape[0]
    return Tensor(xb.reshape(b, -1)), Tensor(xpb.reshape(b, -1))


def trimix_step_loss(views, params: ModelParams, cfg, rng, trace: dict | None = None) -> LossBreakdown:
    """One full objective evaluation on a view pair.

    `params` should be tape-attached when gradients are wanted; the
    returned breakdown carries the on-tape total in `.loss`.  Passing a
    dict as `trace` captures intermediate arrays for verification.
    """
    x, xp = _flatten_views(views)
    b = x.shape[0]
    if b % 2 != 0:
        raise BatchParityError(f"trimix step: batch size {b} is odd, need an even batch")
    norm = cfg.normalize_on

    with _term("forward"):
        out = forward(x, params)
        out_p = forward(xp, params)

    with _term("l_bt"):
        zs = standardize(out.z, "batch", cfg.allow_degenerate) if norm else out.z
        zs_p = standardize(out_p.z, "batch", cfg.allow_degenerate) if norm else out_p.z
        c = cross_correlation(zs, zs_p, "features")
        l_inv, l_rr = loss_bt(c)
        l_bt = add(l_inv, scalar_mul(l_rr, cfg.alpha))

    lam = sample_mix_factor(cfg, rng)

    with _term("virtual forward"):
        x_vrt = mixup(x, lam)
        out_vrt = forward(x_vrt, params)

    vrt_level, con_level = cfg.placement[0], cfg.placement[1]

    def base_for(level: str) -> Tensor:
        if level == "Z":
            return zs
        return standardize(out.y, "batch", cfg.allow_degenerate) if norm else out.y

    def virtual_for(level: str) -> Tensor:
        v = out_vrt.z if level == "Z" else out_vrt.y
        if norm:
            v = standardize(v, "batch", cfg.allow_degenerate)
            if cfg.enable_feature_norm:
                v = standardize(v, "feature", cfg.allow_degenerate)
        return v

    with _term("l_vrt"):
        m_base = base_for(vrt_level)
        m_virt = virtual_for(vrt_level)
        m = cross_correlation(m_base, m_virt, "samples")
        m_soft = row_softmax(m, cfg.tau)
        gt = ground_truth_matrix(b, lam)
        l_vrt_t = loss_vrt(m_soft, gt)

    with _term("l_con"):
        c_base = base_for(con_level)
        c_virt = m_virt if con_level == vrt_level else virtual_for(con_level)
        z_tilde = mixup(c_base, lam)
        l_con_t = loss_con(z_tilde, c_virt)

    beta = cfg.beta if cfg.enable_vrt else 0.0
    gamma = cfg.gamma if cfg.enable_con else 0.0
    total = l_bt
    if beta != 0.0:
        total = add(total, scalar_mul(l_vrt_t, beta))
    if gamma != 0.0:
        total = add(total, scalar_mul(l_con_t, gamma))

    if trace is not None:
        trace.update(
            x_vrt=x_vrt.data,
            z_tilde=z_tilde.data,
            base_std=zs.data,
            con_base=c_base.data,
            virt_norm=m_virt.data,
            m=m.values.data,
            m_soft=m_soft.data,
            gt=gt.values.data,
        )

    return LossBreakdown(
        total=total.item(),
        l_bt_inv=l_inv.item(),
        l_bt_rr=l_rr.item(),
        l_vrt=l_vrt_t.item(),
        l_con=l_con_t.item(),
        lam=lam.value,
        loss=total,
    )
