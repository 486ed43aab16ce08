"""Gradient descent in latent space toward a target attribute.

The objective is the squared difference between the latent classifier's
target-class probability and 1.0; iterates follow
w <- w - eta * grad_w (y(w) - 1)^2. Gradients flow only through the latent
classifier; the decoder is applied after traversal to materialize images.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fundus, generative, nn
from .errors import InsufficientStartersError, InvalidArgumentError, NumericError
from .seeds import derive

log = logging.getLogger(__name__)

TARGET_RA = "ra"
TARGET_DR = "dr"

_MONOTONE_EPS = 1e-12


@dataclass(frozen=True)
class TraversalConfig:
    eta: float = 0.01
    max_steps: int = 500
    target_prob: float = 0.9
    target_class: int = 1
    record_trace: bool = False

    def __post_init__(self):
        if self.eta < 0:
            raise InvalidArgumentError("eta must be >= 0")
        if self.max_steps < 1:
            raise InvalidArgumentError("max_steps must be >= 1")
        if not 0.0 < self.target_prob <= 1.0:
            raise InvalidArgumentError("target_prob must lie in (0, 1]")
        if self.target_class < 0:
            raise InvalidArgumentError("target_class must be >= 0")


@dataclass
class TraversalResult:
    w_final: np.ndarray
    steps_taken: int
    loss_trace: list[float]
    converged: bool
    image_final: np.ndarray | None = None
    monotone: bool = True
    w_trace: np.ndarray | None = None  # (steps_taken + 1, latent_dim) when traced
    prob_trace: list[float] | None = None


def _target_prob_and_grad(latent_clf: nn.ModelParams, w: np.ndarray, target: int):
    """Probability of the target class and the loss gradient w.r.t. w."""
    logits, cache = nn.forward(latent_clf, w)
    probs = nn.softmax(logits)
    single = w.ndim == 1
    if single:
        probs2 = probs[None, :]
    else:
        probs2 = probs
    p = probs2[:, target]
    onehot = np.zeros_like(probs2)
    onehot[:, target] = 1.0
    # d loss / d logits = 2 (p - 1) * p * (onehot - probs)
    dlogits = (2.0 * (p - 1.0) * p)[:, None] * (onehot - probs2)
    _, dw = nn.backward(latent_clf, cache, dlogits[0] if single else dlogits)
    return (float(p[0]) if single else p), dw


def traverse(
    w0: np.ndarray,
    latent_clf: nn.ModelParams,
    config: TraversalConfig,
    decoder: nn.ModelParams | None = None,
) -> TraversalResult:
    """Descend from a single starting latent until the target probability is
    reached or the step budget runs out. Pure and deterministic."""
    w = np.asarray(w0, dtype=np.float64).copy()
    if w.ndim != 1 or w.shape[0] != latent_clf.input_dim:
        raise InvalidArgumentError("w0 must be a vector matching the classifier input dim")
    if not np.isfinite(w).all():
        raise InvalidArgumentError("w0 must be finite")
    if config.target_class >= latent_clf.output_dim:
        raise InvalidArgumentError("target_class outside classifier output range")

    p, grad = _target_prob_and_grad(latent_clf, w, config.target_class)
    loss = (p - 1.0) ** 2
    losses = [loss]
    probs = [p]
    w_hist = [w.copy()] if config.record_trace else None
    monotone = True
    steps = 0
    converged = p >= config.target_prob
    while not converged and steps < config.max_steps:
        if not np.isfinite(grad).all():
            raise NumericError("non-finite traversal gradient", step=steps)
        w = w - config.eta * grad
        steps += 1
        p, grad = _target_prob_and_grad(latent_clf, w, config.target_class)
        new_loss = (p - 1.0) ** 2
        if new_loss > loss + _MONOTONE_EPS:
            monotone = False
        loss = new_loss
        losses.append(loss)
        probs.append(p)
        if config.record_trace:
            w_hist.append(w.copy())
        converged = p >= config.target_prob

    if not config.record_trace and len(losses) > 2:
        losses = [losses[0], losses[-1]]
        probs = [probs[0], probs[-1]]
    image = None
    if decoder is not None:
        out, _ = nn.forward(decoder, w)
        side = int(round(np.sqrt(out.shape[0])))
        image = out.reshape(side, side)
    return TraversalResult(
        w_final=w,
        steps_taken=steps,
        loss_trace=losses,
        converged=converged,
        image_final=image,
        monotone=monotone,
        w_trace=np.stack(w_hist) if config.record_trace else None,
        prob_trace=probs,
    )


@dataclass
class _BatchTraversal:
    w_final: np.ndarray  # (B, d)
    steps: np.ndarray  # (B,)
    converged: np.ndarray  # (B,) bool
    monotone: np.ndarray  # (B,) bool
    final_prob: np.ndarray  # (B,)
    w_traces: list[np.ndarray | None]  # per traced row: (steps+1, d)


def _traverse_batch(
    W0: np.ndarray,
    latent_clf: nn.ModelParams,
    config: TraversalConfig,
    trace_rows: int = 0,
) -> _BatchTraversal:
    """Vectorized traversal over independent starters.

    Rows never interact, so results match per-row traverse() exactly; rows
    that reach the target stop updating. Only the first trace_rows rows keep
    a full latent history.
    """
    W = np.asarray(W0, dtype=np.float64).copy()
    n = W.shape[0]
    p, grad = _target_prob_and_grad(latent_clf, W, config.target_class)
    loss = (p - 1.0) ** 2
    steps = np.zeros(n, dtype=np.int64)
    monotone = np.ones(n, dtype=bool)
    active = p < config.target_prob
    traces = [[W[i].copy()] if i < trace_rows else None for i in range(n)]
    it = 0
    while active.any() and it < config.max_steps:
        idx = np.flatnonzero(active)
        g = grad[idx]
        if not np.isfinite(g).all():
            raise NumericError("non-finite traversal gradient", step=it)
        W[idx] = W[idx] - config.eta * g
        steps[idx] += 1
        p_new, grad_new = _target_prob_and_grad(latent_clf, W[idx], config.target_class)
        new_loss = (p_new - 1.0) ** 2
        worse = new_loss > loss[idx] + _MONOTONE_EPS
        monotone[idx[worse]] = False
        loss[idx] = new_loss
        p[idx] = p_new
        grad[idx] = grad_new
        for row in idx:
            if traces[row] is not None:
                traces[row].append(W[row].copy())
        active[idx] = p_new < config.target_prob
        it += 1
    return _BatchTraversal(
        w_final=W,
        steps=steps,
        converged=p >= config.target_prob,
        monotone=monotone,
        final_prob=p,
        w_traces=[np.stack(t) if t is not None else None for t in traces],
    )


def train_latent_classifier(
    pairs: list[generative.LatentPair],
    target: str,
    config: nn.TrainConfig,
    hidden: int = 16,
) -> nn.ModelParams:
    """Train a latent-space binary classifier on pseudo-labeled pairs.

    target "ra": restricted to pairs the DR classifier called healthy;
    class 1 = darker. target "dr": restricted to pairs the appearance
    classifier called darker; class 1 = referable.

    Features are standardized and the standardization is folded back into the
    first layer, so the returned model consumes raw latents.
    """
    if target == TARGET_RA:
        subset = [p for p in pairs if p.pseudo_dr == generative.PSEUDO_HEALTHY]
        labels = np.array([p.pseudo_ra == generative.PSEUDO_DARKER for p in subset], dtype=np.int64)
    elif target == TARGET_DR:
        subset = [p for p in pairs if p.pseudo_ra == generative.PSEUDO_DARKER]
        labels = np.array([p.pseudo_dr == generative.PSEUDO_REFERABLE for p in subset], dtype=np.int64)
    else:
        raise InvalidArgumentError(f"unknown traversal target {target!r}")
    if not subset:
        raise InvalidArgumentError("no pairs available for the requested target")
    if labels.min() == labels.max():
        raise InvalidArgumentError("degenerate training set: a single pseudo-label class")
    for p in subset:
        if p.pseudo_dr is None or p.pseudo_ra is None:
            raise InvalidArgumentError("pairs must be pseudo-labeled before training")
    W = np.stack([p.w for p in subset])
    mu = W.mean(axis=0)
    sd = np.maximum(W.std(axis=0), 1e-8)
    arch = nn.mlp_arch(W.shape[1], (hidden,), 2)
    model = nn.train_classifier((W - mu) / sd, labels, config, arch, symmetric_output=True)
    first = model.layers[0]
    folded_w = first.weights / sd
    folded_b = first.bias - folded_w @ mu
    model.layers[0] = nn.Layer(folded_w, folded_b, first.activation)
    return model


STRATEGY_RA = "ra_optimized"
STRATEGY_DR = "dr_optimized"
STRATEGIES = (STRATEGY_RA, STRATEGY_DR)


@dataclass
class TraversalModels:
    generative_model: generative.GenerativeModel
    b_dr_dls: nn.ModelParams
    ra_dls: nn.ModelParams
    latent_clf: nn.ModelParams


@dataclass
class SynthesisStats:
    strategy: str
    requested: int
    attempted: int
    accepted: int
    acceptance_rate: float
    starter_pool: int
    mean_steps: float
    converged_fraction: float
    monotone_fraction: float
    nontarget_drift_mean: float
    dip_fraction: float
    dip_checked: int
    rectilinear_grad_drift: float
    rectilinear_line_drift: float
    rectilinear_checked: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _nontarget_scores(strategy: str, models: TraversalModels, flat_images: np.ndarray) -> np.ndarray:
    """Probability of the attribute that traversal must preserve."""
    if strategy == STRATEGY_RA:
        return nn.predict_proba(models.b_dr_dls, flat_images)[:, 1]  # referable prob
    return nn.predict_proba(models.ra_dls, flat_images)[:, 1]  # darker prob


def _line_endpoint(
    w0: np.ndarray,
    anchor: np.ndarray,
    latent_clf: nn.ModelParams,
    target_class: int,
    target_value: float,
) -> np.ndarray:
    """Smallest point on the segment w0 -> anchor whose target probability
    reaches target_value; the anchor itself if none does."""
    lo, hi = 0.0, 1.0
    p_hi = float(nn.predict_proba(latent_clf, anchor)[target_class])
    if p_hi < target_value:
        return anchor
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        w = w0 + mid * (anchor - w0)
        if float(nn.predict_proba(latent_clf, w)[target_class]) >= target_value:
            hi = mid
        else:
            lo = mid
    return w0 + hi * (anchor - w0)


def synthesize_rd(
    strategy: str,
    pairs: list[generative.LatentPair],
    models: TraversalModels,
    count: int,
    config: TraversalConfig,
    detail_rows: int = 64,
) -> tuple[list[fundus.ImageSample], SynthesisStats]:
    """Traverse starter latents and keep those passing the acceptance filter:
    the DR classifier must call the final image referable AND the appearance
    classifier must call it darker.

    ra_optimized starts from referable-classified pairs and pushes the darker
    attribute; dr_optimized starts from darker-classified pairs and pushes
    the referable attribute. Accepted samples are emitted as referable darker
    (RD) with synthetic provenance, in starter order.
    """
    if strategy not in STRATEGIES:
        raise InvalidArgumentError(f"unknown strategy {strategy!r}")
    if count < 0:
        raise InvalidArgumentError("count must be >= 0")
    if count == 0:
        return [], SynthesisStats(
            strategy, 0, 0, 0, 0.0, 0, 0.0, 0.0, 1.0, 0.0, 0.0, 0, 0.0, 0.0, 0
        )
    for p in pairs:
        if p.pseudo_dr is None or p.pseudo_ra is None:
            raise InvalidArgumentError("pairs must be pseudo-labeled before synthesis")
    if strategy == STRATEGY_RA:
        starters = [p for p in pairs if p.pseudo_dr == generative.PSEUDO_REFERABLE]
    else:
        starters = [p for p in pairs if p.pseudo_ra == generative.PSEUDO_DARKER]
    if not starters:
        raise InsufficientStartersError("starter pool is empty", acceptance_rate=0.0)

    W0 = np.stack([p.w for p in starters])
    batch = _traverse_batch(W0, models.latent_clf, config, trace_rows=min(detail_rows, len(starters)))

    flat_final = generative.decode(models.generative_model, batch.w_final)
    dr_ok = nn.predict_proba(models.b_dr_dls, flat_final).argmax(axis=1) == 1
    ra_ok = nn.predict_proba(models.ra_dls, flat_final).argmax(axis=1) == 1
    accepted_mask = dr_ok & ra_ok

    accepted_idx = []
    attempted = 0
    for i in range(len(starters)):
        attempted += 1
        if accepted_mask[i]:
            accepted_idx.append(i)
            if len(accepted_idx) == count:
                break
    rate = len(accepted_idx) / attempted if attempted else 0.0
    if len(accepted_idx) < count:
        raise InsufficientStartersError(
            f"starter pool exhausted: accepted {len(accepted_idx)} of {count} "
            f"after {attempted} starters (acceptance rate {rate:.3f})",
            acceptance_rate=rate,
        )

    side = int(round(np.sqrt(models.generative_model.image_dim)))
    samples = []
    for k, i in enumerate(accepted_idx):
        samples.append(
            fundus.ImageSample(
                sample_id=f"syn-{strategy}-{k:05d}",
                pixels=np.clip(flat_final[i].reshape(side, side), 0.0, 1.0),
                dr_level=2,  # nominal grade: synthetic samples carry no granular severity
                referable=True,
                ra_label=fundus.RA_DARKER,
                subgroup="RD",
                ra_provenance=fundus.PROV_SYNTHETIC,
                factors=None,
            )
        )

    acc = np.array(accepted_idx, dtype=np.int64)
    start_flat = np.stack([starters[i].image.reshape(-1) for i in acc])
    drift = np.abs(
        _nontarget_scores(strategy, models, flat_final[acc])
        - _nontarget_scores(strategy, models, start_flat)
    )

    # probability-dip check along traced trajectories (subsampled for cost)
    dip_rows = [i for i in acc[: detail_rows] if batch.w_traces[i] is not None]
    dips = 0
    for i in dip_rows:
        imgs = generative.decode(models.generative_model, batch.w_traces[i])
        if (_nontarget_scores(strategy, models, imgs) < 0.5).any():
            dips += 1
    dip_fraction = dips / len(dip_rows) if dip_rows else 0.0

    # straight-line comparison, matched for endpoint target probability
    if strategy == STRATEGY_RA:
        pos = [p.w for p in pairs if p.pseudo_dr == generative.PSEUDO_HEALTHY and p.pseudo_ra == generative.PSEUDO_DARKER]
    else:
        pos = [p.w for p in pairs if p.pseudo_ra == generative.PSEUDO_DARKER and p.pseudo_dr == generative.PSEUDO_REFERABLE]
    line_drifts = []
    grad_drifts = []
    if pos:
        anchor = np.stack(pos).mean(axis=0)
        check = acc[: min(detail_rows, len(acc))]
        for j, i in enumerate(check):
            endpoint = _line_endpoint(
                starters[i].w, anchor, models.latent_clf, config.target_class,
                float(batch.final_prob[i]),
            )
            img_line = generative.decode(models.generative_model, endpoint)
            line_drifts.append(
                abs(
                    float(_nontarget_scores(strategy, models, img_line[None, :])[0])
                    - float(_nontarget_scores(strategy, models, start_flat[j][None, :])[0])
                )
            )
            grad_drifts.append(float(drift[j]))

    if not batch.monotone.all():
        bad = int((~batch.monotone).sum())
        log.warning(
            "loss increased during %d of %d traversals (eta=%g)", bad, len(starters), config.eta
        )

    stats = SynthesisStats(
        strategy=strategy,
        requested=count,
        attempted=attempted,
        accepted=len(accepted_idx),
        acceptance_rate=rate,
        starter_pool=len(starters),
        mean_steps=float(batch.steps[acc].mean()),
        converged_fraction=float(batch.converged[:attempted].mean()),
        monotone_fraction=float(batch.monotone[:attempted].mean()),
        nontarget_drift_mean=float(drift.mean()),
        dip_fraction=dip_fraction,
        dip_checked=len(dip_rows),
        rectilinear_grad_drift=float(np.mean(grad_drifts)) if grad_drifts else 0.0,
        rectilinear_line_drift=float(np.mean(line_drifts)) if line_drifts else 0.0,
        rectilinear_checked=len(line_drifts),
    )
    return samples, stats
