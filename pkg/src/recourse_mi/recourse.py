"""Counterfactual recourse generators and cost functions.

Three generators share one contract: given a negatively classified point,
return the cheapest found input that the model classifies positively.

- scfe: Adam descent on BCE-to-target plus a weighted cost term, with the
  trade-off weight decayed on failure.
- growing_spheres: uniform sampling in input-space l1 balls of growing
  radius, returning the cheapest valid sample at the first hit radius.
- cchvae: the same growing search in a VAE's latent space; candidates are
  decoded back so results stay in the decoder's range.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import nn
from .nn import Model, VaeModel
from .seeds import derive_seed

DISTANCE_FLOOR = 1e-12


class RecoursePreconditionError(ValueError):
    """The query point is not negatively classified."""


@dataclass(frozen=True)
class CostFn:
    """l1 (default) or l2 distance."""

    norm: str = "l1"

    def __post_init__(self):
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"norm must be 'l1' or 'l2', got {self.norm!r}")

    def __call__(self, x: np.ndarray, xp: np.ndarray) -> float:
        return cost(x, xp, self)


@dataclass(frozen=True)
class ScfeParams:
    lam: float = 0.1
    lam_decay: float = 0.5
    max_iters: int = 1000
    step_size: float = 0.05
    max_retries: int = 5
    immutable: tuple[int, ...] = ()  # feature indices recourse may not move

    def __post_init__(self):
        if min(self.lam, self.max_iters, self.step_size) <= 0 or self.max_retries < 0:
            raise ValueError(f"invalid ScfeParams {self}")
        if not 0.0 < self.lam_decay < 1.0:
            raise ValueError(f"lam_decay must be in (0,1), got {self.lam_decay}")


@dataclass(frozen=True)
class SearchParams:
    """Growing-ball search schedule, shared by growing_spheres and cchvae."""

    initial_radius: float = 0.1
    radius_step: float = 0.1
    samples_per_radius: int = 500
    max_radius: float = 10.0
    seed: int = 0
    immutable: tuple[int, ...] = ()

    def __post_init__(self):
        if min(self.initial_radius, self.radius_step, self.max_radius) <= 0:
            raise ValueError(f"radii must be positive in {self}")
        if self.samples_per_radius < 1:
            raise ValueError(f"samples_per_radius must be >= 1, got {self.samples_per_radius}")

    def radii(self) -> np.ndarray:
        count = int(np.floor((self.max_radius - self.initial_radius) / self.radius_step + 1e-12)) + 1
        return self.initial_radius + self.radius_step * np.arange(max(count, 0))


@dataclass(frozen=True)
class RecourseResult:
    counterfactual: np.ndarray
    cost: float
    valid: bool
    algorithm: str
    trace: dict = field(default_factory=dict)
    seed: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "counterfactual": [float(v) for v in self.counterfactual],
            "cost": self.cost,
            "valid": self.valid,
            "algorithm": self.algorithm,
            "trace": self.trace,
            "seed": self.seed,
        }


def cost(x: np.ndarray, xp: np.ndarray, fn: CostFn) -> float:
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(xp, dtype=np.float64)
    if x.shape != xp.shape:
        raise nn.DimensionMismatchError(f"shape mismatch {x.shape} vs {xp.shape}")
    delta = xp - x
    if fn.norm == "l1":
        return float(np.sum(np.abs(delta)))
    return float(np.sqrt(np.sum(delta * delta)))


def _batch_costs(x: np.ndarray, candidates: np.ndarray, fn: CostFn) -> np.ndarray:
    delta = candidates - x
    if fn.norm == "l1":
        return np.sum(np.abs(delta), axis=1)
    return np.sqrt(np.sum(delta * delta, axis=1))


def _require_negative(model: Model, x: np.ndarray) -> None:
    p = nn.predict_proba(model, x)
    if p >= 0.5:
        raise RecoursePreconditionError(
            f"query point is already positively classified (p={p:.6f})"
        )


def scfe(model: Model, x: np.ndarray, params: ScfeParams, cost_fn: CostFn,
         seed: int = 0) -> RecourseResult:
    """Gradient recourse: minimize BCE(f(x'), 1) + lam * c(x, x').

    x' starts at x; after max_iters without a valid iterate, lam is
    multiplied by lam_decay and the search restarts, up to max_retries
    times. Returns the cheapest valid iterate seen during the successful
    attempt, or a valid=False result.
    """
    x = np.asarray(x, dtype=np.float64)
    _require_negative(model, x)
    frozen = np.asarray(params.immutable, dtype=np.int64)

    best: np.ndarray | None = None
    best_cost = np.inf
    total_iters = 0
    lam = params.lam
    for attempt in range(params.max_retries + 1):
        if attempt > 0:
            lam *= params.lam_decay
        xp = x.copy()
        opt = nn.Adam([x.shape], lr=params.step_size)
        for _ in range(params.max_iters):
            p, g = nn.bce_to_target_grad(model, xp, target=1.0)
            total_iters += 1
            if p >= 0.5:
                c = cost(x, xp, cost_fn)
                if c < best_cost:
                    best, best_cost = xp.copy(), c
            if lam != 0.0:
                g = g + lam * nn.norm_subgradient(xp - x, cost_fn.norm)
            if frozen.size:
                g[frozen] = 0.0
            opt.step([xp], [g])
        if nn.predict_proba(model, xp) >= 0.5:
            c = cost(x, xp, cost_fn)
            if c < best_cost:
                best, best_cost = xp.copy(), c
        # the in-loop probabilities come from the fused forward/backward
        # path; re-verify the winner on the canonical predictor so the
        # stored valid flag holds under re-evaluation
        if best is not None and nn.predict_proba(model, best) < 0.5:
            best, best_cost = None, np.inf
        if best is not None:
            return RecourseResult(
                counterfactual=best, cost=best_cost, valid=True, algorithm="scfe",
                trace={"iterations": total_iters, "retries_used": attempt,
                       "lambda_final": lam},
                seed=seed,
            )
    return RecourseResult(
        counterfactual=x.copy(), cost=0.0, valid=False, algorithm="scfe",
        trace={"iterations": total_iters, "retries_used": params.max_retries,
               "lambda_final": lam},
        seed=seed,
    )


def uniform_l1_ball_sample(center: np.ndarray, radius: float, count: int,
                           seed: int) -> np.ndarray:
    """`count` points uniform over the l1 ball of `radius` around `center`.

    Signed Dirichlet directions on the l1 sphere, scaled by
    radius * U^(1/d) to fill the ball uniformly.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    center = np.asarray(center, dtype=np.float64)
    d = center.shape[0]
    rng = np.random.default_rng(seed)
    g = rng.standard_exponential((count, d))
    signs = rng.integers(0, 2, size=(count, d)) * 2 - 1
    surface = signs * g / g.sum(axis=1, keepdims=True)
    scale = radius * rng.random(count) ** (1.0 / d)
    return center + surface * scale[:, None]


def _ball_search(
    predict_batch,
    decode_batch,
    decode_single,
    search_center: np.ndarray,
    x: np.ndarray,
    params: SearchParams,
    cost_fn: CostFn,
    validate_single,
) -> tuple[np.ndarray | None, float, dict]:
    """Growing l1-ball search core shared by growing_spheres and cchvae.

    Samples around `search_center` (input or latent space), maps candidates
    through decode_batch (identity for input space), and picks the cheapest
    valid candidate at the first accepting radius. The pick is then rebuilt
    through the single-point decode/predict path, so the stored result is
    bit-identical to any later re-evaluation of its recorded search point.
    """
    radii = params.radii()
    for ri, r in enumerate(radii):
        raw = uniform_l1_ball_sample(
            search_center, float(r), params.samples_per_radius,
            derive_seed(params.seed, "ball-radius", ri),
        )
        candidates = decode_batch(raw)
        probs = predict_batch(candidates)
        hit = np.flatnonzero(probs >= 0.5)
        if hit.size == 0:
            continue
        costs = _batch_costs(x, candidates[hit], cost_fn)
        for local in np.argsort(costs, kind="stable"):
            idx = hit[local]
            final = decode_single(raw[idx])
            if validate_single(final):
                trace = {
                    "radius": float(r),
                    "radii_tried": ri + 1,
                    "samples_per_radius": params.samples_per_radius,
                    "search_point": [float(v) for v in raw[idx]],
                }
                return final, cost(x, final, cost_fn), trace
    return None, 0.0, {"radius": float(radii[-1]) if radii.size else 0.0,
                       "radii_tried": int(radii.size),
                       "samples_per_radius": params.samples_per_radius}


def _freezer(x: np.ndarray, immutable: tuple[int, ...]):
    """Pin immutable coordinates of candidates back to x's values."""
    idx = np.asarray(immutable, dtype=np.int64)
    if idx.size == 0:
        return (lambda pts: pts), (lambda pt: pt)

    def project_batch(pts):
        pts = np.array(pts, copy=True)
        pts[:, idx] = x[idx]
        return pts

    def project_single(pt):
        pt = np.array(pt, copy=True)
        pt[idx] = x[idx]
        return pt

    return project_batch, project_single


def growing_spheres(model: Model, x: np.ndarray, params: SearchParams,
                    cost_fn: CostFn) -> RecourseResult:
    """Random input-space search in l1 balls of growing radius."""
    x = np.asarray(x, dtype=np.float64)
    _require_negative(model, x)
    project_batch, project_single = _freezer(x, params.immutable)
    found, c, trace = _ball_search(
        predict_batch=lambda pts: nn.predict_proba_batch(model, pts),
        decode_batch=project_batch,
        decode_single=project_single,
        search_center=x,
        x=x,
        params=params,
        cost_fn=cost_fn,
        validate_single=lambda pt: nn.predict_proba(model, pt) >= 0.5,
    )
    if found is None:
        return RecourseResult(x.copy(), 0.0, False, "growing_spheres",
                              trace=trace, seed=params.seed)
    return RecourseResult(found, c, True, "growing_spheres",
                          trace=trace, seed=params.seed)


def cchvae(model: Model, vae: VaeModel, x: np.ndarray, params: SearchParams,
           cost_fn: CostFn) -> RecourseResult:
    """Latent-space recourse: growing l1-ball search around encode(x),
    candidates decoded back to input space, cost measured there.

    With an immutable mask the decoded candidates have those coordinates
    pinned back to x, so the counterfactual reconstructs as
    project(decode(z)) rather than decode(z) alone.
    """
    x = np.asarray(x, dtype=np.float64)
    if vae.d != x.shape[0]:
        raise nn.DimensionMismatchError(
            f"vae expects d={vae.d}, point has {x.shape[0]}"
        )
    _require_negative(model, x)
    project_batch, project_single = _freezer(x, params.immutable)
    z_center, _ = vae.encode(x)
    found, c, trace = _ball_search(
        predict_batch=lambda pts: nn.predict_proba_batch(model, pts),
        decode_batch=lambda zs: project_batch(vae.decode_batch(zs)),
        decode_single=lambda z: project_single(vae.decode(z)),
        search_center=z_center,
        x=x,
        params=params,
        cost_fn=cost_fn,
        validate_single=lambda pt: nn.predict_proba(model, pt) >= 0.5,
    )
    if found is None:
        return RecourseResult(x.copy(), 0.0, False, "cchvae",
                              trace=trace, seed=params.seed)
    trace["latent_point"] = trace.pop("search_point")
    return RecourseResult(found, c, True, "cchvae", trace=trace, seed=params.seed)
