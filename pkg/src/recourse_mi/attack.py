"""Membership-inference attacks over recourse outputs.

Two families:

- Distance attacks consume only (x, x') pairs: simple thresholding on the
  counterfactual distance, and a one-sided LRT that fits a log-normal to
  the distances produced for x by shadow models (trained on data disjoint
  from every evaluation point) and scores the observed distance against
  that OUT fit. They never see the owner model, by interface.
- Loss baselines consume the owner model and the true label: thresholding
  on BCE, and the offline loss LRT against a normal OUT fit of
  logit-scaled confidences.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import nn, recourse
from .data import Dataset
from .nn import Model, TrainConfig, VaeModel
from .recourse import CostFn, RecourseResult, ScfeParams, SearchParams
from .seeds import derive_seed, rng_for

DEGENERATE_SIGMA2 = 1e-18


class InvalidRecourseError(ValueError):
    """Distance statistics are only defined for valid recourses."""


class ShadowSampleError(RuntimeError):
    """Fewer than two shadow distance samples survived for a point."""


class Guess(enum.Enum):
    MEMBER = "MEMBER"
    NON_MEMBER = "NON-MEMBER"

    def __str__(self) -> str:  # serialized form
        return self.value


@dataclass(frozen=True)
class LogNormalFit:
    """MLE fit of log-statistics: mean and population variance."""

    mu: float
    sigma2: float
    n: int


@dataclass(frozen=True)
class NormalFit:
    mu: float
    sigma2: float
    n: int


@dataclass(frozen=True)
class AttackScore:
    point_id: str
    attack: str
    statistic: float
    score: float
    higher_means_member: bool
    guess_at: dict[float, Guess] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "point_id": self.point_id,
            "attack": self.attack,
            "statistic": self.statistic,
            "score": self.score,
            "direction": "higher" if self.higher_means_member else "lower",
            "guess_at": {repr(a): g.value for a, g in sorted(self.guess_at.items())},
        }


@dataclass(frozen=True)
class RecourseConfig:
    """Which generator the game (and the shadow replay) uses."""

    algorithm: str = "scfe"  # scfe | growing_spheres | cchvae
    cost_fn: CostFn = CostFn("l1")
    scfe_params: ScfeParams = ScfeParams()
    search_params: SearchParams = SearchParams()

    def __post_init__(self):
        if self.algorithm not in ("scfe", "growing_spheres", "cchvae"):
            raise ValueError(f"unknown recourse algorithm {self.algorithm!r}")

    def generate(self, model: Model, x: np.ndarray, seed: int,
                 vae: VaeModel | None = None) -> RecourseResult:
        if self.algorithm == "scfe":
            return recourse.scfe(model, x, self.scfe_params, self.cost_fn, seed=seed)
        params = SearchParams(
            initial_radius=self.search_params.initial_radius,
            radius_step=self.search_params.radius_step,
            samples_per_radius=self.search_params.samples_per_radius,
            max_radius=self.search_params.max_radius,
            seed=seed,
            immutable=self.search_params.immutable,
        )
        if self.algorithm == "growing_spheres":
            return recourse.growing_spheres(model, x, params, self.cost_fn)
        if vae is None:
            raise ValueError("cchvae requires a trained VAE")
        return recourse.cchvae(model, vae, x, params, self.cost_fn)


@dataclass
class ShadowEnsemble:
    """N classifiers trained on subsamples of the adversary's pool.

    The pool is disjoint from every evaluation point, so recourse
    distances computed under these models sample the OUT distribution of
    Algorithm-style LRT attacks. One ensemble serves all query points.
    """

    models: list[Model]
    trainer_config: TrainConfig
    recourse_config: RecourseConfig
    seed: int
    vae: VaeModel | None = None

    @property
    def n_models(self) -> int:
        return len(self.models)


def train_shadow_ensemble(
    shadow_pool: Dataset,
    n_models: int,
    architecture: Sequence[int],
    trainer_config: TrainConfig,
    recourse_config: RecourseConfig,
    seed: int,
    map_fn: Callable | None = None,
) -> ShadowEnsemble:
    """Train N shadow models, each on a uniform half-pool subsample.

    For cchvae recourse a single shadow VAE is trained on the full pool
    and shared by every shadow model. `map_fn(fn, items)` may run the
    trainings concurrently; seeds are derived per model index, so results
    do not depend on scheduling.
    """
    if n_models < 2:
        raise ValueError(f"need at least 2 shadow models, got {n_models}")
    half = shadow_pool.n // 2
    if half < 2:
        raise ValueError(f"shadow pool too small (n={shadow_pool.n})")

    def build(i: int) -> Model:
        rows = rng_for(seed, "shadow-subsample", i).choice(
            shadow_pool.n, size=half, replace=False
        )
        subset = shadow_pool.take(np.sort(rows), f"shadow_train_{i}")
        cfg = TrainConfig(
            learning_rate=trainer_config.learning_rate,
            epochs=trainer_config.epochs,
            batch_size=trainer_config.batch_size,
            seed=derive_seed(seed, "shadow-train", i),
            adam_betas=trainer_config.adam_betas,
            adam_eps=trainer_config.adam_eps,
        )
        return nn.train_classifier(subset, architecture, cfg)

    mapper = map_fn if map_fn is not None else lambda fn, items: [fn(i) for i in items]
    models = list(mapper(build, range(n_models)))
    vae = None
    if recourse_config.algorithm == "cchvae":
        vae = nn.train_vae(shadow_pool, TrainConfig(
            learning_rate=1e-3, epochs=200, seed=derive_seed(seed, "shadow-vae"),
        ))
    return ShadowEnsemble(models=models, trainer_config=trainer_config,
                          recourse_config=recourse_config, seed=seed, vae=vae)


def cfd_statistic(x: np.ndarray, result: RecourseResult) -> float:
    """Counterfactual distance statistic: the recourse cost, floored."""
    if not result.valid:
        raise InvalidRecourseError("cfd_statistic needs a valid recourse")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != np.asarray(result.counterfactual).shape:
        raise nn.DimensionMismatchError(
            f"point shape {x.shape} does not match counterfactual"
        )
    return max(result.cost, recourse.DISTANCE_FLOOR)


def threshold_attack(statistic: float, tau: float, higher_means_member: bool) -> Guess:
    """Threshold rule; ties resolve to MEMBER in both directions."""
    if not (math.isfinite(statistic) and math.isfinite(tau)):
        raise ValueError("threshold_attack needs finite inputs")
    if higher_means_member:
        return Guess.MEMBER if statistic >= tau else Guess.NON_MEMBER
    return Guess.MEMBER if statistic <= tau else Guess.NON_MEMBER


def fit_lognormal_mle(samples: Sequence[float]) -> LogNormalFit:
    """Mean / population variance of the log-samples."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size < 1:
        raise ValueError("need at least one sample")
    if not (arr > 0).all():
        raise ValueError("log-normal fit requires strictly positive samples")
    logs = np.log(arr)
    mu = float(np.mean(logs))
    sigma2 = float(np.mean((mu - logs) ** 2))
    return LogNormalFit(mu=mu, sigma2=sigma2, n=int(arr.size))


def fit_normal_mle(samples: Sequence[float]) -> NormalFit:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size < 1:
        raise ValueError("need at least one sample")
    mu = float(np.mean(arr))
    return NormalFit(mu=mu, sigma2=float(np.mean((arr - mu) ** 2)), n=int(arr.size))


def lognormal_quantile(fit: LogNormalFit, q: float) -> float:
    """exp(mu + sigma * Phi^-1(q)); collapses to exp(mu) for degenerate fits."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must be in (0,1), got {q}")
    if fit.sigma2 < DEGENERATE_SIGMA2:
        return float(np.exp(fit.mu))
    return float(np.exp(fit.mu + np.sqrt(fit.sigma2) * ndtri(q)))


def cfd_lrt_decide(t0: float, fit: LogNormalFit, alpha: float,
                   reverse: bool = False) -> Guess:
    """One-sided LRT decision at false-positive level alpha.

    Standard direction: NON-MEMBER iff t0 exceeds the (1-alpha)-quantile
    of the OUT fit. Reversed direction (generative recourse flips the
    signal): MEMBER iff t0 falls below the alpha-quantile.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    if reverse:
        return Guess.MEMBER if t0 < lognormal_quantile(fit, alpha) else Guess.NON_MEMBER
    return Guess.NON_MEMBER if t0 > lognormal_quantile(fit, 1.0 - alpha) else Guess.MEMBER


def cfd_lrt_score(t0: float, fit: LogNormalFit) -> float:
    """OUT-distribution CDF of the observed distance, in [0, 1].

    Sweeping a threshold over this score reproduces cfd_lrt_decide across
    all alpha. Degenerate fits snap to {0, 0.5, 1} by the sign of
    log t0 - mu.
    """
    if t0 <= 0:
        raise ValueError(f"distance statistic must be positive, got {t0}")
    log_t0 = math.log(t0)
    if fit.sigma2 < DEGENERATE_SIGMA2:
        if log_t0 > fit.mu:
            return 1.0
        return 0.5 if log_t0 == fit.mu else 0.0
    return float(ndtr((log_t0 - fit.mu) / math.sqrt(fit.sigma2)))


def loss_lrt_score(conf: float, out_fit: NormalFit) -> float:
    """Offline loss-LRT score: OUT-fit CDF of the logit confidence."""
    if out_fit.sigma2 < DEGENERATE_SIGMA2:
        if conf > out_fit.mu:
            return 1.0
        return 0.5 if conf == out_fit.mu else 0.0
    return float(ndtr((conf - out_fit.mu) / math.sqrt(out_fit.sigma2)))


def loss_attack_score(model: Model, x: np.ndarray, y: int) -> tuple[float, bool]:
    """Loss-threshold baseline statistic; lower loss suggests membership."""
    return nn.bce_loss(model, x, y), False


def build_shadow_distances(
    x: np.ndarray,
    ensemble: ShadowEnsemble,
    point_seed: int = 0,
) -> np.ndarray:
    """Recourse distance for x under each shadow model.

    Shadow models that already classify x positively have no recourse and
    are skipped, as are failed recourse searches. Raises ShadowSampleError
    if fewer than two distances survive.
    """
    x = np.asarray(x, dtype=np.float64)
    dists = []
    skipped_positive = 0
    skipped_failed = 0
    for i, model in enumerate(ensemble.models):
        if nn.predict_proba(model, x) >= 0.5:
            skipped_positive += 1
            continue
        seed = derive_seed(ensemble.seed, f"shadow-recourse-{point_seed}", i)
        result = ensemble.recourse_config.generate(model, x, seed, vae=ensemble.vae)
        if not result.valid:
            skipped_failed += 1
            continue
        dists.append(max(result.cost, recourse.DISTANCE_FLOOR))
    if len(dists) < 2:
        raise ShadowSampleError(
            f"only {len(dists)} shadow distances for point "
            f"({skipped_positive} positively classified, {skipped_failed} failed "
            f"recourse, out of {ensemble.n_models} models)"
        )
    return np.array(dists, dtype=np.float64)


# --- attack stages consumed by the experiment runner -----------------------
#
# The distance attacks deliberately take no model argument: the statistic
# is computed from the game transcript and the shadow ensemble alone.

def cfd_attack_scores(samples: Sequence) -> list[AttackScore]:
    """Simple counterfactual-distance scores for a list of GameSamples."""
    out = []
    for s in samples:
        t = cfd_statistic(s.point, s.recourse)
        out.append(AttackScore(
            point_id=s.point_id, attack="cfd", statistic=t, score=t,
            higher_means_member=True,
        ))
    return out


def cfd_lrt_attack_scores(
    samples: Sequence,
    ensemble: ShadowEnsemble,
    alphas: Sequence[float] = (0.01, 0.05, 0.1),
    map_fn: Callable | None = None,
    on_starved: str = "raise",
) -> list[AttackScore]:
    """One-sided distance-LRT scores; one shared ensemble, per-point fits.

    A point whose shadow-distance sample starves (fewer than two shadow
    models yield a recourse for it) raises by default; on_starved="skip"
    drops the point instead, which is what the experiment runner uses.
    """
    if on_starved not in ("raise", "skip"):
        raise ValueError(f"on_starved must be 'raise' or 'skip', got {on_starved!r}")

    def score_one(item: tuple[int, Any]) -> AttackScore | None:
        idx, s = item
        t0 = cfd_statistic(s.point, s.recourse)
        try:
            dists = build_shadow_distances(s.point, ensemble, point_seed=idx)
        except ShadowSampleError:
            if on_starved == "skip":
                return None
            raise
        fit = fit_lognormal_mle(dists)
        return AttackScore(
            point_id=s.point_id, attack="cfd_lrt", statistic=t0,
            score=cfd_lrt_score(t0, fit), higher_means_member=True,
            guess_at={a: cfd_lrt_decide(t0, fit, a) for a in alphas},
        )

    mapper = map_fn if map_fn is not None else lambda fn, items: [fn(i) for i in items]
    return [sc for sc in mapper(score_one, list(enumerate(samples))) if sc is not None]


def loss_attack_scores(samples: Sequence, owner_model: Model) -> list[AttackScore]:
    """Loss-threshold baseline; needs the owner model and true labels."""
    out = []
    for s in samples:
        stat, higher = loss_attack_score(owner_model, s.point, s.label)
        out.append(AttackScore(
            point_id=s.point_id, attack="loss", statistic=stat, score=stat,
            higher_means_member=higher,
        ))
    return out


def loss_lrt_attack_scores(
    samples: Sequence,
    owner_model: Model,
    ensemble: ShadowEnsemble,
    alphas: Sequence[float] = (0.01, 0.05, 0.1),
) -> list[AttackScore]:
    """Offline loss-LRT baseline: normal OUT fit of shadow confidences."""
    out = []
    for s in samples:
        conf = nn.logit_confidence(owner_model, s.point, s.label)
        confs = [nn.logit_confidence(m, s.point, s.label) for m in ensemble.models]
        fit = fit_normal_mle(confs)
        score = loss_lrt_score(conf, fit)
        guesses = {}
        for a in alphas:
            if fit.sigma2 < DEGENERATE_SIGMA2:
                thr = fit.mu
            else:
                thr = fit.mu + math.sqrt(fit.sigma2) * ndtri(1.0 - a)
            guesses[a] = Guess.MEMBER if conf >= thr else Guess.NON_MEMBER
        out.append(AttackScore(
            point_id=s.point_id, attack="loss_lrt", statistic=conf, score=score,
            higher_means_member=True, guess_at=guesses,
        ))
    return out
