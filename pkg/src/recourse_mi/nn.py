"""From-scratch differentiable binary classifiers and a tabular VAE.

Everything is plain numpy: fully-connected ReLU networks (an empty
architecture list means logistic regression) trained with Adam on binary
cross entropy, plus input gradients for recourse search. Determinism is a
hard requirement here - identical data, architecture and TrainConfig must
yield bit-identical parameters, because the membership-inference game is
replayed from seeds.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .seeds import rng_for

PROB_FLOOR = 1e-7  # keeps losses and logits finite on interpolating models

PARAM_BLOB_MAGIC = b"RMIBLOB1"


class DimensionMismatchError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    """Loss or parameters went non-finite; carries the 1-based epoch."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


@dataclass
class TrainConfig:
    """Adam training hyperparameters.

    batch_size=None applies the default policy: full batch when n <= 256,
    otherwise 64. An explicit value is used as given.
    """

    learning_rate: float = 1e-4
    epochs: int = 250
    batch_size: int | None = None
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def effective_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 256 else 64


@dataclass
class Model:
    """Feed-forward binary classifier: linear/ReLU stack + sigmoid head."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    architecture: list[int]
    d: int
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = [self.d] + list(self.architecture) + [1]
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("parameter count does not match architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(
                    f"layer {i} parameter shape {w.shape}/{b.shape} does not match "
                    f"architecture {sizes}"
                )


@dataclass
class VaeModel:
    """Tabular VAE: d -> 20 -> (latent mean, log-variance), latent -> 20 -> d."""

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w_mu: np.ndarray
    enc_b_mu: np.ndarray
    enc_w_lv: np.ndarray
    enc_b_lv: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray
    d: int
    latent_dim: int
    hidden_dim: int
    training_meta: dict = field(default_factory=dict)

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and log-variance heads for one input vector."""
        mu, lv = self.encode_batch(_as_row(x, self.d))
        return mu[0], lv[0]

    def encode_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = np.maximum(x @ self.enc_w1 + self.enc_b1, 0.0)
        return h @ self.enc_w_mu + self.enc_b_mu, h @ self.enc_w_lv + self.enc_b_lv

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decode_batch(_as_row(z, self.latent_dim))[0]

    def decode_batch(self, z: np.ndarray) -> np.ndarray:
        h = np.maximum(z @ self.dec_w1 + self.dec_b1, 0.0)
        return h @ self.dec_w2 + self.dec_b2

    def _arrays(self) -> list[tuple[str, np.ndarray]]:
        names = (
            "enc_w1 enc_b1 enc_w_mu enc_b_mu enc_w_lv enc_b_lv "
            "dec_w1 dec_b1 dec_w2 dec_b2"
        ).split()
        return [(n, getattr(self, n)) for n in names]


def _as_row(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != d:
        raise DimensionMismatchError(f"expected a length-{d} vector, got shape {x.shape}")
    return x.reshape(1, -1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Adam:
    """Adam with bias correction, shared by training and recourse search."""

    def __init__(self, shapes: Sequence[tuple[int, ...]], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        lr_t = self.lr * np.sqrt(1.0 - self.b2**self.t) / (1.0 - self.b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr_t * m / (np.sqrt(v) + self.eps)


def _init_layers(sizes: list[int], rng: np.random.Generator) -> tuple[list[np.ndarray], list[np.ndarray]]:
    # Kaiming-style uniform fan-in init, biases zero.
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward_batch(model: Model, x: np.ndarray, keep: bool = False):
    """Probabilities for a (n, d) batch; optionally keep activations."""
    acts = [x]
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        if keep:
            acts.append(a)
    logit = (a @ model.weights[-1] + model.biases[-1])[:, 0]
    p = _sigmoid(logit)
    return (p, acts) if keep else p


def predict_proba_batch(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise DimensionMismatchError(f"expected (n, {model.d}) matrix, got {x.shape}")
    return _forward_batch(model, x)


def predict_proba(model: Model, x: np.ndarray) -> float:
    """Probability of the positive class; prediction is 1 iff >= 0.5."""
    return float(_forward_batch(model, _as_row(x, model.d))[0])


def _clamped_prob_for_label(p: float, y: int) -> float:
    p_y = p if y == 1 else 1.0 - p
    return float(np.clip(p_y, PROB_FLOOR, 1.0 - PROB_FLOOR))


def bce_loss(model: Model, x: np.ndarray, y: int) -> float:
    """-log of the (clamped) probability assigned to the true label."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    p_y = _clamped_prob_for_label(predict_proba(model, x), y)
    return -float(np.log(p_y))


def logit_confidence(model: Model, x: np.ndarray, y: int) -> float:
    """logit of the probability assigned to label y, same clamping as bce_loss."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    p_y = _clamped_prob_for_label(predict_proba(model, x), y)
    return float(np.log(p_y) - np.log1p(-p_y))


def norm_subgradient(delta: np.ndarray, norm: str) -> np.ndarray:
    """Subgradient of ||delta||_norm; zero at delta = 0."""
    if norm == "l1":
        return np.sign(delta)
    if norm == "l2":
        mag = float(np.sqrt(np.sum(delta * delta)))
        return delta / mag if mag > 0 else np.zeros_like(delta)
    raise ValueError(f"unknown norm {norm!r}")


def bce_to_target_grad(model: Model, x: np.ndarray, target: float = 1.0) -> tuple[float, np.ndarray]:
    """(probability, d BCE(f(x), target) / dx) in one forward/backward pass."""
    if not model.architecture:
        # logistic fast path: p = sigmoid(theta.x + b), grad = (p - target) theta.
        # This sits in the innermost loop of gradient recourse search.
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != model.d:
            raise DimensionMismatchError(
                f"expected a length-{model.d} vector, got shape {x.shape}")
        z = float(x @ model.weights[0][:, 0]) + float(model.biases[0][0])
        p = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
        return p, (p - target) * model.weights[0][:, 0]
    row = _as_row(x, model.d)
    p, acts = _forward_batch(model, row, keep=True)
    # dL/dlogit for BCE over sigmoid is exactly p - target.
    delta = np.array([[float(p[0]) - target]])
    g = delta @ model.weights[-1].T
    for w, act in zip(reversed(model.weights[:-1]), reversed(acts[1:])):
        g = (g * (act > 0)) @ w.T
    return float(p[0]), g[0]


def input_gradient(
    model: Model,
    x: np.ndarray,
    objective: str = "bce-to-target",
    *,
    target: float = 1.0,
    lam: float = 0.0,
    anchor: np.ndarray | None = None,
    cost_norm: str = "l1",
) -> np.ndarray:
    """Gradient of a scalar recourse objective with respect to the input.

    objective "bce-to-target" is BCE(f(x), target); "recourse-objective"
    adds lam * ||x - anchor||_cost_norm. With lam=0 the two coincide
    exactly (the cost term is skipped, not multiplied by zero).
    """
    if objective == "bce-to-target":
        return bce_to_target_grad(model, x, target)[1]
    if objective == "recourse-objective":
        _, g = bce_to_target_grad(model, x, target)
        if lam != 0.0:
            if anchor is None:
                raise ValueError("recourse-objective needs an anchor point")
            anchor = np.asarray(anchor, dtype=np.float64)
            if anchor.shape != (model.d,):
                raise DimensionMismatchError(
                    f"anchor shape {anchor.shape} does not match d={model.d}"
                )
            g = g + lam * norm_subgradient(np.asarray(x, dtype=np.float64) - anchor, cost_norm)
        return g
    raise ValueError(f"unknown objective {objective!r}")


def _mean_bce(p: np.ndarray, y: np.ndarray) -> float:
    pc = np.clip(np.where(y == 1, p, 1.0 - p), PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(-np.mean(np.log(pc)))


def train_classifier(
    data: Dataset, architecture: Sequence[int], config: TrainConfig
) -> Model:
    """Train a classifier with Adam on binary cross entropy.

    Deterministic for a fixed config seed: initialization and per-epoch
    shuffling both derive from it. Raises TrainingDivergedError if the
    loss or any parameter goes non-finite.
    """
    if data.n == 0:
        raise ValueError("cannot train on an empty dataset")
    architecture = [int(w) for w in architecture]
    if any(w < 1 for w in architecture):
        raise ValueError(f"architecture widths must be positive, got {architecture}")

    sizes = [data.d] + architecture + [1]
    weights, biases = _init_layers(sizes, rng_for(config.seed, "init"))
    model = Model(weights, biases, architecture, data.d)

    x_all = data.features
    y_all = data.labels.astype(np.float64)
    batch = config.effective_batch_size(data.n)
    opt = Adam([w.shape for w in weights] + [b.shape for b in biases],
               config.learning_rate, config.adam_betas, config.adam_eps)
    shuffle_rng = rng_for(config.seed, "shuffle")

    epoch1_loss = None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(data.n)
        for start in range(0, data.n, batch):
            idx = order[start : start + batch]
            xb, yb = x_all[idx], y_all[idx]
            p, acts = _forward_batch(model, xb, keep=True)
            delta = ((p - yb) / xb.shape[0]).reshape(-1, 1)
            grads_w: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
            grads_b: list[np.ndarray] = [None] * len(biases)  # type: ignore[list-item]
            g = delta
            for li in range(len(weights) - 1, -1, -1):
                grads_w[li] = acts[li].T @ g
                grads_b[li] = g.sum(axis=0)
                if li > 0:
                    g = (g @ weights[li].T) * (acts[li] > 0)
            opt.step(weights + biases, grads_w + grads_b)

        if not all(np.isfinite(w).all() for w in weights):
            raise TrainingDivergedError(epoch, f"non-finite parameters at epoch {epoch}")
        if epoch == 1 or epoch == config.epochs:
            loss = _mean_bce(_forward_batch(model, x_all), y_all)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, f"non-finite loss at epoch {epoch}")
            if epoch == 1:
                epoch1_loss = loss

    final_loss = _mean_bce(_forward_batch(model, x_all), y_all)
    preds = _forward_batch(model, x_all) >= 0.5
    model.training_meta = {
        "seed": config.seed,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "batch_size": batch,
        "epoch1_train_loss": epoch1_loss,
        "final_train_loss": final_loss,
        "train_accuracy": float(np.mean(preds == (y_all == 1.0))),
    }
    return model


def accuracy(model: Model, data: Dataset) -> float:
    preds = predict_proba_batch(model, data.features) >= 0.5
    return float(np.mean(preds == (data.labels == 1)))


def train_vae(
    data: Dataset,
    config: TrainConfig | None = None,
    latent_dim: int = 8,
    hidden_dim: int = 20,
) -> VaeModel:
    """Train the tabular VAE (Gaussian decoder with unit observation
    variance, KL to a standard normal, both terms weighted equally).

    Expects standardized features. Defaults to 200 epochs when no config
    is given.
    """
    if config is None:
        config = TrainConfig(epochs=200)
    rng = rng_for(config.seed, "vae-init")
    d = data.d

    def unif(fan_in, fan_out):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    vae = VaeModel(
        enc_w1=unif(d, hidden_dim), enc_b1=np.zeros(hidden_dim),
        enc_w_mu=unif(hidden_dim, latent_dim), enc_b_mu=np.zeros(latent_dim),
        enc_w_lv=unif(hidden_dim, latent_dim), enc_b_lv=np.zeros(latent_dim),
        dec_w1=unif(latent_dim, hidden_dim), dec_b1=np.zeros(hidden_dim),
        dec_w2=unif(hidden_dim, d), dec_b2=np.zeros(d),
        d=d, latent_dim=latent_dim, hidden_dim=hidden_dim,
    )
    params = [a for _, a in vae._arrays()]
    opt = Adam([p.shape for p in params], config.learning_rate,
               config.adam_betas, config.adam_eps)
    shuffle_rng = rng_for(config.seed, "vae-shuffle")
    noise_rng = rng_for(config.seed, "vae-noise")
    batch = config.effective_batch_size(data.n)
    x_all = data.features

    def elbo_loss(x: np.ndarray, eps: np.ndarray, collect_grads: bool = False):
        n = x.shape[0]
        h_enc_pre = x @ vae.enc_w1 + vae.enc_b1
        h_enc = np.maximum(h_enc_pre, 0.0)
        mu = h_enc @ vae.enc_w_mu + vae.enc_b_mu
        lv = h_enc @ vae.enc_w_lv + vae.enc_b_lv
        std = np.exp(0.5 * lv)
        z = mu + std * eps
        h_dec_pre = z @ vae.dec_w1 + vae.dec_b1
        h_dec = np.maximum(h_dec_pre, 0.0)
        xhat = h_dec @ vae.dec_w2 + vae.dec_b2

        resid = xhat - x
        recon = 0.5 * np.sum(resid * resid) / n
        kl = -0.5 * np.sum(1.0 + lv - mu * mu - np.exp(lv)) / n
        loss = recon + kl
        if not collect_grads:
            return loss, None

        d_xhat = resid / n
        d_hdec = (d_xhat @ vae.dec_w2.T) * (h_dec_pre > 0)
        d_z = d_hdec @ vae.dec_w1.T
        d_mu = d_z + mu / n
        d_lv = d_z * (0.5 * std * eps) + (-0.5 * (1.0 - np.exp(lv))) / n
        d_henc = (d_mu @ vae.enc_w_mu.T + d_lv @ vae.enc_w_lv.T) * (h_enc_pre > 0)
        grads = [
            x.T @ d_henc, d_henc.sum(axis=0),
            h_enc.T @ d_mu, d_mu.sum(axis=0),
            h_enc.T @ d_lv, d_lv.sum(axis=0),
            z.T @ d_hdec, d_hdec.sum(axis=0),
            h_dec.T @ d_xhat, d_xhat.sum(axis=0),
        ]
        return loss, grads

    def full_elbo() -> float:
        eps0 = np.zeros((data.n, latent_dim))  # deterministic eval at the mean
        loss, _ = elbo_loss(x_all, eps0)
        return loss

    epoch1 = None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(data.n)
        for start in range(0, data.n, batch):
            idx = order[start : start + batch]
            eps = noise_rng.standard_normal((idx.size, latent_dim))
            loss, grads = elbo_loss(x_all[idx], eps, collect_grads=True)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, f"non-finite VAE loss at epoch {epoch}")
            opt.step(params, grads)
        if epoch == 1:
            epoch1 = full_elbo()

    final = full_elbo()
    vae.training_meta = {
        "seed": config.seed,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "epoch1_elbo_loss": epoch1,
        "final_elbo_loss": final,
    }
    return vae


# --- serialization: JSON manifest + little-endian float64 blob ------------

def _write_blob(arrays: list[np.ndarray], path: Path) -> None:
    with open(path, "wb") as fh:
        fh.write(PARAM_BLOB_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for a in arrays:
            fh.write(struct.pack("<I", a.ndim))
            for dim in a.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_blob(path: Path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(PARAM_BLOB_MAGIC))
        if magic != PARAM_BLOB_MAGIC:
            raise ValueError(f"{path}: not a parameter blob")
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * size)
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
        return arrays


def save_model(model: Model | VaeModel, directory: str | Path) -> None:
    """Write manifest.json + params.bin; round-trip is bit-exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(model, Model):
        arrays = list(model.weights) + list(model.biases)
        manifest = {
            "format_version": 1,
            "kind": "classifier",
            "d": model.d,
            "architecture": model.architecture,
            "n_weight_arrays": len(model.weights),
            "training_meta": model.training_meta,
        }
    else:
        named = model._arrays()
        arrays = [a for _, a in named]
        manifest = {
            "format_version": 1,
            "kind": "vae",
            "d": model.d,
            "latent_dim": model.latent_dim,
            "hidden_dim": model.hidden_dim,
            "array_names": [n for n, _ in named],
            "training_meta": model.training_meta,
        }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    _write_blob(arrays, directory / "params.bin")


def load_model(directory: str | Path) -> Model | VaeModel:
    directory = Path(directory)
    with open(directory / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    arrays = _read_blob(directory / "params.bin")
    if manifest["kind"] == "classifier":
        k = manifest["n_weight_arrays"]
        return Model(
            weights=arrays[:k],
            biases=arrays[k:],
            architecture=list(manifest["architecture"]),
            d=manifest["d"],
            training_meta=manifest["training_meta"],
        )
    if manifest["kind"] == "vae":
        kwargs = dict(zip(manifest["array_names"], arrays))
        return VaeModel(
            d=manifest["d"],
            latent_dim=manifest["latent_dim"],
            hidden_dim=manifest["hidden_dim"],
            training_meta=manifest["training_meta"],
            **kwargs,
        )
    raise ValueError(f"unknown model kind {manifest['kind']!r}")
