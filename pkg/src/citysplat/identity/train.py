"""Optimisation of per-Gaussian identity codes and the shared linear head."""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from citysplat.identity.compositing import ALPHA_MIN, LOWPASS, CompositeWeights
from citysplat.identity.losses import DEFAULT_CHUNK, Grads, kl_rows, loss_2d, loss_3d

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer of the run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


@dataclass
class TrainConfig:
    lambda_3d: float = 1.0
    period: int = 10
    iterations: int = 2000
    lr: float = 5e-3
    m: int = 1024
    k: int = 5
    dim: int = 16
    chunk: int = DEFAULT_CHUNK
    w_min: float = 0.5
    alpha_min: float = ALPHA_MIN
    lowpass: float = LOWPASS

    def __post_init__(self):
        for name, val in asdict(self).items():
            if name == "lambda_3d":
                if val < 0:
                    raise ValueError("lambda_3d must be >= 0")
            elif not val > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainView:
    view_id: int
    weights: CompositeWeights
    labels: np.ndarray  # (H*W,) class indices, -1 where unknown

    def omega(self, w_min: float) -> np.ndarray:
        return self.weights.valid(w_min) & (self.labels >= 0)


@dataclass
class TrainResult:
    codes: np.ndarray
    weight: np.ndarray
    bias: np.ndarray
    history: list[dict] = field(default_factory=list)


class Adam:
    def __init__(self, shapes, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def init_params(n: int, n_classes: int, cfg: TrainConfig, seed: int):
    codes = substream(seed, "init_codes").normal(0.0, 0.1, size=(n, cfg.dim))
    weight = substream(seed, "init_head").normal(0.0, 1.0 / np.sqrt(cfg.dim), size=(n_classes, cfg.dim))
    return codes, weight, np.zeros(n_classes)


def rho(iteration: int, period: int) -> int:
    """1 on every ``period``-th iteration (1-based), else 0."""
    return int((iteration + 1) % period == 0)


def total_loss(view: TrainView, codes, weight, bias, cfg: TrainConfig, iteration: int,
               neighbors: np.ndarray | None, sample: np.ndarray | None):
    """``L_2D + lambda * rho_t * L_3D`` and its gradient for one iteration."""
    l2d, grads = loss_2d(view.weights.matrix, codes, weight, bias, view.labels,
                         view.omega(cfg.w_min), cfg.chunk)
    l3d = float("nan")
    if rho(iteration, cfg.period) and cfg.lambda_3d > 0 and neighbors is not None:
        l3d, g3 = loss_3d(codes, weight, bias, sample, neighbors)
        grads = grads.add(g3, cfg.lambda_3d)
        return l2d + cfg.lambda_3d * l3d, l2d, l3d, grads
    return l2d, l2d, l3d, grads


def train(views: list[TrainView], n_gaussians: int, n_classes: int, cfg: TrainConfig,
          neighbors: np.ndarray | None, seed: int = 0) -> TrainResult:
    if not views:
        raise ValueError("no training views")
    codes, weight, bias = init_params(n_gaussians, n_classes, cfg, seed)
    opt = Adam([codes.shape, weight.shape, bias.shape], cfg.lr)
    sched = substream(seed, "view_schedule")
    sampler = substream(seed, "sample_3d")
    order: list[int] = []
    history = []
    for it in range(cfg.iterations):
        if not order:
            order = sched.permutation(len(views)).tolist()
        view = views[order.pop(0)]
        sample = None
        if rho(it, cfg.period) and cfg.lambda_3d > 0 and neighbors is not None:
            m = min(cfg.m, n_gaussians)
            sample = np.sort(sampler.choice(n_gaussians, size=m, replace=False))
        loss, l2d, l3d, g = total_loss(view, codes, weight, bias, cfg, it, neighbors, sample)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"loss became {loss} at iteration {it} (view {view.view_id}, L2D={l2d}, L3D={l3d})"
            )
        opt.step([codes, weight, bias], [g.codes, g.weight, g.bias])
        history.append({"iteration": it, "view_id": view.view_id, "loss": loss, "l2d": l2d, "l3d": l3d})
        if it % 200 == 0 or it == cfg.iterations - 1:
            log.info("iter %d view %d loss %.5f", it, view.view_id, loss)
    return TrainResult(codes, weight, bias, history)


def assign_labels(codes: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                  vocab: np.ndarray | None = None) -> np.ndarray:
    """Per-Gaussian argmax class (ties to the lower index), mapped through ``vocab``."""
    cls = np.argmax(codes @ weight.T + bias, axis=1)
    return cls if vocab is None else np.asarray(vocab)[cls]


def predict_pixels(weights: CompositeWeights, codes, weight, bias, w_min: float,
                   vocab: np.ndarray | None = None, background: int = 0) -> np.ndarray:
    """Per-pixel argmax label; pixels below ``w_min`` weight mass get ``background``."""
    E = weights.matrix @ codes
    cls = np.argmax(E @ weight.T + bias, axis=1)
    lab = cls if vocab is None else np.asarray(vocab)[cls]
    lab = np.where(weights.valid(w_min), lab, background)
    return lab.reshape(weights.shape)


def mean_neighbor_kl(codes, weight, bias, neighbors: np.ndarray) -> float:
    z = codes @ weight.T + bias
    k = neighbors.shape[1]
    return float(kl_rows(np.repeat(z, k, axis=0), z[neighbors.ravel()]).mean())


def build_vocab(label_maps) -> np.ndarray:
    """Sorted label vocabulary with background (0) always at class index 0."""
    labels = {0}
    for m in label_maps:
        labels.update(np.unique(m).tolist())
    return np.array(sorted(labels), dtype=np.int64)


def encode_labels(label_map: np.ndarray, vocab: np.ndarray) -> np.ndarray:
    """Map instance labels to class indices; labels outside the vocabulary become -1."""
    flat = np.asarray(label_map, dtype=np.int64).ravel()
    pos = np.searchsorted(vocab, flat)
    pos = np.minimum(pos, len(vocab) - 1)
    return np.where(vocab[pos] == flat, pos, -1)
