"""Margin-based training from seed pairs with nearest-neighbour negatives."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial.distance import cdist

from . import numerics as nx
from .encoder import Ablation, GraphInputs, HyperParams, ModelParams, encode, init_params
from .kg import AlignmentTask
from .numerics import Parameter, Tensor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class NegativeCache:
    """Corrupted pairs per seed pair, built at ``epoch``.

    Seed ``s = (e_i, e_j)`` owns ``(e_i, kg2_corrupt[s, c])`` and
    ``(kg1_corrupt[s, c], e_j)`` for every column ``c``.
    """

    seeds: np.ndarray
    kg2_corrupt: np.ndarray
    kg1_corrupt: np.ndarray
    epoch: int = 0

    def pairs(self, s: int) -> List[tuple]:
        e_i, e_j = (int(v) for v in self.seeds[s])
        return ([(e_i, int(c)) for c in self.kg2_corrupt[s]]
                + [(int(c), e_j) for c in self.kg1_corrupt[s]])

    def flat(self):
        """Index arrays ``(seed_row, neg_src, neg_tgt)`` over all negatives."""
        s, k2 = self.kg2_corrupt.shape
        k1 = self.kg1_corrupt.shape[1]
        rows = np.concatenate([np.repeat(np.arange(s), k2), np.repeat(np.arange(s), k1)])
        src = np.concatenate([np.repeat(self.seeds[:, 0], k2), self.kg1_corrupt.ravel()])
        tgt = np.concatenate([self.kg2_corrupt.ravel(), np.repeat(self.seeds[:, 1], k1)])
        return rows, src, tgt


def _nearest_excluding(dist: np.ndarray, exclude: np.ndarray, k: int) -> np.ndarray:
    dist = dist.copy()
    dist[np.arange(len(dist)), exclude] = np.inf
    # stable sort: equal distances keep ascending entity index
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def sample_negatives(x1_out: np.ndarray, x2_out: np.ndarray, seeds, k: int, epoch: int = 0) -> NegativeCache:
    """For each seed ``(e_i, e_j)`` take the ``k`` KG2 entities nearest to
    ``e_i`` (L1, skipping ``e_j``) and the ``k`` KG1 entities nearest to ``e_j``
    (skipping ``e_i``)."""
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
    x1_out = np.asarray(x1_out)
    x2_out = np.asarray(x2_out)
    k2 = min(k, len(x2_out) - 1)
    k1 = min(k, len(x1_out) - 1)
    if k2 < k or k1 < k:
        warnings.warn(f"neg_k={k} exceeds available entities; truncated to {min(k1, k2)}", RuntimeWarning)
    d12 = cdist(x1_out[seeds[:, 0]], x2_out, "cityblock")
    d21 = cdist(x2_out[seeds[:, 1]], x1_out, "cityblock")
    return NegativeCache(
        seeds=seeds,
        kg2_corrupt=_nearest_excluding(d12, seeds[:, 1], max(k2, 0)),
        kg1_corrupt=_nearest_excluding(d21, seeds[:, 0], max(k1, 0)),
        epoch=epoch,
    )


def hinge_loss(x1_out: Tensor, x2_out: Tensor, cache: NegativeCache, margin: float) -> Tensor:
    """``sum_s sum_neg max(dis(pos_s) - dis(neg) + margin, 0)`` with L1 ``dis``."""
    seeds = cache.seeds
    pos = nx.paired_l1(x1_out, seeds[:, 0], x2_out, seeds[:, 1])
    rows, src, tgt = cache.flat()
    neg = nx.paired_l1(x1_out, src, x2_out, tgt)
    gap = nx.add_scalar(nx.sub(nx.gather_rows(pos, rows), neg), margin)
    return nx.sum_all(nx.relu(gap))


class Adam:
    """Adam with bias correction; state is plain arrays so it checkpoints cleanly."""

    def __init__(self, params: Dict[str, Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.value -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainState:
    params: ModelParams
    optimizer: Adam
    hyper: HyperParams
    ablation: Ablation = Ablation()
    epoch: int = 0
    loss_history: List[float] = field(default_factory=list)
    negatives: Optional[NegativeCache] = None
    rng_seed: int = 0
    rng_state: Optional[dict] = None

    def save(self, path) -> None:
        """Write an ``.npz`` checkpoint (format documented in the README)."""
        meta = {
            "version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "adam_t": self.optimizer.t,
            "hyper": self.hyper.to_dict(),
            "ablation": asdict(self.ablation),
            "rng_seed": self.rng_seed,
            "rng_state": self.rng_state,
            "neg_epoch": None if self.negatives is None else self.negatives.epoch,
        }
        arrays = {"meta": np.array(json.dumps(meta)),
                  "loss_history": np.array(self.loss_history, dtype=np.float64)}
        for name, p in self.params.named().items():
            arrays[f"param/{name}"] = p.value
            arrays[f"adam_m/{name}"] = self.optimizer.m[name]
            arrays[f"adam_v/{name}"] = self.optimizer.v[name]
        if self.negatives is not None:
            arrays["neg/seeds"] = self.negatives.seeds
            arrays["neg/kg2"] = self.negatives.kg2_corrupt
            arrays["neg/kg1"] = self.negatives.kg1_corrupt
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "TrainState":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            params = ModelParams.from_arrays(
                {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith("param/")})
            hyper = HyperParams(**meta["hyper"])
            opt = Adam(params.named(), lr=hyper.learning_rate)
            opt.t = meta["adam_t"]
            for name in opt.m:
                opt.m[name] = np.array(data[f"adam_m/{name}"])
                opt.v[name] = np.array(data[f"adam_v/{name}"])
            negatives = None
            if "neg/seeds" in data.files:
                negatives = NegativeCache(np.array(data["neg/seeds"]), np.array(data["neg/kg2"]),
                                          np.array(data["neg/kg1"]), meta["neg_epoch"])
            return cls(
                params=params, optimizer=opt, hyper=hyper, ablation=Ablation(**meta["ablation"]),
                epoch=meta["epoch"], loss_history=data["loss_history"].tolist(),
                negatives=negatives, rng_seed=meta["rng_seed"], rng_state=meta["rng_state"],
            )


def new_state(emb1, emb2, hyper: HyperParams, ablation: Ablation = Ablation(), rng_seed: int = 0) -> TrainState:
    rng = np.random.default_rng(rng_seed)
    params = init_params(emb1, emb2, hyper, rng)
    opt = Adam(params.named(), lr=hyper.learning_rate)
    return TrainState(params, opt, hyper, ablation, rng_seed=rng_seed,
                      rng_state=rng.bit_generator.state)


def train(
    task: AlignmentTask,
    emb1=None,
    emb2=None,
    hyper: Optional[HyperParams] = None,
    ablation: Ablation = Ablation(),
    rng_seed: int = 0,
    state: Optional[TrainState] = None,
    graphs=None,
    callback=None,
) -> TrainState:
    """Full-batch training up to ``hyper.epochs``; pass ``state`` to resume.

    Negatives are rebuilt from the current forward pass whenever
    ``epoch % neg_refresh_p == 0``.
    """
    if len(task.seed_pairs) == 0:
        raise ValueError("training needs at least one seed pair")
    if state is None:
        state = new_state(emb1, emb2, hyper or HyperParams(), ablation, rng_seed)
    hyper, ablation = state.hyper, state.ablation
    g1, g2 = graphs or (GraphInputs.from_kg(task.kg1), GraphInputs.from_kg(task.kg2))
    params = state.params
    named = params.named()

    while state.epoch < hyper.epochs:
        x1 = encode(g1, params.emb1, params, hyper, ablation).output
        x2 = encode(g2, params.emb2, params, hyper, ablation).output
        if state.negatives is None or state.epoch % hyper.neg_refresh_p == 0:
            state.negatives = sample_negatives(x1.value, x2.value, task.seed_pairs, hyper.neg_k, state.epoch)
        loss = hinge_loss(x1, x2, state.negatives, hyper.margin)
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at epoch {state.epoch}")
        for p in named.values():
            p.grad = np.zeros_like(p.value)
        loss.backward()
        state.optimizer.step()
        state.loss_history.append(value)
        state.epoch += 1
        log.debug("epoch %d loss %.6f", state.epoch, value)
        if callback is not None:
            callback(state)
    return state


def final_embeddings(task: AlignmentTask, state: TrainState, graphs=None):
    """Encoded ``(X1_out, X2_out)`` arrays for the current parameters."""
    g1, g2 = graphs or (GraphInputs.from_kg(task.kg1), GraphInputs.from_kg(task.kg2))
    p = state.params
    x1 = encode(g1, p.emb1, p, state.hyper, state.ablation).output.value
    x2 = encode(g2, p.emb2, p, state.hyper, state.ablation).output.value
    return x1, x2
