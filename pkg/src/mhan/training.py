"""Edge split, negative sampling, margin loss, and the training loop.

Training is full batch: every epoch runs one forward pass, scores all
training positives against fresh negatives, sums the hinge terms, and takes
one optimizer step. Held-out problem edges are removed from the
message-passing graph before the model is built, so evaluation scores never
see their own test links.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import EcgGraph
from .model import Mhan, forward_tensors


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    seed: int = 2022
    split_ratio: float = 0.8
    lr: float = 0.001
    epochs: int = 200
    neg_k: int = 5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    patience: int | None = None  # early stop on train-loss plateau; off by default
    noise_dist: str = "uniform"  # or "popularity"

    def validate(self) -> None:
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split ratio must lie in (0, 1)")
        if self.neg_k < 1:
            raise ValueError("neg_k must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.noise_dist not in ("uniform", "popularity"):
            raise ValueError(f"unknown noise distribution {self.noise_dist!r}")


@dataclass(frozen=True)
class EdgeSplit:
    train: tuple[tuple[int, int], ...]  # (problem idx, evidence idx)
    test: tuple[tuple[int, int], ...]

    def positives_by_problem(self, which: str = "all") -> dict[int, set[int]]:
        pairs: list[tuple[int, int]] = []
        if which in ("all", "train"):
            pairs.extend(self.train)
        if which in ("all", "test"):
            pairs.extend(self.test)
        out: dict[int, set[int]] = {}
        for p, e in pairs:
            out.setdefault(p, set()).add(e)
        return out


def split_edges(ecg: EcgGraph, ratio: float, seed: int) -> EdgeSplit:
    """Seeded shuffle of the (problem, evidence) pairs, first part training."""
    pairs = ecg.problem_pairs()
    if len(pairs) < 2:
        raise TrainingError("need at least 2 problem edges to split")
    n_test = round((1.0 - ratio) * len(pairs))
    if n_test == 0 or n_test == len(pairs):
        raise TrainingError(f"ratio {ratio} leaves an empty train or test set")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    n_train = len(pairs) - n_test
    return EdgeSplit(train=tuple(shuffled[:n_train]), test=tuple(shuffled[n_train:]))


def sample_negatives(
    problem: int,
    k: int,
    positives: set[int],
    rng: np.random.Generator,
    num_evidence: int,
    weights: np.ndarray | None = None,
) -> list[int]:
    """k distinct evidence indices from outside the problem's positives.

    Uniform by default; ``weights`` switches to a popularity-proportional
    draw. Every known positive (train and test) must be excluded by the
    caller via ``positives``.
    """
    pool = np.array([e for e in range(num_evidence) if e not in positives], dtype=np.intp)
    if pool.shape[0] < k:
        raise TrainingError(
            f"problem {problem}: candidate pool {pool.shape[0]} smaller than k={k}"
        )
    if weights is None:
        picked = rng.choice(pool, size=k, replace=False)
    else:
        w = weights[pool].astype(np.float64)
        picked = rng.choice(pool, size=k, replace=False, p=w / w.sum())
    return [int(e) for e in picked]


def margin_terms(y_pos: Tensor, y_neg: Tensor) -> Tensor:
    """Hinge terms max(0, 1 - y_pos + y_neg), broadcasting positives over
    their negatives."""
    one = ad.const(1.0)
    return ad.hinge(ad.add(ad.sub(one, y_pos), y_neg))


def margin_loss(y_pos: float, y_negs) -> float:
    """Plain-number margin loss for a single positive against its negatives."""
    y_negs = list(y_negs)
    if not y_negs:
        raise ValueError("margin loss needs at least one negative score")
    pos = ad.const(float(y_pos))
    negs = ad.const(np.asarray(y_negs, dtype=np.float64))
    return float(ad.sum_(margin_terms(pos, negs)).value)


def popularity_weights(split: EdgeSplit, num_evidence: int) -> np.ndarray:
    """Add-one-smoothed training-link counts per evidence node."""
    counts = np.ones(num_evidence)
    for _p, e in split.train:
        counts[e] += 1.0
    return counts


def epoch_loss(model: Mhan, split: EdgeSplit, neg_k: int, rng: np.random.Generator, noise_dist: str = "uniform") -> Tensor:
    """Full-batch loss: every train positive against fresh negatives."""
    h = forward_tensors(model)
    positives = split.positives_by_problem("all")
    weights = popularity_weights(split, model.corpus.num_evidence) if noise_dist == "popularity" else None
    p_idx = np.array([p for p, _e in split.train], dtype=np.intp)
    e_idx = np.array([e for _p, e in split.train], dtype=np.intp)
    neg_idx = np.array(
        [
            sample_negatives(p, neg_k, positives[p], rng, model.corpus.num_evidence, weights)
            for p, _e in split.train
        ],
        dtype=np.intp,
    )  # (n_pos, k)

    prob_rows = ad.take_rows(h["problem"], p_idx)
    pos_rows = ad.take_rows(h["evidence"], e_idx)
    y_pos = ad.sigmoid(ad.rows_dot(prob_rows, pos_rows))  # (n_pos,)

    n_pos = p_idx.shape[0]
    neg_rows = ad.take_rows(h["evidence"], neg_idx.reshape(-1))
    prob_rep = ad.take_rows(h["problem"], np.repeat(p_idx, neg_k))
    y_neg = ad.sigmoid(ad.rows_dot(prob_rep, neg_rows))  # (n_pos * k,)

    terms = margin_terms(
        ad.reshape(y_pos, (n_pos, 1)),
        ad.reshape(y_neg, (n_pos, neg_k)),
    )
    return ad.sum_(terms)


def train(
    config: TrainingConfig,
    model: Mhan,
    split: EdgeSplit,
) -> tuple[dict[str, np.ndarray], list[float]]:
    """Run the loop and return final parameter values plus the loss trace."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    best = np.inf
    stale = 0
    for epoch in range(config.epochs):
        loss = epoch_loss(model, split, config.neg_k, rng, config.noise_dist)
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        ad.backward(loss)
        ad.adam_step(model.store, config.lr, config.betas, config.eps)
        trace.append(value)
        if config.patience is not None:
            if value < best - 1e-12:
                best = value
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return model.store.values(), trace


def write_loss_trace(path, trace: list[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, value in enumerate(trace):
            fh.write(f"{epoch},{value!r}\n")
