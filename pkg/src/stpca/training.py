"""Masked loss, exact reverse-mode gradients, Adam, and the training loop."""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Normalizer
from .model import ModelParams, batch_arrays, forward


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    batch_size: int = 32
    grad_clip_norm: float = 5.0
    seed: int = 0
    strategy: Optional[str] = None  # informational; the embedding table decides

    def __post_init__(self):
        if min(self.lr, self.max_epochs, self.patience, self.batch_size,
               self.grad_clip_norm) <= 0:
            raise ValueError("training hyperparameters must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (epoch, train_loss, val_mae)
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    stopping_reason: str = ""


def masked_mae_loss(pred: np.ndarray, target: np.ndarray, normalizer: Normalizer):
    """Mean absolute error over nonzero-target cells, in original units.

    pred is normalized, target is raw; predictions are de-normalized inside so
    the masking matches evaluation exactly. Returns (loss, d loss / d pred).
    A batch with no valid cells yields (nan, zeros) and a warning; callers
    skip it rather than fail.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mask = target != 0
    count = int(mask.sum())
    if count == 0:
        warnings.warn("batch skipped: no valid (nonzero) targets")
        return float("nan"), np.zeros_like(pred)
    diff = np.where(mask, normalizer.invert(pred) - target, 0.0)
    loss = float(np.abs(diff).sum() / count)
    grad = np.sign(diff) * (normalizer.std / count)  # sign(0) = 0 covers ties
    return loss, grad


def backward(params: ModelParams, cache: dict, loss_grad: np.ndarray,
             trainable=None):
    """Exact gradients of the cached forward pass for every trainable tensor."""
    cfg = params.config
    names = params.trainable_names() if trainable is None else list(trainable)
    hs, zs, rs = cache["hs"], cache["zs"], cache["rs"]
    x = cache["x"]
    ch, ce, ct = cfg.hidden_dim, cfg.embed_dim, cfg.tod_dim

    grads = {}
    dy = loss_grad
    grads["w_o"] = np.einsum("bnl,bnm->lm", dy, hs[-1])
    grads["b_o"] = dy.sum(axis=(0, 1))
    dh = dy @ params.w_o

    d_emb_graph = None
    for i in range(cfg.num_blocks - 1, -1, -1):
        if cfg.use_graph and i == 0:
            adp, h_pre = cache["graph"], cache["h_premix"]
            d_adj = np.einsum("buf,bvf->uv", dh, h_pre)
            dh = np.einsum("uv,buf->bvf", adp.weights, dh)
            # softmax rows -> relu -> gram -> embedding
            a = adp.weights
            d_logits = a * (d_adj - (a * d_adj).sum(axis=1, keepdims=True))
            d_gram = d_logits * (cache["gram"] > 0)
            d_emb_graph = (d_gram + d_gram.T) @ cache["embedding"].values
        blk = params.blocks[i]
        grads[f"b2_{i}"] = dh.sum(axis=(0, 1))
        grads[f"w2_{i}"] = np.einsum("bnm,bnk->mk", dh, rs[i])
        dr = dh @ blk["w2"]
        dz = dr * (zs[i] > 0)
        grads[f"b1_{i}"] = dz.sum(axis=(0, 1))
        grads[f"w1_{i}"] = np.einsum("bnm,bnk->mk", dz, hs[i])
        dh = dh + dz @ blk["w1"]

    du = dh[:, :, :ch]
    grads["w_x"] = np.einsum("bnc,bnl->cl", du, x)
    grads["b_x"] = du.sum(axis=(0, 1))

    d_emb = dh[:, :, ch : ch + ce].sum(axis=0)
    if d_emb_graph is not None:
        d_emb = d_emb + d_emb_graph
    grads["embedding"] = d_emb

    d_tod = np.zeros_like(params.tod)
    np.add.at(d_tod, cache["tod_idx"], dh[:, :, ch + ce : ch + ce + ct].sum(axis=1))
    grads["tod"] = d_tod
    d_dow = np.zeros_like(params.dow)
    np.add.at(d_dow, cache["dow_idx"], dh[:, :, ch + ce + ct :].sum(axis=1))
    grads["dow"] = d_dow

    out = {name: grads[name] for name in names}
    for name, g in out.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
    return out


def clip_gradients(grads: dict, max_norm: float):
    """Scale the whole gradient set down if its global norm exceeds max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}, total
    return grads, total


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(state: AdamState, params: ModelParams, grads: dict, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8, grad_clip_norm=None):
    """One bias-corrected Adam update, applied in place."""
    if grad_clip_norm is not None:
        grads, _ = clip_gradients(grads, grad_clip_norm)
    state.t += 1
    tensors = params.tensors()
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** state.t)
        v_hat = state.v[name] / (1 - beta2 ** state.t)
        tensors[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


class EarlyStopping:
    """Patience counter on strictly-improving validation MAE."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, val_mae: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_mae < self.best:
            self.best = val_mae
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _val_masked_mae(params, windows, normalizer, batch_size=512):
    total_abs, total_cnt = 0.0, 0
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo : lo + batch_size]
        x, y, tod_idx, dow_idx = batch_arrays(chunk, normalizer)
        pred = normalizer.invert(forward(params, None, x, tod_idx, dow_idx))
        mask = y != 0
        total_abs += float(np.abs(pred - y)[mask].sum())
        total_cnt += int(mask.sum())
    if total_cnt == 0:
        raise ValueError("validation set has no valid targets")
    return total_abs / total_cnt


def fit(params: ModelParams, train_windows, val_windows, normalizer,
        config: TrainConfig, trainable=None):
    """Train with seeded shuffling, keep the best validation snapshot.

    Stops on patience exhaustion, the epoch cap, or a non-finite loss (the
    report's stopping_reason says which). The model's embedding slot is
    updated only when the adaptive strategy (or an explicit trainable list)
    includes it; otherwise it is untouched, bit for bit.
    """
    if not train_windows or not val_windows:
        raise ValueError("train and validation windows must be non-empty")
    if config.strategy is not None and config.strategy != params.embedding.strategy:
        raise ValueError(
            f"config strategy {config.strategy!r} != embedding strategy "
            f"{params.embedding.strategy!r}"
        )
    names = params.trainable_names() if trainable is None else list(trainable)
    x_all, y_all, tod_all, dow_all = batch_arrays(train_windows, normalizer)
    n_train = len(train_windows)

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    report = TrainReport()
    stopper = EarlyStopping(config.patience)
    best = params.clone()

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n_train)
        losses = []
        for lo in range(0, n_train, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            y_batch = y_all[idx]
            if not (y_batch != 0).any():
                warnings.warn("batch skipped: no valid (nonzero) targets")
                continue
            pred, cache = forward(params, None, x_all[idx], tod_all[idx],
                                  dow_all[idx], cache=True)
            loss, lgrad = masked_mae_loss(pred, y_batch, normalizer)
            if not np.isfinite(loss):
                report.stopping_reason = "diverged"
                report.best_epoch = stopper.best_epoch
                report.best_val_mae = stopper.best
                return best, report
            grads = backward(params, cache, lgrad, trainable=names)
            adam_step(state, params, grads, config.lr,
                      grad_clip_norm=config.grad_clip_norm)
            losses.append(loss)

        val_mae = _val_masked_mae(params, val_windows, normalizer)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        report.epochs.append((epoch, train_loss, val_mae))
        improved = val_mae < stopper.best
        should_stop = stopper.update(epoch, val_mae)
        if improved:
            best = params.clone()
        if should_stop:
            report.stopping_reason = "early_stopping"
            break
    else:
        report.stopping_reason = "max_epochs"

    report.best_epoch = stopper.best_epoch
    report.best_val_mae = stopper.best
    return best, report


def finite_difference_check(params: ModelParams, windows, normalizer,
                            h: float = 1e-5, trainable=None):
    """Central-difference check of backward, scalar by scalar.

    Returns {tensor name: max relative error}. Relative error uses
    max(|analytic|, |numeric|) as denominator; pairs where both magnitudes
    are below 1e-7 count as exact (the difference is pure roundoff).
    """
    names = params.trainable_names() if trainable is None else list(trainable)
    x, y, tod_idx, dow_idx = batch_arrays(windows, normalizer)
    pred, cache = forward(params, None, x, tod_idx, dow_idx, cache=True)
    _, lgrad = masked_mae_loss(pred, y, normalizer)
    grads = backward(params, cache, lgrad, trainable=names)

    def loss_at():
        p = forward(params, None, x, tod_idx, dow_idx)
        loss, _ = masked_mae_loss(p, y, normalizer)
        return loss

    errors = {}
    tensors = params.tensors()
    for name in names:
        tensor = tensors[name]
        analytic = grads[name]
        worst = 0.0
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = tensor[ix]
            tensor[ix] = orig + h
            lp = loss_at()
            tensor[ix] = orig - h
            lm = loss_at()
            tensor[ix] = orig
            fd = (lp - lm) / (2 * h)
            a = analytic[ix]
            denom = max(abs(a), abs(fd))
            if denom < 1e-7:
                continue
            worst = max(worst, abs(a - fd) / denom)
        errors[name] = worst
    return errors
