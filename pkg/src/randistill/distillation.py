"""Stage 2: learn a representation and predictive head on (estimated)
nuisance-randomized data, penalizing the joint dependence between
(label, representation) and the nuisance.

The dependence penalty is estimated by a classification critic: joint rows
(y, z, r(x)) get pseudolabel 1, rows with the nuisance column permuted get
pseudolabel 0, and the trained critic's logit on joint rows is the log
density ratio whose weighted mean estimates I([y, r(x)]; z).  The outer
loop takes one gradient step on the head scale and the representation per
iteration, maximizing weighted log-likelihood minus lambda times the
critic penalty; the penalty gradient flows through r inside the critic
input while the critic parameters stay frozen.

The critic (with its nuisance embedder) is refreshed between outer steps
on a newly permuted batch; with ``reinit_critic`` it restarts from fresh
parameters each time, otherwise it warm-starts (adequate for the
low-variance Gaussian setups).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .families import Dataset
from .rng import child_seed, make_rng, train_val_split


class DistillationError(ValueError):
    pass


def _default_opt() -> nn.OptConfig:
    return nn.OptConfig(learning_rate=1e-3, epochs=1, batch_size=1000)


def _default_critic_opt() -> nn.OptConfig:
    return nn.OptConfig(learning_rate=1e-2, epochs=1, batch_size=1000)


@dataclass(frozen=True)
class DistillConfig:
    """Knobs of the bi-level loop.

    ``lam`` is the dependence-penalty coefficient; ``predictive_steps``
    counts outer gradient steps; ``critic_epochs_per_step`` counts passes
    over the refreshed critic batch between outer steps.  ``opt`` drives
    the outer (representation + head) updates, ``critic_opt`` the inner
    critic updates.
    """

    lam: float = 1.0
    penalty: str = "joint"
    critic_epochs_per_step: int = 2
    predictive_steps: int = 1200
    batch_size: int = 1000
    reinit_critic: bool = False
    rep_spec: nn.MlpSpec = nn.MlpSpec((2, 16, 1), output="linear")
    pred_head_spec: nn.MlpSpec = nn.MlpSpec((1, 1), output="logit")
    critic_spec: nn.MlpSpec = nn.MlpSpec((3, 16, 16, 1), output="logit")
    z_embed_spec: nn.MlpSpec = nn.MlpSpec((1, 16, 1), output="linear")
    opt: nn.OptConfig = field(default_factory=_default_opt)
    critic_opt: nn.OptConfig = field(default_factory=_default_critic_opt)

    def __post_init__(self):
        if self.lam < 0:
            raise DistillationError("lambda must be nonnegative")
        if self.penalty != "joint":
            raise DistillationError(f"unsupported penalty {self.penalty!r}")
        if self.batch_size < 8:
            raise DistillationError("batch size must be at least 8")
        if self.critic_spec.layer_sizes[0] != 3:
            raise DistillationError("critic consumes (label, nuisance embedding, representation)")


@dataclass
class CriticBatch:
    """Joint rows plus the same rows with the nuisance column permuted."""

    y: np.ndarray  # (n,)
    z: np.ndarray  # (n, 1) joint nuisance
    z_shuffled: np.ndarray  # (n, 1) permuted nuisance
    r: np.ndarray  # (n,) representation values
    w: np.ndarray  # (n,) weights

    def __post_init__(self):
        n = self.y.shape[0]
        if not (self.z.shape == self.z_shuffled.shape == (n, 1) and self.r.shape == (n,)):
            raise DistillationError("critic batch columns are misaligned")
        if not np.all(self.w > 0):
            raise DistillationError("critic batch weights must be positive")


@dataclass
class DistillResult:
    rep: nn.MlpModel
    head: nn.MlpModel
    history: list[dict]
    val_indices: np.ndarray
    critic: nn.MlpModel
    z_embed: nn.MlpModel


def _init_head(spec: nn.MlpSpec) -> nn.MlpModel:
    """Deterministic head start: weights 1/fan_in, biases 0.

    The head is a scale on the scalar representation; starting the scale
    at 1 (rather than a random draw near 0) removes a seed lottery in
    which the representation receives a vanishing gradient for hundreds
    of steps.
    """
    params = np.zeros(spec.n_params)
    off = 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        params[off : off + n_out * n_in] = 1.0 / n_in
        off += n_out * n_in + n_out
    return nn.MlpModel(spec, params)


def _init_rep(spec: nn.MlpSpec, seed: int) -> nn.MlpModel:
    """Representation init with the final layer scaled down.

    A randomly initialized representation is nuisance-laden (every
    covariate direction carries the nuisance), so the dependence penalty
    plus the head's calibration gradient initially both push its scale
    toward zero, a collapse basin that is a known trivial optimum of the
    penalized objective.  Starting near the zero representation instead
    lets the likelihood gradient grow it along the label direction from
    the first step.
    """
    model = nn.init(spec, seed)
    params = model.params.copy()
    n_out_final = spec.layer_sizes[-1]
    n_in_final = spec.layer_sizes[-2]
    w_stop = params.size - n_out_final
    params[w_stop - n_out_final * n_in_final : w_stop] *= 0.1
    return model.with_params(params)


def make_critic_batch(data: Dataset, rep: nn.MlpModel, seed: int) -> CriticBatch:
    """Pair the dataset's (y, z, r(x), w) rows with a seeded uniform
    permutation of the nuisance column."""
    if rep.spec.layer_sizes[0] != data.x.shape[1]:
        raise DistillationError("representation input size does not match covariates")
    r = nn.forward_batch(rep, data.x)
    perm = make_rng(seed, "perm").permutation(len(data))
    return CriticBatch(data.y, data.z, data.z[perm], r, data.w)


def critic_logits(
    critic: nn.MlpModel, z_embed: nn.MlpModel, y: np.ndarray, z: np.ndarray, r: np.ndarray
) -> np.ndarray:
    """Critic logit on rows (y, s(z), r); the log density ratio estimate."""
    s = nn.forward_batch(z_embed, z)
    return nn.forward_batch(critic, np.column_stack([y, s, r]))


def mi_estimate(critic: nn.MlpModel, z_embed: nn.MlpModel, batch: CriticBatch) -> float:
    """Weighted mean critic logit over joint rows; estimates I([y, r]; z).

    Can be slightly negative under estimation noise.
    """
    logits = critic_logits(critic, z_embed, batch.y, batch.z, batch.r)
    return float((batch.w * logits).sum() / batch.w.sum())


def train_critic(
    critic: nn.MlpModel,
    z_embed: nn.MlpModel,
    batch: CriticBatch,
    epochs: int,
    opt: nn.OptConfig,
    rng: np.random.Generator,
    adam_critic: nn.Adam | None = None,
    adam_embed: nn.Adam | None = None,
) -> tuple[nn.MlpModel, nn.MlpModel, float]:
    """Fit the critic to separate joint rows (pseudolabel 1) from
    nuisance-permuted rows (pseudolabel 0); returns the last batch loss."""
    n = batch.y.shape[0]
    y2 = np.concatenate([batch.y, batch.y])
    z2 = np.concatenate([batch.z, batch.z_shuffled])
    r2 = np.concatenate([batch.r, batch.r])
    w2 = np.concatenate([batch.w, batch.w])
    labels = np.concatenate([np.ones(n), np.zeros(n)])

    adam_critic = adam_critic or nn.Adam(critic.spec.n_params, opt)
    adam_embed = adam_embed or nn.Adam(z_embed.spec.n_params, opt)
    cparams = critic.params.copy()
    eparams = z_embed.params.copy()
    loss = math.nan
    # One "epoch" sweeps all 2n rows in slices of 2*batch_size, so each
    # inner step sees about batch_size joint and batch_size permuted rows.
    for _ in range(epochs):
        for idx in nn.batch_indices(2 * n, 2 * opt.batch_size, rng):
            cwork = critic.with_params(cparams)
            ework = z_embed.with_params(eparams)
            s, e_in, e_pre = nn._forward_full(ework, z2[idx])
            u = np.column_stack([y2[idx], s, r2[idx]])
            logits, c_in, c_pre = nn._forward_full(cwork, u)
            loss, dlogits = nn.bce_loss_and_grad(logits, labels[idx], w2[idx])
            if not math.isfinite(loss):
                raise nn.TrainingDivergedError("critic loss diverged")
            cgrad, du = nn._backward_from_cache(cwork, c_in, c_pre, dlogits)
            egrad, _ = nn._backward_from_cache(ework, e_in, e_pre, du[:, 1])
            cparams = adam_critic.step(cparams, cgrad)
            eparams = adam_embed.step(eparams, egrad)
    return critic.with_params(cparams), z_embed.with_params(eparams), loss


def _selection_objective(rep, head, critic, z_embed, data: Dataset, lam: float) -> float:
    """Validation value of the distillation objective used for model
    selection: log-likelihood minus lambda times the dependence estimate,
    with the estimate floored at zero (mutual information is nonnegative;
    a negative critic mean on held-out rows is estimation noise and would
    otherwise reward arbitrary models)."""
    w = data.w
    r = nn.forward_batch(rep, data.x)
    logits = nn.forward_batch(head, r[:, None])
    bce, _ = nn.bce_loss_and_grad(logits, data.y, w)
    c = critic_logits(critic, z_embed, data.y, data.z, r)
    penalty = float((w * c).sum() / w.sum())
    return -bce - lam * max(0.0, penalty)


def distill(data: Dataset, weights: np.ndarray, cfg: DistillConfig, seed: int) -> DistillResult:
    """Alternating critic / predictive optimization with model selection by
    the distillation objective on a held-out fifth of the rows."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(data),):
        raise DistillationError("weights must align with the dataset")
    if not np.all(weights > 0):
        raise DistillationError("weights must be strictly positive")
    if cfg.rep_spec.layer_sizes[0] != data.x.shape[1]:
        raise DistillationError("representation input size does not match covariates")

    tr_idx, va_idx = train_val_split(len(data), child_seed(seed, 0))
    train = data.subset(tr_idx).with_weights(weights[tr_idx])
    val = data.subset(va_idx).with_weights(weights[va_idx])

    rep = _init_rep(cfg.rep_spec, child_seed(seed, 1))
    head = _init_head(cfg.pred_head_spec)
    critic = nn.init(cfg.critic_spec, child_seed(seed, 3))
    z_embed = nn.init(cfg.z_embed_spec, child_seed(seed, 4))

    adam_rep = nn.Adam(rep.spec.n_params, cfg.opt)
    adam_head = nn.Adam(head.spec.n_params, cfg.opt)
    adam_critic = nn.Adam(critic.spec.n_params, cfg.critic_opt)
    adam_embed = nn.Adam(z_embed.spec.n_params, cfg.critic_opt)

    outer_rng = make_rng(seed, "shuffle", 1)
    critic_rng = make_rng(seed, "shuffle", 2)
    batch_iter = _cycling_batches(len(train), cfg.batch_size, outer_rng)

    history: list[dict] = []
    best = (-math.inf, rep.params.copy(), head.params.copy())
    for step in range(cfg.predictive_steps):
        if cfg.reinit_critic:
            critic = nn.init(cfg.critic_spec, child_seed(seed, 5 + 2 * step))
            z_embed = nn.init(cfg.z_embed_spec, child_seed(seed, 6 + 2 * step))
            adam_critic = nn.Adam(critic.spec.n_params, cfg.critic_opt)
            adam_embed = nn.Adam(z_embed.spec.n_params, cfg.critic_opt)

        cbatch = make_critic_batch(train, rep, child_seed(seed, 7) + step)
        critic, z_embed, closs = train_critic(
            critic,
            z_embed,
            cbatch,
            cfg.critic_epochs_per_step,
            cfg.critic_opt,
            critic_rng,
            adam_critic,
            adam_embed,
        )

        idx = next(batch_iter)
        rep, head, row = _outer_step(
            rep, head, critic, z_embed, train, idx, cfg, adam_rep, adam_head, step
        )
        obj_v = _selection_objective(rep, head, critic, z_embed, val, cfg.lam)
        row["val_objective"] = obj_v
        history.append(row)
        if obj_v > best[0]:
            best = (obj_v, rep.params.copy(), head.params.copy())

    return DistillResult(
        rep.with_params(best[1]), head.with_params(best[2]), history, va_idx, critic, z_embed
    )


def _cycling_batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        yield from nn.batch_indices(n, batch_size, rng)


def _outer_step(rep, head, critic, z_embed, train, idx, cfg, adam_rep, adam_head, step):
    """One ascent step on (head, representation) for the penalized likelihood."""
    xb, yb, zb, wb = train.x[idx], train.y[idx], train.z[idx], train.w[idx]
    total = wb.sum()

    r, rep_in, rep_pre = nn._forward_full(rep, xb)
    logits, head_in, head_pre = nn._forward_full(head, r[:, None])
    bce, dlogits = nn.bce_loss_and_grad(logits, yb, wb)

    s, emb_in, emb_pre = nn._forward_full(z_embed, zb)
    u = np.column_stack([yb, s, r])
    c, c_in, c_pre = nn._forward_full(critic, u)
    penalty = float((wb * c).sum() / total)

    loglik = -bce
    objective = loglik - cfg.lam * penalty
    if not math.isfinite(objective):
        raise nn.TrainingDivergedError(f"distillation objective diverged at step {step}", step)

    # Minimize bce + lam * penalty: the head sees only the likelihood part,
    # the representation sees both (penalty flows through the critic input).
    head_grad, dr_head = nn._backward_from_cache(head, head_in, head_pre, dlogits)
    dc = cfg.lam * wb / total
    _, du = nn._backward_from_cache(critic, c_in, c_pre, dc)
    dr = dr_head[:, 0] + du[:, 2]
    rep_grad, _ = nn._backward_from_cache(rep, rep_in, rep_pre, dr)

    rep = rep.with_params(adam_rep.step(rep.params, rep_grad))
    head = head.with_params(adam_head.step(head.params, head_grad))
    row = {"step": step, "loglik": loglik, "penalty": penalty, "objective": objective}
    return rep, head, row


def write_history_csv(history: list[dict], path) -> None:
    """Emit (step, loglik, penalty, objective, val_objective) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loglik", "penalty", "objective", "val_objective"])
        for row in history:
            writer.writerow(
                [
                    row["step"],
                    "%.17g" % row["loglik"],
                    "%.17g" % row["penalty"],
                    "%.17g" % row["objective"],
                    "%.17g" % row["val_objective"],
                ]
            )
