import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from tqdm import tqdm

from app.core import tensor as T
from app.core.errors import CheckpointError, LossError
from app.core.geom import canonical_quat, normalize_quat, quat_angle_between
from app.core.net import NetOutput, PwcloNet
from app.core.pcops import random_sample
from app.core.tensor import ParameterRegistry, Tape, Tensor, load_checkpoint, save_checkpoint
from app.core.util import atomic_write_text
from app.models.config import RunConfig, TrainConfig, config_hash, describe
from app.models.pointcloud import FramePair
from app.models.pose import Pose
from app.util.kittio import augment

logger = logging.getLogger(__name__)

S_X = "loss.s_x"
S_Q = "loss.s_q"

CHECKPOINT_NAME = "checkpoint.params"
METRICS_NAME = "metrics.csv"
METRICS_COLUMNS = ["step", "lr", "loss", "loss_l1", "loss_l2", "loss_l3", "loss_l4", "s_x", "s_q"]


def add_loss_parameters(registry: ParameterRegistry, cfg: TrainConfig) -> None:
    registry.add(S_X, np.array(cfg.s_x))
    registry.add(S_Q, np.array(cfg.s_q))


@dataclass(frozen=True)
class LossParams:
    s_x: Tensor
    s_q: Tensor
    alphas: tuple[float, ...] = (1.6, 0.8, 0.4, 0.2)
    finest_first: bool = True

    @classmethod
    def from_params(cls, params, cfg: TrainConfig) -> "LossParams":
        return cls(params[S_X], params[S_Q], cfg.alphas, cfg.finest_first)


@dataclass(frozen=True)
class LossBreakdown:
    total: Tensor
    levels: list[Tensor]  # l = 1 first

    def level_values(self) -> list[float]:
        return [lv.item() for lv in self.levels]


def level_loss(q: Tensor, t: Tensor, gt: Pose, s_x: Tensor, s_q: Tensor) -> Tensor:
    """|t_gt - t|_1 exp(-s_x) + s_x + |q_gt - q/|q||_2 exp(-s_q) + s_q."""
    t_err = T.reduce_sum(T.absolute(Tensor(gt.t) - t), axis=0)
    q_hat = canonical_quat(normalize_quat(q))
    q_err = T.norm(Tensor(gt.q.canonical().as_array()) - q_hat, axis=0)
    return t_err * T.exp(-s_x) + s_x + q_err * T.exp(-s_q) + s_q


def level_weights(n: int, lp: LossParams) -> list[float]:
    """Weights for outputs ordered coarse to fine."""
    if n == 1:
        return [lp.alphas[0]]
    if n != len(lp.alphas):
        raise LossError(f"{n} output levels but {len(lp.alphas)} alphas")
    by_level = list(lp.alphas)  # index 0 is l = 1
    return by_level[::-1] if lp.finest_first else by_level


def total_loss(outputs: NetOutput | Sequence[tuple[Tensor, Tensor]], gt: Pose, lp: LossParams) -> LossBreakdown:
    """Sum of alpha-weighted level losses with shared s_x, s_q."""
    if isinstance(outputs, NetOutput):
        outputs = [(s.q, s.t) for s in outputs.levels]
    if not outputs:
        raise LossError("no output levels to score")
    weights = level_weights(len(outputs), lp)
    losses = [level_loss(q, t, gt, lp.s_x, lp.s_q) for q, t in outputs]
    total = T.scale(losses[0], weights[0])
    for w, loss in zip(weights[1:], losses[1:]):
        total = total + T.scale(loss, w)
    # report l = 1 first
    by_level = losses[::-1] if lp.finest_first else losses
    return LossBreakdown(total, by_level)


@dataclass
class OptimState:
    cfg: TrainConfig
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rejected: int = 0

    @classmethod
    def create(cls, registry: ParameterRegistry, cfg: TrainConfig) -> "OptimState":
        state = cls(cfg)
        for p in registry.trainable():
            state.m[p.name] = np.zeros(p.shape)
            state.v[p.name] = np.zeros(p.shape)
        return state

    def extras(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def from_extras(cls, registry: ParameterRegistry, cfg: TrainConfig, extras: dict[str, np.ndarray],
                    step: int) -> "OptimState":
        state = cls.create(registry, cfg)
        for name in state.m:
            try:
                m, v = extras[f"adam.m.{name}"], extras[f"adam.v.{name}"]
            except KeyError:
                raise CheckpointError(f"checkpoint has no optimizer moments for '{name}'") from None
            if m.shape != state.m[name].shape or v.shape != state.v[name].shape:
                raise CheckpointError(f"optimizer moments for '{name}' have the wrong shape")
            state.m[name], state.v[name] = m.copy(), v.copy()
        state.step = step
        return state


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Stepwise exponential decay every `decay_steps`, floored."""
    return max(cfg.learning_rate * cfg.decay_rate ** (step // cfg.decay_steps), cfg.lr_floor)


def optimizer_step(registry: ParameterRegistry, grads: dict[str, np.ndarray], state: OptimState) -> bool:
    """Bias-corrected Adam update; returns False (and changes nothing) on non-finite gradients."""
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        state.rejected += 1
        logger.warning("rejected optimizer step %d: non-finite gradient in %s", state.step, ", ".join(bad[:5]))
        return False

    cfg = state.cfg
    lr = learning_rate(state.step, cfg)
    t = state.step + 1
    for p in registry.trainable():
        g = grads.get(p.name)
        if g is None:
            g = np.zeros(p.shape)
        m = state.m[p.name] = cfg.beta1 * state.m[p.name] + (1 - cfg.beta1) * g
        v = state.v[p.name] = cfg.beta2 * state.v[p.name] + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        registry.set(p.name, p.tensor.data - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon))
    state.step = t
    return True


def sample_index(iteration: int, slot: int, batch_size: int, size: int, seed: int) -> int:
    """Dataset row for batch slot `slot` of `iteration`; a fresh permutation every epoch."""
    i = iteration * batch_size + slot
    perm = np.random.default_rng([seed, i // size]).permutation(size)
    return int(perm[i % size])


def prepare_pair(pair: FramePair, run: RunConfig, rng: np.random.Generator) -> FramePair:
    data = run.data
    if data.augment:
        pair = augment(pair, np.deg2rad(data.sigma_rot_deg), data.sigma_trans, rng=rng)
    n = run.net.n_points
    return FramePair(random_sample(pair.pc1, n, rng=rng), random_sample(pair.pc2, n, rng=rng),
                     pair.gt, pair.sequence_id, pair.frame_index)


@dataclass(frozen=True)
class SampleResult:
    grads: dict[str, np.ndarray]
    loss: float
    levels: list[float]


def sample_gradients(net: PwcloNet, registry: ParameterRegistry, pair: FramePair, run: RunConfig,
                     rng: np.random.Generator) -> SampleResult:
    """Forward and backward of one pair on its own tape."""
    pair = prepare_pair(pair, run, rng)
    tape = Tape()
    params = tape.bind(registry)
    out = net.forward(pair.pc1, pair.pc2, params, rng)
    loss = total_loss(out, pair.gt, LossParams.from_params(params, run.train))
    return SampleResult(tape.backward(loss.total), loss.total.item(), loss.level_values())


@dataclass
class TrainResult:
    registry: ParameterRegistry
    state: OptimState
    iterations: int
    losses: list[float]
    out_dir: Path | None

    @property
    def checkpoint_path(self) -> Path | None:
        return None if self.out_dir is None else self.out_dir / CHECKPOINT_NAME

    @property
    def metrics_path(self) -> Path | None:
        return None if self.out_dir is None else self.out_dir / METRICS_NAME


def _append_metrics(path: Path, rows: list[list]) -> None:
    try:
        new = not path.exists()
        with open(path, "a", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            if new:
                writer.writerow(METRICS_COLUMNS)
            writer.writerows(rows)
    except OSError as e:
        raise CheckpointError(f"cannot append to metrics log {path}: {e}") from e


def _truncate_metrics(path: Path, iteration: int) -> None:
    """Drop rows past `iteration` left by a run that went further than the resumed checkpoint."""
    if not path.exists():
        return
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        kept = rows[:1] + [r for r in rows[1:] if r and int(r[0]) <= iteration]
        if len(kept) == len(rows):
            return
        buf = io.StringIO(newline="")
        csv.writer(buf).writerows(kept)
        atomic_write_text(path, buf.getvalue())
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot rewind metrics log {path}: {e}") from e
    logger.info("dropped %d metrics rows past iteration %d", len(rows) - len(kept), iteration)


def _metrics_row(iteration: int, lr: float, batch: list[SampleResult], registry: ParameterRegistry) -> list:
    n = len(batch)
    loss = sum(r.loss for r in batch) / n
    levels = [sum(r.levels[i] for r in batch) / n for i in range(len(batch[0].levels))]
    levels += [""] * (4 - len(levels))
    return [iteration, repr(lr), repr(loss), *(lv if lv == "" else repr(lv) for lv in levels),
            repr(float(registry[S_X].tensor.data)), repr(float(registry[S_Q].tensor.data))]


def _save(out_dir: Path, registry: ParameterRegistry, state: OptimState, iteration: int, run: RunConfig) -> None:
    meta = {"iteration": str(iteration), "optim_step": str(state.step), "rejected": str(state.rejected),
            "seed": str(run.train.seed), "config_hash": config_hash(run)}
    save_checkpoint(out_dir / CHECKPOINT_NAME, registry, state.extras(), meta)


def train_loop(dataset: Sequence[FramePair], run: RunConfig, out_dir: str | os.PathLike | None = None,
               resume: str | os.PathLike | None = None, registry: ParameterRegistry | None = None,
               progress: bool = False) -> TrainResult:
    """
    Train on `dataset` for `run.train.steps` iterations.

    Every batch and every per-pair random draw is a pure function of
    (seed, iteration, slot), so resuming from a checkpoint continues exactly
    the run that wrote it. The metrics CSV gets one row per iteration.
    """
    cfg = run.train
    net = PwcloNet(run.net)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        registry = ckpt.registry
        net.check_parameters(registry)
        for name in (S_X, S_Q):
            if name not in registry:
                raise CheckpointError(f"checkpoint has no loss parameter '{name}'")
        try:
            start = int(ckpt.meta["iteration"])
            optim_step = int(ckpt.meta["optim_step"])
        except (KeyError, ValueError):
            raise CheckpointError("checkpoint meta lacks the iteration counters") from None
        state = OptimState.from_extras(registry, cfg, ckpt.extras, optim_step)
        state.rejected = int(ckpt.meta.get("rejected", "0"))
        if out is not None:
            _truncate_metrics(out / METRICS_NAME, start)
        logger.info("resuming from %s at iteration %d", resume, start)
    else:
        if registry is None:
            registry = net.init_parameters(np.random.default_rng([cfg.seed, 0x5EED]))
            add_loss_parameters(registry, cfg)
        else:
            net.check_parameters(registry)
        state = OptimState.create(registry, cfg)

    for line in describe(run.net):
        logger.info("config: %s", line)
    logger.info("config hash %s, %d trainable parameters", config_hash(run), registry.num_trainable())

    losses: list[float] = []
    if len(dataset) == 0:
        logger.info("dataset is empty, nothing to train")
        return TrainResult(registry, state, start, losses, out)

    executor = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for iteration in tqdm(range(start, cfg.steps), desc="train", initial=start, total=cfg.steps,
                              disable=not progress):
            def work(slot: int) -> SampleResult:
                pair = dataset[sample_index(iteration, slot, cfg.batch_size, len(dataset), cfg.seed)]
                rng = np.random.default_rng([cfg.seed, iteration, slot])
                return sample_gradients(net, registry, pair, run, rng)

            slots = range(cfg.batch_size)
            batch = list(executor.map(work, slots)) if executor else [work(s) for s in slots]

            # ordered reduction keeps the sum independent of the worker count
            grads = {name: np.zeros(shape) for name, shape in ((p.name, p.shape) for p in registry.trainable())}
            for r in batch:
                for name, g in r.grads.items():
                    grads[name] += g
            for name in grads:
                grads[name] /= len(batch)

            lr = learning_rate(state.step, cfg)
            row = _metrics_row(iteration + 1, lr, batch, registry)
            optimizer_step(registry, grads, state)
            losses.append(sum(r.loss for r in batch) / len(batch))

            if out is not None:
                _append_metrics(out / METRICS_NAME, [row])
                if (iteration + 1) % cfg.checkpoint_every == 0:
                    _save(out, registry, state, iteration + 1, run)
    finally:
        if executor:
            executor.shutdown()

    done = max(cfg.steps, start)
    if out is not None and done > start and done % cfg.checkpoint_every != 0:
        _save(out, registry, state, done, run)
    return TrainResult(registry, state, done, losses, out)


@dataclass(frozen=True)
class PairErrors:
    rotation_deg: list[float]  # l = 1 first
    translation: list[float]


def pose_errors(net: PwcloNet, registry: ParameterRegistry, pairs: Sequence[FramePair],
                seed: int = 0) -> list[PairErrors]:
    """Angular (degrees) and translation (meters) error of every output level per pair."""
    results = []
    for i, pair in enumerate(pairs):
        rng = np.random.default_rng([seed, i])
        n = net.config.n_points
        out = net.infer(random_sample(pair.pc1, n, rng=rng), random_sample(pair.pc2, n, rng=rng), registry, rng)
        rot = [float(np.rad2deg(quat_angle_between(p.q, pair.gt.q))) for p in out.poses]
        trans = [float(np.linalg.norm(p.t - pair.gt.t)) for p in out.poses]
        results.append(PairErrors(rot, trans))
    return results
