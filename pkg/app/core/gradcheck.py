"""
Finite-difference verification of every differentiable operation.

Each registered check builds a small random instance, runs the operation on a
tape, projects the output onto a random direction and compares reverse-mode
gradients with central differences. Elements where the one-sided differences
disagree sit on a relu / max / abs kink within one step and are skipped.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from app.core import geom
from app.core import tensor as T
from app.core.costvol import (
    CostVolumeParams,
    attention_encode_u,
    attentive_cost_volume,
    edge_width,
    feature_encode_v,
)
from app.core.errors import ConfigError
from app.core.headmask import LevelState, PoseHead, WarpRefineParams, make_mask, pose_head, warp_refine
from app.core.layers import Mlp
from app.core.net import PwcloNet
from app.core.pcops import farthest_point_sample, set_conv, set_upconv
from app.core.tensor import ParameterRegistry, Tape, Tensor
from app.core.train import LossParams, add_loss_parameters, level_loss, total_loss
from app.models.config import preset, update
from app.models.pointcloud import PointCloud
from app.models.response import GradientCheckResult
from app.util.synth import synth_scene

logger = logging.getLogger(__name__)

STEP = 1e-5
ABSOLUTE_BELOW = 1e-8
DEFAULT_TOLERANCE = 1e-4
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
# one-sided slopes further apart than this (relative) mark a kink
KINK_JUMP = 1e-3

Build = Callable[[Mapping[str, Tensor]], Tensor]


@dataclass
class CheckCase:
    inputs: dict[str, np.ndarray]
    build: Build
    max_elements: int | None = None


@dataclass(frozen=True)
class GradientCheck:
    name: str
    factory: Callable[[np.random.Generator], CheckCase]
    tolerance: float = DEFAULT_TOLERANCE
    seeds: tuple[int, ...] = DEFAULT_SEEDS


GRADIENT_CHECKS: dict[str, GradientCheck] = {}


def gradient_check(name: str, tolerance: float = DEFAULT_TOLERANCE, seeds: tuple[int, ...] = DEFAULT_SEEDS):
    def register(factory):
        GRADIENT_CHECKS[name] = GradientCheck(name, factory, tolerance, seeds)
        return factory
    return register


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(np.abs(analytic) < ABSOLUTE_BELOW, diff, diff / np.where(scale > 0, scale, 1.0))


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = STEP) -> np.ndarray:
    """Central differences of scalar `f` at every element of `x`."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        grad[i] = (hi - lo) / (2 * eps)
    return grad


@dataclass
class CheckOutcome:
    max_rel_error: float
    checked: int = 0
    skipped: int = 0
    worst: str = ""


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.reduce_sum(T.reshape(out, (out.size,)) * weights, axis=0)


def evaluate_case(case: CheckCase, rng: np.random.Generator, eps: float = STEP) -> CheckOutcome:
    tape = Tape()
    leaves = {name: tape.watch(value, name) for name, value in case.inputs.items()}
    out = case.build(leaves)
    weights = rng.normal(size=out.size)
    grads = tape.backward(_project(out, weights))

    def value(inputs: dict[str, np.ndarray]) -> float:
        result = case.build({k: Tensor(v) for k, v in inputs.items()})
        return float(np.dot(result.data.reshape(-1), weights))

    elements = [(name, idx) for name, v in case.inputs.items() for idx in np.ndindex(np.shape(v))]
    if case.max_elements is not None and len(elements) > case.max_elements:
        picks = rng.choice(len(elements), size=case.max_elements, replace=False)
        elements = [elements[i] for i in sorted(picks)]

    current = {k: np.array(v, dtype=np.float64) for k, v in case.inputs.items()}
    base = value(current)
    outcome = CheckOutcome(0.0)
    for name, idx in elements:
        x = current[name]
        old = x[idx]
        x[idx] = old + eps
        hi = value(current)
        x[idx] = old - eps
        lo = value(current)
        x[idx] = old
        right, left = (hi - base) / eps, (base - lo) / eps
        central = (hi - lo) / (2 * eps)
        if abs(right - left) > KINK_JUMP * max(1.0, abs(central)):
            outcome.skipped += 1
            continue
        err = float(relative_error(grads[name][idx], central))
        outcome.checked += 1
        if err > outcome.max_rel_error:
            outcome.max_rel_error = err
            outcome.worst = f"{name}{list(idx)}"
    return outcome


def run_check(name: str, seed: int) -> GradientCheckResult:
    try:
        check = GRADIENT_CHECKS[name]
    except KeyError:
        raise ConfigError(f"unknown gradient check '{name}' (have {', '.join(sorted(GRADIENT_CHECKS))})") from None
    rng = np.random.default_rng([seed, 0xC0DE])
    outcome = evaluate_case(check.factory(rng), rng)
    if outcome.skipped:
        logger.debug("%s seed %d: skipped %d elements on kinks", name, seed, outcome.skipped)
    passed = outcome.checked > 0 and outcome.max_rel_error < check.tolerance
    if not passed:
        logger.warning("%s seed %d: max relative error %.3g at %s", name, seed, outcome.max_rel_error, outcome.worst)
    return GradientCheckResult(name=name, seed=seed, max_rel_error=outcome.max_rel_error,
                               tolerance=check.tolerance, passed=passed)


def run_suite(names: Iterable[str] | None = None, seeds: Iterable[int] | None = None) -> list[GradientCheckResult]:
    names = list(GRADIENT_CHECKS) if names is None else list(names)
    results = []
    for name in names:
        check = GRADIENT_CHECKS.get(name)
        if check is None:
            raise ConfigError(f"unknown gradient check '{name}' (have {', '.join(sorted(GRADIENT_CHECKS))})")
        for seed in (check.seeds if seeds is None else seeds):
            results.append(run_check(name, seed))
    return results


def worst_by_check(results: Iterable[GradientCheckResult]) -> dict[str, GradientCheckResult]:
    """Failing result per check if any, else the largest error."""
    worst: dict[str, GradientCheckResult] = {}
    for r in results:
        cur = worst.get(r.name)
        if cur is None or (not r.passed, r.max_rel_error) > (not cur.passed, cur.max_rel_error):
            worst[r.name] = r
    return worst


# Inputs bounded away from kinks and poles

def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, x + np.sign(x + 1e-12) * 2 * margin, x)


def _unit_gain(registry: ParameterRegistry, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """
    Redraw every weight at unit gain and lift biases off zero. The small
    pose-head init would otherwise leave gradients near the round-off floor.
    """
    for p in registry:
        if p.name.endswith(".w"):
            registry.set(p.name, rng.normal(0.0, 1.0 / np.sqrt(p.shape[0]), size=p.shape))
        elif p.name.endswith(".b"):
            registry.set(p.name, p.tensor.data + rng.uniform(0.05, 0.2, size=p.shape))
    return {name: arr.copy() for name, arr in registry.arrays().items()}


def _registry_inputs(*blocks, rng: np.random.Generator) -> dict[str, np.ndarray]:
    registry = ParameterRegistry()
    for block in blocks:
        block.init(registry, rng)
    return _unit_gain(registry, rng)


# Tensor primitives

@gradient_check("add")
def _add(rng):
    return CheckCase({"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,))}, lambda v: v["a"] + v["b"])


@gradient_check("sub")
def _sub(rng):
    return CheckCase({"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 3))}, lambda v: v["a"] - v["b"])


@gradient_check("mul")
def _mul(rng):
    return CheckCase({"a": rng.normal(size=(3, 1)), "b": rng.normal(size=(1, 4))}, lambda v: v["a"] * v["b"])


@gradient_check("div")
def _div(rng):
    b = 1.0 + np.abs(rng.normal(size=(3, 4)))
    return CheckCase({"a": rng.normal(size=(3, 4)), "b": b}, lambda v: v["a"] / v["b"])


@gradient_check("negate")
def _negate(rng):
    return CheckCase({"a": rng.normal(size=(5,))}, lambda v: -v["a"])


@gradient_check("relu")
def _relu(rng):
    return CheckCase({"a": _away_from_zero(rng, (4, 5))}, lambda v: T.relu(v["a"]))


@gradient_check("exp")
def _exp(rng):
    return CheckCase({"a": 0.5 * rng.normal(size=(3, 3))}, lambda v: T.exp(v["a"]))


@gradient_check("abs")
def _abs(rng):
    return CheckCase({"a": _away_from_zero(rng, (6,))}, lambda v: T.absolute(v["a"]))


@gradient_check("scale")
def _scale(rng):
    return CheckCase({"a": rng.normal(size=(4,))}, lambda v: T.scale(v["a"], 2.5))


@gradient_check("matmul")
def _matmul(rng):
    return CheckCase({"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))}, lambda v: v["a"] @ v["b"])


@gradient_check("matmul_batched")
def _matmul_batched(rng):
    return CheckCase({"a": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=(4, 5))}, lambda v: v["a"] @ v["b"])


@gradient_check("transpose")
def _transpose(rng):
    return CheckCase({"a": rng.normal(size=(2, 3, 4))}, lambda v: T.transpose(v["a"]))


@gradient_check("reshape")
def _reshape(rng):
    return CheckCase({"a": rng.normal(size=(3, 4))}, lambda v: T.reshape(v["a"], (2, 6)))


@gradient_check("broadcast_to")
def _broadcast_to(rng):
    return CheckCase({"a": rng.normal(size=(3, 1))}, lambda v: T.broadcast_to(v["a"], (3, 4)))


@gradient_check("softmax")
def _softmax(rng):
    return CheckCase({"a": rng.normal(size=(7,))}, lambda v: T.softmax(v["a"], axis=0))


@gradient_check("sum")
def _sum(rng):
    return CheckCase({"a": rng.normal(size=(3, 4))}, lambda v: T.reduce_sum(v["a"], axis=0))


@gradient_check("max")
def _max(rng):
    # spread values so the argmax is well separated
    a = rng.permutation(15).reshape(3, 5) * 0.1 + rng.uniform(0, 0.01, size=(3, 5))
    return CheckCase({"a": a}, lambda v: T.reduce_max(v["a"], axis=1))


@gradient_check("norm")
def _norm(rng):
    return CheckCase({"a": rng.normal(size=(4, 3))}, lambda v: T.norm(v["a"], axis=1))


@gradient_check("concat")
def _concat(rng):
    return CheckCase({"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 5))},
                     lambda v: T.concat([v["a"], v["b"]], axis=1))


@gradient_check("gather_rows")
def _gather_rows(rng):
    return CheckCase({"a": rng.normal(size=(5, 3))}, lambda v: T.gather_rows(v["a"], [2, 0, 2, 4]))


@gradient_check("index")
def _index(rng):
    return CheckCase({"a": rng.normal(size=(4, 5))}, lambda v: v["a"][1:3, ::2])


@gradient_check("take")
def _take(rng):
    return CheckCase({"a": rng.normal(size=(3, 4))}, lambda v: T.take(v["a"], [0, 2, 2], axis=-1))


# Geometry

@gradient_check("hamilton")
def _hamilton(rng):
    return CheckCase({"a": rng.normal(size=4), "b": rng.normal(size=4)}, lambda v: geom.hamilton(v["a"], v["b"]))


@gradient_check("warp_points")
def _warp_points(rng):
    inputs = {"q": rng.normal(size=4), "t": rng.normal(size=3), "p": rng.normal(size=(6, 3))}
    return CheckCase(inputs, lambda v: geom.warp_points(v["q"], v["t"], v["p"]))


@gradient_check("compose")
def _compose(rng):
    inputs = {"dq": rng.normal(size=4), "dt": rng.normal(size=3), "q": rng.normal(size=4), "t": rng.normal(size=3)}

    def build(v):
        q, t = geom.compose_tensors(v["dq"], v["dt"], geom.normalize_quat(v["q"]), v["t"])
        return T.concat([q, t], axis=0)

    return CheckCase(inputs, build)


# Point operators

def _cloud(rng: np.random.Generator, n: int, spread: float = 1.0) -> np.ndarray:
    return rng.uniform(-spread, spread, size=(n, 3))


@gradient_check("set_conv")
def _set_conv(rng):
    xyz = _cloud(rng, 8)
    mlp = Mlp("sc", (3 + 2 * 2, 5, 6))
    inputs = _registry_inputs(mlp, rng=rng)
    inputs["features"] = rng.normal(size=(8, 2))
    centers = farthest_point_sample(PointCloud.from_array(xyz), 4)

    def build(v):
        pc = PointCloud(Tensor(xyz), v["features"])
        return set_conv(pc, 4, 3, mlp, v, centers=centers).features

    return CheckCase(inputs, build)


@gradient_check("set_upconv")
def _set_upconv(rng):
    dense_xyz, sparse_xyz = _cloud(rng, 16), _cloud(rng, 8)
    mlp1, mlp2 = Mlp("up1", (3 + 3, 4, 4)), Mlp("up2", (4 + 2, 5))
    inputs = _registry_inputs(mlp1, mlp2, rng=rng)
    inputs["dense_f"] = rng.normal(size=(16, 2))
    inputs["sparse_f"] = rng.normal(size=(8, 3))

    def build(v):
        dense = PointCloud(Tensor(dense_xyz), v["dense_f"])
        sparse = PointCloud(Tensor(sparse_xyz), v["sparse_f"])
        return set_upconv(dense, sparse, 3, mlp1, mlp2, v)

    return CheckCase(inputs, build)


def _edge_case(rng, block_name: str, encode, activate_last: bool):
    m, k, c1, c2 = 5, 3, 2, 3
    block = Mlp(block_name, (edge_width(c1, c2), 6, 4), activate_last=activate_last)
    inputs = _registry_inputs(block, rng=rng)
    inputs.update({"center": rng.normal(size=(m, 3)), "neighbor": rng.normal(size=(m, k, 3)),
                   "f_center": rng.normal(size=(m, c1)), "f_neighbor": rng.normal(size=(m, k, c2))})

    def build(v):
        return encode(v["center"], v["neighbor"], v["f_center"], v["f_neighbor"], block, v)

    return CheckCase(inputs, build)


@gradient_check("attention_u")
def _attention_u(rng):
    return _edge_case(rng, "u", attention_encode_u, activate_last=False)


@gradient_check("feature_v")
def _feature_v(rng):
    return _edge_case(rng, "v", feature_encode_v, activate_last=True)


@gradient_check("cost_volume")
def _cost_volume(rng):
    xyz1, xyz2 = _cloud(rng, 8), _cloud(rng, 8)
    cv = CostVolumeParams.build("cv", 3, 3, feature_width=2, hidden=4, out=5)
    inputs = _registry_inputs(*cv.blocks(), rng=rng)
    inputs["f1"] = rng.normal(size=(8, 2))
    inputs["f2"] = rng.normal(size=(8, 2))

    def build(v):
        return attentive_cost_volume(PointCloud(Tensor(xyz1), v["f1"]), PointCloud(Tensor(xyz2), v["f2"]), cv, v)

    return CheckCase(inputs, build)


# Mask, head, refinement

@gradient_check("make_mask")
def _make_mask(rng):
    mlp = Mlp("mask", (4 + 4 + 3, 5, 4), activate_last=False)
    inputs = _registry_inputs(mlp, rng=rng)
    inputs.update({"e": rng.normal(size=(6, 4)), "f1": rng.normal(size=(6, 3)), "prior": rng.normal(size=(6, 4))})
    return CheckCase(inputs, lambda v: make_mask(v["e"], v["f1"], v["prior"], mlp, v))


@gradient_check("pose_head")
def _pose_head(rng):
    head = PoseHead.build("head", 4, (5, 5))
    inputs = _registry_inputs(head, rng=rng)
    inputs.update({"e": rng.normal(size=(6, 4)), "m": rng.uniform(0.1, 1.0, size=(6, 4))})

    def build(v):
        q, t = pose_head(v["e"], v["m"], head, v)
        return T.concat([q, t], axis=0)

    return CheckCase(inputs, build)


def toy_refine_params(c: int = 3, emb: int = 4, hidden: int = 5) -> WarpRefineParams:
    return WarpRefineParams(
        upconv_e1=Mlp("wr.up_e1", (3 + emb, emb, emb)),
        upconv_e2=Mlp("wr.up_e2", (emb + c, emb)),
        k_up=2,
        cost=CostVolumeParams.build("wr.cost", 3, 3, c, hidden, emb),
        embed_mlp=Mlp("wr.embed", (2 * emb + c, emb, emb)),
        head=PoseHead.build("wr.head", emb, (hidden, hidden)),
        mask_mlp=Mlp("wr.mask", (2 * emb + c, hidden, emb), activate_last=False),
        upconv_m1=Mlp("wr.up_m1", (3 + emb, emb, emb)),
        upconv_m2=Mlp("wr.up_m2", (emb + c, emb)),
    )


@gradient_check("warp_refine", tolerance=1e-3)
def _warp_refine(rng):
    c, emb = 3, 4
    wr = toy_refine_params(c, emb)
    inputs = _registry_inputs(wr, rng=rng)
    coarse_xyz, fine1, fine2 = _cloud(rng, 8), _cloud(rng, 16), _cloud(rng, 16)
    q0 = np.array([1.0, 0.0, 0.0, 0.0]) + 0.1 * rng.normal(size=4)
    inputs.update({
        "coarse_e": rng.normal(size=(8, emb)),
        "coarse_m": rng.uniform(0.05, 0.2, size=(8, emb)),
        "q": q0 / np.linalg.norm(q0),
        "t": 0.1 * rng.normal(size=3),
        "f1": rng.normal(size=(16, c)),
        "f2": rng.normal(size=(16, c)),
    })

    def build(v):
        coarse_pc = PointCloud(Tensor(coarse_xyz))
        coarse = LevelState(coarse_pc, coarse_pc, v["coarse_e"], v["coarse_m"], v["q"], v["t"])
        state = warp_refine(coarse, PointCloud(Tensor(fine1), v["f1"]), PointCloud(Tensor(fine2), v["f2"]), wr, v)
        return T.concat([state.q, state.t], axis=0)

    return CheckCase(inputs, build)


@gradient_check("level_loss")
def _level_loss(rng):
    gt = geom.random_pose(rng)
    inputs = {"q": rng.normal(size=4), "t": rng.normal(size=3), "s_x": np.array(rng.normal()),
              "s_q": np.array(rng.normal())}
    return CheckCase(inputs, lambda v: level_loss(v["q"], v["t"], gt, v["s_x"], v["s_q"]))


@gradient_check("network", tolerance=1e-3, seeds=(0,))
def _network(rng):
    """Total loss of a desk-scale network against three sampled parameter entries."""
    run = update(preset("desk"), {"net": {"fps_random_start": False}})
    net = PwcloNet(run.net)
    registry = net.init_parameters(rng)
    add_loss_parameters(registry, run.train)
    pair = synth_scene(run.net.n_points, 5.0, 0.3, 0.0, seed=int(rng.integers(1 << 31)))

    def build(v):
        out = net.forward(pair.pc1, pair.pc2, v)
        return total_loss(out, pair.gt, LossParams.from_params(v, run.train)).total

    return CheckCase(_unit_gain(registry, rng), build, max_elements=3)
