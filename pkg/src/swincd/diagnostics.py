"""Gradient-oracle suite: analytic gradients of every component against central differences."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Callable, Iterable, Optional

import numpy as np

from .autograd import ops
from .autograd.gradcheck import grad_check
from .autograd.tensor import Tensor, default_dtype
from .losses import compute_weights, hybrid_loss, siou_loss, ssim_loss, wbce
from .nn.layers import ConvBNReLU
from .nn.module import Module
from .nn.network import ChangeDetector, ProgressiveAttention, parameter_groups
from .nn.swin import PatchMerge, PatchUnmerge, SwinBlockPair, SwinStageConfig, WindowAttention, WindowLayout
from .settings import LossConfig, ModelConfig

logger = logging.getLogger(__name__)

SECTIONS = ("primitives", "swin", "pam", "losses", "network")

# A case builds (scalar function, parameters, optional exclusion masks) from a generator.
Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor], Optional[dict[str, np.ndarray]]]]


@dataclass(slots=True)
class ComponentResult:
    component: str
    max_rel_error: float
    tol: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.component:<28} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e}"


def _leaf(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


def _away_from_zero(rng: np.random.Generator, shape: tuple[int, ...], margin: float = 0.05) -> np.ndarray:
    values = rng.normal(size=shape)
    return np.where(np.abs(values) < margin, np.sign(values + 1e-12) * (margin + np.abs(values)), values)


def _unary(op: Callable[[Tensor], Tensor], sample: Callable[[np.random.Generator, tuple[int, ...]], np.ndarray],
           shape: tuple[int, ...] = (3, 4)) -> Case:
    def build(rng: np.random.Generator):
        x = _leaf(sample(rng, shape))
        weights = rng.normal(size=shape)
        return (lambda: ops.sum(op(x) * weights)), {"x": x}, None

    return build


def _binary(op: Callable[[Tensor, Tensor], Tensor], b_shape: tuple[int, ...] = (3, 4)) -> Case:
    def build(rng: np.random.Generator):
        a = _leaf(rng.normal(size=(3, 4)))
        b = _leaf(rng.uniform(0.5, 2.0, size=b_shape) * rng.choice([-1.0, 1.0], size=b_shape))
        weights = rng.normal(size=(3, 4))
        return (lambda: ops.sum(op(a, b) * weights)), {"a": a, "b": b}, None

    return build


def _normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.normal(size=shape)


def _lift_rectifiers(module: Module, offset: float = 6.0) -> None:
    """Raise every BN offset feeding a rectifier so no rectifier input sits near its kink."""

    for _, child in module.named_modules():
        if isinstance(child, ConvBNReLU):
            child.bn.beta.assign_(np.full(child.bn.beta.shape, offset))


def _primitive_cases() -> dict[str, Case]:
    def matmul(rng):
        a, b = _leaf(rng.normal(size=(2, 3, 4))), _leaf(rng.normal(size=(4, 5)))
        r = rng.normal(size=(2, 3, 5))
        return (lambda: ops.sum(ops.matmul(a, b) * r)), {"a": a, "b": b}, None

    def layer_norm(rng):
        x, g, b = _leaf(rng.normal(size=(3, 4))), _leaf(rng.normal(size=4)), _leaf(rng.normal(size=4))
        r = rng.normal(size=(3, 4))
        return (lambda: ops.sum(ops.layer_norm(x, g, b) * r)), {"x": x, "gamma": g, "beta": b}, None

    def batch_norm(rng):
        x, g, b = _leaf(rng.normal(size=(4, 3, 2, 2))), _leaf(rng.normal(size=3)), _leaf(rng.normal(size=3))
        r = rng.normal(size=(4, 3, 2, 2))
        return (lambda: ops.sum(ops.batch_norm(x, g, b, training=True) * r)), {"x": x, "gamma": g, "beta": b}, None

    def conv2d(rng):
        x, w, b = _leaf(rng.normal(size=(2, 2, 5, 5))), _leaf(rng.normal(size=(3, 2, 3, 3))), _leaf(rng.normal(size=3))
        r = rng.normal(size=(2, 3, 3, 3))
        return (lambda: ops.sum(ops.conv2d(x, w, b, stride=2, padding=1) * r)), {"x": x, "w": w, "b": b}, None

    def conv2d_transpose(rng):
        x, w, b = _leaf(rng.normal(size=(2, 2, 3, 3))), _leaf(rng.normal(size=(2, 3, 4, 4))), _leaf(rng.normal(size=3))
        r = rng.normal(size=(2, 3, 6, 6))
        return (lambda: ops.sum(ops.conv2d_transpose(x, w, b, stride=2) * r)), {"x": x, "w": w, "b": b}, None

    def concat(rng):
        a, b = _leaf(rng.normal(size=(1, 2, 3, 3))), _leaf(rng.normal(size=(1, 3, 3, 3)))
        r = rng.normal(size=(1, 5, 3, 3))
        return (lambda: ops.sum(ops.concat_channel([a, b]) * r)), {"a": a, "b": b}, None

    def gather(rng):
        table = _leaf(rng.normal(size=(5, 2)))
        index = rng.integers(0, 5, size=(3, 3))
        r = rng.normal(size=(3, 3, 2))
        return (lambda: ops.sum(ops.gather(table, index) * r)), {"table": table}, None

    def relu(rng):
        x = _leaf(_away_from_zero(rng, (3, 4)))
        r = rng.normal(size=(3, 4))
        return (lambda: ops.sum(ops.relu(x) * r)), {"x": x}, {"x": np.abs(x.data) < 1e-2}

    return {
        "add": _binary(ops.add, (1, 4)),
        "sub": _binary(ops.sub, (3, 1)),
        "mul": _binary(ops.mul),
        "div": _binary(ops.div),
        "relu": relu,
        "sigmoid": _unary(ops.sigmoid, _normal),
        "log": _unary(ops.log, lambda rng, shape: rng.uniform(0.5, 2.0, size=shape)),
        "gelu": _unary(ops.gelu, _normal),
        "matmul": matmul,
        "softmax": _unary(lambda x: ops.softmax(x, axis=-1), _normal),
        "layer_norm": layer_norm,
        "batch_norm": batch_norm,
        "conv2d": conv2d,
        "conv2d_transpose": conv2d_transpose,
        "avg_pool_contrast": _unary(lambda x: ops.avg_pool_contrast(x, 3), _normal, (1, 2, 4, 4)),
        "box_mean": _unary(lambda x: ops.box_mean(x, 3), _normal, (1, 1, 5, 5)),
        "sum_channel": _unary(ops.sum_channel, _normal, (2, 3, 2, 2)),
        "global_avg_pool": _unary(ops.global_avg_pool, _normal, (2, 3, 2, 2)),
        "reshape_permute": _unary(lambda x: ops.permute(ops.reshape(x, (2, 6)), (1, 0)), _normal),
        "roll2d": _unary(lambda x: ops.roll2d(x, (1, 2)), _normal),
        "concat_channel": concat,
        "slice": _unary(lambda x: ops.slice_axis(x, 1, 3, axis=1), _normal),
        "gather": gather,
    }


def _swin_cases() -> dict[str, Case]:
    cfg = SwinStageConfig(dim=8, heads=2, window=4, depth=2)

    def block_pair(rng):
        block = SwinBlockPair(cfg, (8, 8), rng)
        x = _leaf(rng.normal(size=(1, 8, 8, 8)))
        r = rng.normal(size=(1, 8, 8, 8))
        params = {"input": x, "qkv": block.shifted.attn.qkv.weight, "bias_table": block.shifted.attn.bias_table}
        return (lambda: ops.sum(block(x) * r)), params, None

    def attention(rng):
        layout = WindowLayout(8, 8, 4, 2)
        attn = WindowAttention(8, 2, 4, rng)
        x = _leaf(rng.normal(size=(4, 16, 8)))
        r = rng.normal(size=(4, 16, 8))
        return (lambda: ops.sum(attn(x, layout.mask) * r)), {"input": x, "proj": attn.proj.weight}, None

    def merge(rng):
        layer = PatchMerge(4, rng)
        x = _leaf(rng.normal(size=(1, 4, 4, 4)))
        r = rng.normal(size=(1, 2, 2, 8))
        return (lambda: ops.sum(layer(x) * r)), {"input": x, "reduction": layer.reduction.weight}, None

    def unmerge(rng):
        layer = PatchUnmerge(4, rng)
        x = _leaf(rng.normal(size=(1, 2, 2, 4)))
        r = rng.normal(size=(1, 4, 4, 4))
        return (lambda: ops.sum(layer(x) * r)), {"input": x, "expand": layer.expand.weight}, None

    return {"window_attention": attention, "swin_block_pair": block_pair, "patch_merge": merge, "patch_unmerge": unmerge}


def _pam_case(rng: np.random.Generator):
    config = ModelConfig.toy(base_dim=4)
    module = ProgressiveAttention(6, config, rng)
    _lift_rectifiers(module)
    s = _leaf(rng.normal(size=(2, 3, 4, 4)))
    d = _leaf(rng.normal(size=(2, 3, 4, 4)))
    r = rng.normal(size=(2, 4, 4, 4))
    params = {"summation": s, "difference": d, "channel_gate": module.channel_gate.weight,
              "spatial_gate": module.spatial_gate.weight}
    return (lambda: ops.sum(module(s, d) * r)), params, None


def _loss_cases(loss_cfg: LossConfig) -> dict[str, Case]:
    def _inputs(rng):
        logits = _leaf(rng.normal(size=(2, 1, 16, 16)))
        gt = (rng.uniform(size=(2, 16, 16)) > 0.6).astype(np.float64)
        return logits, gt

    def wbce_case(rng):
        logits, gt = _inputs(rng)
        weights = compute_weights(gt, loss_cfg.boundary_weight).values
        return (lambda: wbce(logits, gt, weights, prob_clamp=loss_cfg.prob_clamp)), {"logits": logits}, None

    def ssim_case(rng):
        logits, gt = _inputs(rng)
        return (lambda: ssim_loss(ops.sigmoid(logits), gt, loss_cfg)), {"logits": logits}, None

    def siou_case(rng):
        logits, gt = _inputs(rng)
        return (lambda: siou_loss(ops.sigmoid(logits), gt, eps=loss_cfg.siou_eps)), {"logits": logits}, None

    return {"loss.wbce": wbce_case, "loss.ssim": ssim_case, "loss.siou": siou_case}


def _run_cases(cases: dict[str, Case], rng: np.random.Generator, tol: float, instances: int) -> list[ComponentResult]:
    results = []
    for name, build in cases.items():
        worst = 0.0
        for _ in range(instances):
            fn, params, exclude = build(rng)
            report = grad_check(fn, params, tol=tol, exclude=exclude, max_entries=24, rng=rng)
            worst = max(worst, report.max_rel_error)
        results.append(ComponentResult(name, worst, tol, instances))
    return results


def network_spot_check(
    config: ModelConfig,
    *,
    tol: float = 1e-3,
    per_group: int = 5,
    seed: int = 0,
    loss_cfg: Optional[LossConfig] = None,
) -> list[ComponentResult]:
    """Check ``per_group`` random scalar parameters of each group through the full hybrid loss."""

    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        model = ChangeDetector(config, np.random.default_rng(config.seed))
        _lift_rectifiers(model)
        h, w = config.input_size
        t1 = Tensor(rng.uniform(size=(2, config.in_channels, h, w)))
        t2 = Tensor(rng.uniform(size=(2, config.in_channels, h, w)))
        gt = (rng.uniform(size=(2, h, w)) > 0.7).astype(np.float64)

        def fn() -> Tensor:
            return hybrid_loss(model(t1, t2), gt, loss_cfg)[0]

        results = []
        for group, members in parameter_groups(model).items():
            picks = rng.choice(len(members), size=min(per_group, len(members)), replace=False)
            params = {members[i][0]: members[i][1] for i in sorted(picks)}
            report = grad_check(fn, params, tol=tol, max_entries=1, rng=rng)
            model.zero_grad()
            results.append(ComponentResult(f"network.{group}", report.max_rel_error, tol, len(params)))
    return results


def run_gradient_suite(
    config: Optional[ModelConfig] = None,
    *,
    tol: float = 1e-4,
    network_tol: Optional[float] = None,
    instances: int = 5,
    seed: int = 0,
    sections: Iterable[str] = SECTIONS,
    loss_cfg: Optional[LossConfig] = None,
) -> list[ComponentResult]:
    """Run the selected sections in 64-bit mode and return one result per component.

    End-to-end checks default to ten times ``tol``; they chain every layer of the network.
    """

    config = config or ModelConfig.toy()
    loss_cfg = loss_cfg or LossConfig()
    network_tol = network_tol if network_tol is not None else 10 * tol
    sections = tuple(sections)
    rng = np.random.default_rng(seed)
    results: list[ComponentResult] = []
    with default_dtype(np.float64):
        if "primitives" in sections:
            results += _run_cases(_primitive_cases(), rng, tol, instances)
        if "swin" in sections:
            results += _run_cases(_swin_cases(), rng, tol, instances)
        if "pam" in sections:
            results += _run_cases({"pam": _pam_case}, rng, tol, instances)
        if "losses" in sections:
            results += _run_cases(_loss_cases(loss_cfg), rng, tol, instances)
        if "network" in sections:
            results += network_spot_check(config, tol=network_tol, seed=seed, loss_cfg=loss_cfg)
    for result in results:
        logger.info(result.line())
    return results


__all__ = ["ComponentResult", "SECTIONS", "network_spot_check", "run_gradient_suite"]
