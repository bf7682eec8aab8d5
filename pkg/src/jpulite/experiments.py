"""Desk-scale studies: a runnable mini backbone, a teacher/student upsampling
comparison, and a forward-pass timing harness.

The mini backbone mirrors a five-level feature hierarchy: a stride-2 stem plus
four stages built from the decomp stage composers. One parameter set serves
both wirings; only the stride/dilation routing differs, which is what makes
the teacher/student study and the end-to-end phase-consistency checks honest.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .conv import ConvSpec, ConvWeights, conv2d, conv2d_backward, init_weights, relu
from .decomp import StageWeights, dilated_stage, stride_stage
from .jpu import JpuConfig, JpuParams, jpu_backward, jpu_forward, jpu_init
from .tensor import Rng, ShapeError, Tensor, bilinear_resize, random_uniform

DILATED = "dilated_os8"
STRIDE = "stride_os32"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass(frozen=True)
class MiniBackboneConfig:
    in_channels: int = 3
    stem_channels: int = 8
    # (body depth, channels) for the four stages after the stem (levels 2..5)
    stages: tuple[tuple[int, int], ...] = ((1, 8), (1, 12), (1, 16), (1, 16))

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ShapeError("need exactly four stages after the stem (five levels total)")
        if any(ch > 64 for _, ch in self.stages) or self.stem_channels > 64:
            raise ShapeError("toy widths only (<= 64 channels)")

    @property
    def level_channels(self) -> tuple[int, int, int]:
        """Channels of the three emitted feature maps (levels 3, 4, 5)."""
        return (self.stages[1][1], self.stages[2][1], self.stages[3][1])


@dataclass(frozen=True, eq=False)
class MiniBackboneParams:
    stem: ConvWeights
    stages: tuple[StageWeights, ...]


def init_mini_backbone(config: MiniBackboneConfig, rng: Rng, dtype=np.float64) -> MiniBackboneParams:
    stem_spec = ConvSpec(config.in_channels, config.stem_channels, kernel=(3, 3), stride=(2, 2), padding=(1, 1))
    stem = init_weights(stem_spec, rng, dtype=dtype)
    stages = []
    cin = config.stem_channels
    for depth, ch in config.stages:
        head = init_weights(ConvSpec(cin, ch, kernel=(3, 3), padding=(1, 1)), rng, dtype=dtype)
        body = [init_weights(ConvSpec(ch, ch, kernel=(3, 3), padding=(1, 1)), rng, dtype=dtype) for _ in range(depth)]
        stages.append(StageWeights(head, body))
        cin = ch
    return MiniBackboneParams(stem, tuple(stages))


def mini_backbone_forward(
    x: Tensor,
    params: MiniBackboneParams,
    config: MiniBackboneConfig,
    mode: str,
    timings: dict | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Emit the (level-3, level-4, level-5) features.

    Stride mode: output strides 8/16/32. Dilated mode: all three at output
    stride 8, with dilation 2 in stage 4 and 4 in stage 5. The identical
    parameter buffers serve both modes.
    """
    if mode not in (DILATED, STRIDE):
        raise KeyError(f"unknown mode {mode!r}")
    n, c, h, w = x.shape
    if h % 32 or w % 32:
        raise ShapeError(f"input dims must be divisible by 32, got {(h, w)}")

    def timed(name, fn):
        t0 = time.perf_counter()
        out = fn()
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + (time.perf_counter() - t0)
        return out

    stem_spec = ConvSpec(config.in_channels, config.stem_channels, kernel=(3, 3), stride=(2, 2), padding=(1, 1))
    a = timed("stem", lambda: relu(conv2d(x, params.stem, stem_spec)))
    a = timed("stage2", lambda: relu(stride_stage(a, params.stages[0]).y))
    c3 = timed("stage3", lambda: relu(stride_stage(a, params.stages[1]).y))
    if mode == STRIDE:
        c4 = timed("stage4", lambda: relu(stride_stage(c3, params.stages[2]).y))
        c5 = timed("stage5", lambda: relu(stride_stage(c4, params.stages[3]).y))
    else:
        c4 = timed("stage4", lambda: relu(dilated_stage(c3, params.stages[2], body_dilation=2).y))
        c5 = timed("stage5", lambda: relu(dilated_stage(c4, params.stages[3], head_dilation=2, body_dilation=4).y))
    return c3, c4, c5


# ---------------------------------------------------------------------------
# synthetic teacher/student study


@dataclass(frozen=True, eq=False)
class TeacherSample:
    image: Tensor
    c3: Tensor  # stride-mode features (student inputs)
    c4: Tensor
    c5: Tensor
    target: Tensor  # dilated-mode level-5 feature at output stride 8


@dataclass(frozen=True, eq=False)
class TeacherDataset:
    config: MiniBackboneConfig
    params: MiniBackboneParams
    samples: tuple[TeacherSample, ...]


def synthetic_teacher(
    seed: int, n_samples: int, config: MiniBackboneConfig, image_hw=(64, 64), dtype=np.float64
) -> TeacherDataset:
    rng = Rng(seed)
    params = init_mini_backbone(config, rng, dtype=dtype)
    samples = []
    for _ in range(n_samples):
        img = random_uniform((1, config.in_channels, *image_hw), rng, -1.0, 1.0, dtype=dtype)
        _, _, target = mini_backbone_forward(img, params, config, DILATED)
        c3, c4, c5 = mini_backbone_forward(img, params, config, STRIDE)
        samples.append(TeacherSample(img, c3, c4, c5, target))
    return TeacherDataset(config, params, tuple(samples))


@dataclass
class TrainRun:
    method: str
    steps: int
    lr: float
    seed: int
    loss_curve: list[float]
    final_mse: float
    param_count: int


def _sgd(w: ConvWeights, gw: Tensor, gb, lr: float) -> ConvWeights:
    bias = w.bias if gb is None else w.bias - lr * gb
    return ConvWeights(Tensor(w.weight.data - lr * gw.data), bias)


def _mse(pred: Tensor, target: Tensor) -> float:
    return float(np.mean((pred.data - target.data) ** 2))


def train_approximator(
    method: str,
    dataset: TeacherDataset,
    steps: int,
    lr: float,
    seed: int,
    jpu_width: int = 8,
    holdout: int | None = None,
) -> TrainRun:
    """Fit a student that reconstructs the dilated-path feature from the
    stride-path pyramid, with either plain bilinear upsampling or the pyramid
    upsampling module in front of a shared 3x3 head."""
    if method not in ("bilinear", "jpu"):
        raise KeyError(f"unknown method {method!r}")
    samples = dataset.samples
    if holdout is None:
        holdout = max(1, len(samples) // 4)
    train, held = samples[: len(samples) - holdout], samples[len(samples) - holdout :]
    target_ch = train[0].target.shape[1]
    out_h, out_w = train[0].target.shape[2], train[0].target.shape[3]
    rng = Rng(seed)

    jpu_cfg = None
    jpu_params: JpuParams | None = None
    if method == "jpu":
        jpu_cfg = JpuConfig(dataset.config.level_channels, width=jpu_width)
        jpu_params = jpu_init(jpu_cfg, rng)
        head_in = jpu_cfg.out_channels
    else:
        head_in = dataset.config.level_channels[2]
    head_spec = ConvSpec(head_in, target_ch, kernel=(3, 3), padding=(1, 1))
    head = init_weights(head_spec, rng)

    def forward(sample):
        if method == "bilinear":
            feat = bilinear_resize(sample.c5, out_h, out_w)
            cache = None
        else:
            feat, cache = jpu_forward(sample.c3, sample.c4, sample.c5, jpu_params, jpu_cfg)
        return conv2d(feat, head, head_spec), feat, cache

    loss_curve: list[float] = []
    for step in range(steps):
        g_head_w = np.zeros_like(head.weight.data)
        g_head_b = np.zeros_like(head.bias)
        jpu_grad_acc: JpuParams | None = None
        total_loss = 0.0
        for sample in train:
            pred, feat, cache = forward(sample)
            diff = pred.data - sample.target.data
            total_loss += float(np.mean(diff**2))
            g_pred = Tensor(2.0 * diff / diff.size)
            g_feat, g_w, g_b = conv2d_backward(feat, head, head_spec, g_pred)
            g_head_w += g_w.data
            g_head_b += g_b
            if method == "jpu":
                pgrads, _ = jpu_backward(cache, g_feat)
                jpu_grad_acc = pgrads if jpu_grad_acc is None else _add_jpu_grads(jpu_grad_acc, pgrads)
        loss = total_loss / len(train)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        loss_curve.append(loss)
        scale = lr / len(train)
        head = ConvWeights(Tensor(head.weight.data - scale * g_head_w), head.bias - scale * g_head_b)
        if method == "jpu" and steps:
            jpu_params = _apply_jpu_sgd(jpu_params, jpu_grad_acc, scale)

    final = float(np.mean([_mse(forward(s)[0], s.target) for s in held]))
    n_params = head.weight.data.size + head.bias.size
    if method == "jpu":
        n_params += sum(np.asarray(a).size for _, a in jpu_params.named_tensors())
    return TrainRun(method, steps, lr, seed, loss_curve, final, int(n_params))


def _add_jpu_grads(a: JpuParams, b: JpuParams) -> JpuParams:
    def add(x: ConvWeights, y: ConvWeights) -> ConvWeights:
        return ConvWeights(Tensor(x.weight.data + y.weight.data), x.bias + y.bias)

    return JpuParams(
        [add(x, y) for x, y in zip(a.levels, b.levels)],
        [(add(xd, yd), add(xp, yp)) for (xd, xp), (yd, yp) in zip(a.branches, b.branches)],
        add(a.fusion, b.fusion),
    )


def _apply_jpu_sgd(p: JpuParams, g: JpuParams, lr: float) -> JpuParams:
    def step(w: ConvWeights, gw: ConvWeights) -> ConvWeights:
        return ConvWeights(Tensor(w.weight.data - lr * gw.weight.data), w.bias - lr * gw.bias)

    return JpuParams(
        [step(w, gw) for w, gw in zip(p.levels, g.levels)],
        [(step(wd, gd), step(wp, gp)) for (wd, wp), (gd, gp) in zip(p.branches, g.branches)],
        step(p.fusion, g.fusion),
    )


# ---------------------------------------------------------------------------
# timing harness


def bench_forward(
    config: MiniBackboneConfig,
    mode: str,
    input_hw=(256, 256),
    repeats: int = 100,
    warmup: int = 3,
    seed: int = 0,
    jpu_width: int = 8,
) -> dict:
    """Wall-clock statistics of a full forward pass; 'stride_os32_plus_jpu'
    appends the pyramid upsampling module to the stride backbone."""
    if repeats < 10:
        raise ValueError("need at least 10 repeats")
    with_jpu = mode == "stride_os32_plus_jpu"
    bb_mode = STRIDE if with_jpu else DILATED
    if not with_jpu and mode != DILATED:
        raise KeyError(f"unknown bench mode {mode!r}")
    rng = Rng(seed)
    params = init_mini_backbone(config, rng)
    jpu_cfg = JpuConfig(config.level_channels, width=jpu_width)
    jpu_params = jpu_init(jpu_cfg, rng)
    img = random_uniform((1, config.in_channels, *input_hw), rng, -1.0, 1.0)

    def run(timings=None):
        c3, c4, c5 = mini_backbone_forward(img, params, config, bb_mode, timings=timings)
        if with_jpu:
            t0 = time.perf_counter()
            jpu_forward(c3, c4, c5, jpu_params, jpu_cfg)
            if timings is not None:
                timings["jpu"] = timings.get("jpu", 0.0) + (time.perf_counter() - t0)

    for _ in range(warmup):
        run()
    times_ms = []
    stage_acc: dict[str, float] = {}
    for _ in range(repeats):
        t0 = time.perf_counter()
        run(stage_acc)
        times_ms.append((time.perf_counter() - t0) * 1e3)
    arr = np.array(times_ms)
    return {
        "mode": mode,
        "input_hw": list(input_hw),
        "repeats": repeats,
        "warmup": warmup,
        "mean_ms": float(arr.mean()),
        "std_ms": float(arr.std()),
        "min_ms": float(arr.min()),
        "max_ms": float(arr.max()),
        "per_stage_ms": {k: v * 1e3 / repeats for k, v in stage_acc.items()},
    }
