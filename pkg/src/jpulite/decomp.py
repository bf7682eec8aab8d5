"""Parity split/merge/reduce and the dilated-vs-stride stage composers.

A "stage" is one leading 3x3 convolution (the head) followed by n 3x3 body
convolutions. Run with a dilation-2 body it is the dilated form of a backbone
stage; run with a stride-2 head and a regular body it is the stride form. Both
factor through the same intermediate feature, which is what the checkers here
verify numerically:

  * the dilated body equals split -> regular body per phase -> merge,
  * a stride-2 conv equals the full conv followed by even-index subsampling,
  * the stride stage output is exactly the even-even phase of the dilated one.

All identities hold exactly (up to float roundoff) under zero padding with
padding = dilation; inputs with odd spatial dims are rejected rather than
padded so the phase decomposition stays clean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .conv import ConvSpec, ConvWeights, conv2d
from .tensor import ShapeError, Tensor


@dataclass(frozen=True, eq=False)
class PhaseSet:
    """The four 2-D parity phases (even/odd row x even/odd column) of a tensor."""

    ee: Tensor
    eo: Tensor
    oe: Tensor
    oo: Tensor
    full_hw: tuple[int, int]

    @property
    def phases(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return (self.ee, self.eo, self.oe, self.oo)


def split_parity(x: Tensor) -> PhaseSet:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"parity split needs even spatial dims, got {(h, w)}")
    d = x.data
    return PhaseSet(
        ee=Tensor(np.ascontiguousarray(d[:, :, 0::2, 0::2])),
        eo=Tensor(np.ascontiguousarray(d[:, :, 0::2, 1::2])),
        oe=Tensor(np.ascontiguousarray(d[:, :, 1::2, 0::2])),
        oo=Tensor(np.ascontiguousarray(d[:, :, 1::2, 1::2])),
        full_hw=(h, w),
    )


def merge_parity(p: PhaseSet) -> Tensor:
    shapes = {t.shape for t in p.phases}
    if len(shapes) != 1:
        raise ShapeError(f"phase shapes differ: {shapes}")
    n, c, hh, hw = p.ee.shape
    out = np.empty((n, c, 2 * hh, 2 * hw), dtype=p.ee.dtype)
    out[:, :, 0::2, 0::2] = p.ee.data
    out[:, :, 0::2, 1::2] = p.eo.data
    out[:, :, 1::2, 0::2] = p.oe.data
    out[:, :, 1::2, 1::2] = p.oo.data
    return Tensor(out)


def reduce_even(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"even reduction needs even spatial dims, got {(h, w)}")
    return Tensor(np.ascontiguousarray(x.data[:, :, 0::2, 0::2]))


# ---------------------------------------------------------------------------
# stage composers


@dataclass(frozen=True, eq=False)
class StageWeights:
    """Head conv (3x3) plus an n-deep chain of 3x3 body convs, all size-preserving."""

    head: ConvWeights
    body: list[ConvWeights]

    @property
    def in_channels(self) -> int:
        return self.head.weight.shape[1]

    @property
    def channels(self) -> int:
        return self.head.weight.shape[0]


def _head_spec(sw: StageWeights, stride: int = 1, dilation: int = 1) -> ConvSpec:
    return ConvSpec(
        sw.in_channels, sw.channels, kernel=(3, 3),
        stride=(stride, stride), dilation=(dilation, dilation), padding=(dilation, dilation),
    )


def _body_spec(sw: StageWeights, dilation: int = 1) -> ConvSpec:
    return ConvSpec(
        sw.channels, sw.channels, kernel=(3, 3),
        dilation=(dilation, dilation), padding=(dilation, dilation),
    )


class StageOutput(NamedTuple):
    y: Tensor
    y_m: Tensor  # intermediate feature after the head conv


def dilated_stage(x: Tensor, sw: StageWeights, head_dilation: int = 1, body_dilation: int = 2) -> StageOutput:
    """Regular (or dilated) head then a dilated body chain; spatial dims preserved."""
    y_m = conv2d(x, sw.head, _head_spec(sw, dilation=head_dilation))
    y = y_m
    for bw in sw.body:
        y = conv2d(y, bw, _body_spec(sw, dilation=body_dilation))
    return StageOutput(y, y_m)


def dilated_stage_decomposed(x: Tensor, sw: StageWeights) -> StageOutput:
    """Same result as dilated_stage (body dilation 2) via split -> regular body -> merge."""
    y_m = conv2d(x, sw.head, _head_spec(sw))
    p = split_parity(y_m)
    outs = []
    for phase in p.phases:
        y = phase
        for bw in sw.body:
            y = conv2d(y, bw, _body_spec(sw))
        outs.append(y)
    merged = merge_parity(PhaseSet(*outs, full_hw=p.full_hw))
    return StageOutput(merged, y_m)


def stride_stage(x: Tensor, sw: StageWeights, head_dilation: int = 1) -> StageOutput:
    """Stride-2 head then a regular body chain; spatial dims halved."""
    y_m = conv2d(x, sw.head, _head_spec(sw, stride=2, dilation=head_dilation))
    y = y_m
    for bw in sw.body:
        y = conv2d(y, bw, _body_spec(sw))
    return StageOutput(y, y_m)


@dataclass(frozen=True)
class ConsistencyReport:
    max_abs_diff: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tolerance


def check_phase_consistency(x: Tensor, sw: StageWeights, tolerance: float = 1e-12) -> ConsistencyReport:
    """The stride-path output must be exactly the even-even phase of the dilated one."""
    y_d = dilated_stage(x, sw).y
    y_s = stride_stage(x, sw).y
    diff = float(np.max(np.abs(reduce_even(y_d).data - y_s.data)))
    return ConsistencyReport(diff, tolerance)
