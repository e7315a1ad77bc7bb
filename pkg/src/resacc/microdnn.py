"""Minimal fault-injectable inference engine.

A MicroNetwork is an ordered list of layers (CONV2D, FC, RELU, MAXPOOL,
FLATTEN, SOFTMAX) with weights stored bit-exactly in one numeric format.
Faults are single bit flips at a software fault site; the engine supports
three corruption semantics:

* FullCorruption — the flipped value is seen by every use in the inference
  (the software-injection baseline behaviour).
* ReuseBounded(r) — the flipped value is seen by exactly r consecutive uses,
  starting at a deterministic offset derived from the site; pristine
  elsewhere. This models the bounded residency of a value in one FF.
* Crash — no inference result at all (global-control faults).

The shared network is never mutated: flips are applied to private copies, and
the affected output elements are recomputed with the same accumulation
semantics as the clean kernels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .formats import NumericFormat, flip_bit
from .profile import (
    CONTROL_LAYER,
    AcceleratorConfig,
    FFType,
    NetworkProfile,
    SoftwareFaultSite,
)


# --- layers ----------------------------------------------------------------

@dataclass
class Conv2D:
    weight: np.ndarray  # (out_c, in_c, kh, kw), storage dtype
    stride: int = 1
    pad: int = 0


@dataclass
class FC:
    weight: np.ndarray  # (out, in), storage dtype


@dataclass
class ReLU:
    pass


@dataclass
class MaxPool2D:
    kernel: int
    stride: int


@dataclass
class Flatten:
    pass


@dataclass
class Softmax:
    pass


Layer = Conv2D | FC | ReLU | MaxPool2D | Flatten | Softmax


def _conv_out_hw(ih, iw, kh, kw, stride, pad):
    return (ih + 2 * pad - kh) // stride + 1, (iw + 2 * pad - kw) // stride + 1


@dataclass
class MicroNetwork:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    numeric_format: NumericFormat
    _shapes: list[tuple[int, ...]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._shapes = [tuple(self.input_shape)]
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2D):
                oc, ic, kh, kw = layer.weight.shape
                if len(shape) != 3 or shape[0] != ic:
                    raise ValueError(f"layer {i}: conv expects ({ic}, H, W), got {shape}")
                oh, ow = _conv_out_hw(shape[1], shape[2], kh, kw, layer.stride, layer.pad)
                if oh < 1 or ow < 1:
                    raise ValueError(f"layer {i}: empty conv output for input {shape}")
                shape = (oc, oh, ow)
            elif isinstance(layer, FC):
                fan_out, fan_in = layer.weight.shape
                if len(shape) != 1 or shape[0] != fan_in:
                    raise ValueError(f"layer {i}: fc expects ({fan_in},), got {shape}")
                shape = (fan_out,)
            elif isinstance(layer, MaxPool2D):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: maxpool expects (C, H, W), got {shape}")
                oh = (shape[1] - layer.kernel) // layer.stride + 1
                ow = (shape[2] - layer.kernel) // layer.stride + 1
                shape = (shape[0], oh, ow)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, (ReLU, Softmax)):
                pass
            else:
                raise ValueError(f"unsupported layer kind: {type(layer).__name__}")
            self._shapes.append(shape)
        for layer in self.layers:
            w = getattr(layer, "weight", None)
            if w is not None:
                if w.dtype != self.numeric_format.dtype:
                    raise ValueError("weight dtype does not match numeric_format")
                if np.issubdtype(w.dtype, np.floating) and not np.all(np.isfinite(w)):
                    raise ValueError("weights must be finite in the fault-free state")

    def input_shape_of(self, i: int) -> tuple[int, ...]:
        return self._shapes[i]

    def output_shape_of(self, i: int) -> tuple[int, ...]:
        return self._shapes[i + 1]


# --- faults ----------------------------------------------------------------

class FaultMode(enum.Enum):
    FULL_CORRUPTION = "full"
    REUSE_BOUNDED = "reuse"
    CRASH = "crash"


@dataclass(frozen=True)
class FaultSpec:
    site: SoftwareFaultSite
    mode: FaultMode
    reuse: int = 1  # only meaningful for REUSE_BOUNDED


class FaultSemantics(enum.Enum):
    """How a raw fault site maps to corruption behaviour.

    TRUE: reuse-bounded datapath corruption, global-control faults crash,
    local-control faults corrupt one deterministically chosen weight.
    SW: full corruption of weights/activations; control sites unsupported
    (the software-injection baseline does not model them).
    """

    TRUE = "true"
    SW = "sw"


class CrashOutcome:
    """Returned in place of a class prediction when the fault crashes the
    accelerator."""

    def __repr__(self):
        return "CrashOutcome"


CRASH = CrashOutcome()


def make_fault(
    site: SoftwareFaultSite,
    config: AcceleratorConfig,
    semantics: FaultSemantics = FaultSemantics.TRUE,
) -> FaultSpec:
    """Resolve a fault site into a concrete corruption mode using the
    accelerator's per-type reuse factors."""
    if semantics is FaultSemantics.SW:
        if site.var_type in (FFType.CONTROL_GLOBAL, FFType.CONTROL_LOCAL):
            raise ValueError("SW semantics do not model control fault sites")
        return FaultSpec(site, FaultMode.FULL_CORRUPTION)
    if site.var_type is FFType.CONTROL_GLOBAL:
        return FaultSpec(site, FaultMode.CRASH)
    if site.var_type is FFType.CONTROL_LOCAL:
        return FaultSpec(site, FaultMode.REUSE_BOUNDED, reuse=config.reuse[FFType.WEIGHT])
    return FaultSpec(site, FaultMode.REUSE_BOUNDED, reuse=config.reuse[site.var_type])


def _window(var_index: int, total_uses: int, fault: FaultSpec) -> tuple[int, int]:
    """(start, count) of the uses that see the flipped value."""
    if total_uses < 1:
        return 0, 0
    if fault.mode is FaultMode.FULL_CORRUPTION:
        return 0, total_uses
    r = min(max(fault.reuse, 1), total_uses)
    start = var_index % (total_uses - r + 1)
    return start, r


# --- forward pass ----------------------------------------------------------

def _cast(a: np.ndarray, fmt: NumericFormat) -> np.ndarray:
    # Corrupted values may overflow the storage format or be NaN; saturating
    # to +/-Inf (or clipping, for integers) is the modeled behavior, so the
    # cast warnings are noise here.
    with np.errstate(over="ignore", invalid="ignore"):
        if fmt is NumericFormat.INT8:
            return np.clip(np.rint(np.nan_to_num(a)), -128, 127).astype(np.int8)
        return a.astype(fmt.dtype)


def _apply_layer(layer: Layer, x: np.ndarray, fmt: NumericFormat) -> np.ndarray:
    if isinstance(layer, Conv2D):
        out = kernels.conv2d(
            x.astype(np.float64), layer.weight.astype(np.float64), layer.stride, layer.pad
        )
        return _cast(out, fmt)
    if isinstance(layer, FC):
        out = kernels.fc(x.astype(np.float64), layer.weight.astype(np.float64))
        return _cast(out, fmt)
    if isinstance(layer, ReLU):
        return np.maximum(x, x.dtype.type(0))
    if isinstance(layer, MaxPool2D):
        return _cast(kernels.maxpool2d(x.astype(np.float64), layer.kernel, layer.stride), fmt)
    if isinstance(layer, Flatten):
        return x.reshape(-1)
    if isinstance(layer, Softmax):
        z = x.astype(np.float64)
        finite = z[np.isfinite(z)]
        hi = finite.max() if finite.size else 0.0
        e = np.exp(z - hi)
        return _cast(e / e.sum(), fmt)
    raise ValueError(f"unsupported layer kind: {type(layer).__name__}")


def _argmax(logits: np.ndarray) -> int:
    """Argmax with NaN losing every comparison; ties break to lowest index."""
    z = np.asarray(logits, dtype=np.float64)
    z = np.where(np.isnan(z), -np.inf, z)
    return int(np.argmax(z))


def forward(net: MicroNetwork, x: np.ndarray) -> np.ndarray:
    a = np.asarray(x, dtype=net.numeric_format.dtype)
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in net.layers:
            a = _apply_layer(layer, a, net.numeric_format)
    return a


def infer(net: MicroNetwork, x: np.ndarray) -> int:
    if tuple(np.shape(x)) != tuple(net.input_shape):
        raise ValueError(f"input shape {np.shape(x)} != {net.input_shape}")
    return _argmax(forward(net, x))


def clean_activations(net: MicroNetwork, x: np.ndarray) -> list[np.ndarray]:
    """Per-layer inputs plus the final output, all in the storage format."""
    a = np.asarray(x, dtype=net.numeric_format.dtype)
    acts = [a]
    for layer in net.layers:
        a = _apply_layer(layer, a, net.numeric_format)
        acts.append(a)
    return acts


# --- faulty forward --------------------------------------------------------

def _conv_input_positions(layer: Conv2D, in_shape, iy: int, iz: int) -> list[tuple[int, int]]:
    """Output spatial positions whose receptive field covers input (iy, iz),
    in row-major order."""
    _, ih, iw = in_shape
    _, _, kh, kw = layer.weight.shape
    oh, ow = _conv_out_hw(ih, iw, kh, kw, layer.stride, layer.pad)
    pos = []
    for y in range(oh):
        dy = iy - (y * layer.stride - layer.pad)
        if not 0 <= dy < kh:
            continue
        for z in range(ow):
            dz = iz - (z * layer.stride - layer.pad)
            if 0 <= dz < kw:
                pos.append((y, z))
    return pos


def _faulty_layer_output(
    layer: Layer,
    x: np.ndarray,
    fmt: NumericFormat,
    var_type: FFType,
    var_index: int,
    bit_pos: int,
    fault: FaultSpec,
) -> np.ndarray:
    """Apply one layer with a bit flip injected into its weights or input.

    Output-activation flips are handled by the caller (they corrupt the value
    after it is produced).
    """
    if var_type is FFType.WEIGHT:
        w = getattr(layer, "weight", None)
        if w is None:
            raise ValueError("weight fault on a layer without weights")
        wf = w.copy()
        flat = wf.reshape(-1)
        flat[var_index] = flip_bit(flat[var_index], bit_pos, fmt)
        if isinstance(layer, FC):
            # Each FC weight is read once per inference.
            r, _ = divmod(var_index, w.shape[1])
            out = kernels.fc(x.astype(np.float64), w.astype(np.float64))
            out[r] = kernels.fc_elem(x.astype(np.float64), wf.astype(np.float64), r)
            return _cast(out, fmt)
        assert isinstance(layer, Conv2D)
        oc, _, _, _ = np.unravel_index(var_index, w.shape)
        _, oh, ow = _out_shape_conv(layer, x.shape)
        total_uses = oh * ow
        start, count = _window(var_index, total_uses, fault)
        x64 = x.astype(np.float64)
        out = kernels.conv2d(x64, w.astype(np.float64), layer.stride, layer.pad)
        wf64 = wf.astype(np.float64)
        for u in range(start, start + count):
            y, z = divmod(u, ow)
            out[oc, y, z] = kernels.conv2d_elem(x64, wf64, int(oc), y, z, layer.stride, layer.pad)
        return _cast(out, fmt)

    assert var_type is FFType.INPUT_ACTIVATION
    xf = x.copy()
    flat = xf.reshape(-1)
    flat[var_index] = flip_bit(flat[var_index], bit_pos, fmt)
    if isinstance(layer, FC):
        n_out = layer.weight.shape[0]
        start, count = _window(var_index, n_out, fault)
        w64 = layer.weight.astype(np.float64)
        out = kernels.fc(x.astype(np.float64), w64)
        xf64 = xf.astype(np.float64)
        for r in range(start, start + count):
            out[r] = kernels.fc_elem(xf64, w64, r)
        return _cast(out, fmt)
    if isinstance(layer, Conv2D):
        c, iy, iz = np.unravel_index(var_index, x.shape)
        positions = _conv_input_positions(layer, x.shape, int(iy), int(iz))
        n_oc = layer.weight.shape[0]
        total_uses = len(positions) * n_oc
        start, count = _window(var_index, total_uses, fault)
        w64 = layer.weight.astype(np.float64)
        out = kernels.conv2d(x.astype(np.float64), w64, layer.stride, layer.pad)
        xf64 = xf.astype(np.float64)
        _, oh, ow = _out_shape_conv(layer, x.shape)
        for u in range(start, start + count):
            p, o = divmod(u, n_oc)
            y, z = positions[p]
            out[o, y, z] = kernels.conv2d_elem(xf64, w64, o, y, z, layer.stride, layer.pad)
        return _cast(out, fmt)
    if isinstance(layer, ReLU):
        out = np.maximum(x, x.dtype.type(0)).copy()
        oflat = out.reshape(-1)
        v = flat[var_index]
        oflat[var_index] = max(v, v.dtype.type(0)) if v == v else v
        return out
    if isinstance(layer, MaxPool2D):
        c, iy, iz = np.unravel_index(var_index, x.shape)
        out64 = kernels.maxpool2d(x.astype(np.float64), layer.kernel, layer.stride)
        xf64 = xf.astype(np.float64)
        _, ih, iw = x.shape
        oh = (ih - layer.kernel) // layer.stride + 1
        ow = (iw - layer.kernel) // layer.stride + 1
        windows = []
        for y in range(oh):
            if not 0 <= iy - y * layer.stride < layer.kernel:
                continue
            for z in range(ow):
                if 0 <= iz - z * layer.stride < layer.kernel:
                    windows.append((y, z))
        start, count = _window(var_index, len(windows), fault)
        for y, z in windows[start : start + count]:
            patch = xf64[c, y * layer.stride : y * layer.stride + layer.kernel,
                         z * layer.stride : z * layer.stride + layer.kernel]
            out64[c, y, z] = np.fmax.reduce(patch, axis=None)
        return _cast(out64, fmt)
    raise ValueError(f"input-activation fault unsupported on {type(layer).__name__}")


def _out_shape_conv(layer: Conv2D, in_shape):
    oc, _, kh, kw = layer.weight.shape
    oh, ow = _conv_out_hw(in_shape[1], in_shape[2], kh, kw, layer.stride, layer.pad)
    return oc, oh, ow


def total_weight_count(net: MicroNetwork) -> int:
    return sum(l.weight.size for l in net.layers if hasattr(l, "weight"))


def _local_control_target(
    net: MicroNetwork, profile: NetworkProfile, var_index: int
) -> tuple[int, int]:
    """Deterministic mapping from a local-control variable to the datapath
    weight it corrupts: a Knuth-hashed index into the flattened weights."""
    total = total_weight_count(net)
    if total == 0:
        raise ValueError("network has no weights for local-control mapping")
    gidx = (var_index * 2654435761) % total
    for layer_stats in profile.layers:
        layer = net.layers[layer_stats.net_index]
        w = getattr(layer, "weight", None)
        if w is None:
            continue
        if gidx < w.size:
            return layer_stats.layer_id, gidx
        gidx -= w.size
    raise AssertionError("unreachable")


def infer_faulty(
    net: MicroNetwork,
    x: np.ndarray,
    fault: FaultSpec,
    profile: NetworkProfile,
    acts: list[np.ndarray] | None = None,
):
    """Predict under a single injected fault; returns a class index or CRASH.

    `acts` is an optional precomputed clean activation list for this input
    (the fault-free prefix of the forward pass is identical and reusable).
    """
    site = fault.site
    if fault.mode is FaultMode.CRASH:
        return CRASH
    if site.var_type is FFType.CONTROL_LOCAL:
        layer_id, widx = _local_control_target(net, profile, site.var_index)
        site = SoftwareFaultSite(layer_id, FFType.WEIGHT, widx, site.bit_pos)
        fault = FaultSpec(site, fault.mode, fault.reuse)
    if site.layer_id == CONTROL_LAYER:
        raise ValueError("control-global sites must carry CRASH mode")

    layer_stats = profile.layer(site.layer_id)
    net_index = layer_stats.net_index
    if net_index < 0 or net_index >= len(net.layers):
        raise ValueError(f"profile layer {site.layer_id} has no backing network layer")
    fmt = net.numeric_format
    with np.errstate(over="ignore", invalid="ignore"):
        if acts is None:
            acts = [np.asarray(x, dtype=fmt.dtype)]
            for layer in net.layers[:net_index + (1 if site.var_type is FFType.OUTPUT_ACTIVATION else 0)]:
                acts.append(_apply_layer(layer, acts[-1], fmt))

        if site.var_type is FFType.OUTPUT_ACTIVATION:
            out = acts[net_index + 1].copy()
            flat = out.reshape(-1)
            if site.var_index >= flat.size:
                raise ValueError("var_index out of range for output activation")
            flat[site.var_index] = flip_bit(flat[site.var_index], site.bit_pos, fmt)
            a = out
        else:
            a = _faulty_layer_output(
                net.layers[net_index], acts[net_index], fmt,
                site.var_type, site.var_index, site.bit_pos, fault,
            )
        for layer in net.layers[net_index + 1 :]:
            a = _apply_layer(layer, a, fmt)
    return _argmax(a)


# --- evaluation ------------------------------------------------------------

@dataclass
class EvalSet:
    inputs: np.ndarray  # (n, *input_shape)
    labels: np.ndarray  # (n,), int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels disagree in length")
        if len(self.inputs) < 1:
            raise ValueError("evalset must hold at least one input")

    @property
    def size(self) -> int:
        return len(self.inputs)


class ActivationCache:
    """Clean per-input activations, shared across fault evaluations."""

    def __init__(self, net: MicroNetwork, evalset: EvalSet):
        self.acts = [clean_activations(net, x) for x in evalset.inputs]


def accuracy(
    net: MicroNetwork,
    evalset: EvalSet,
    fault: FaultSpec | None = None,
    profile: NetworkProfile | None = None,
    cache: ActivationCache | None = None,
) -> float:
    """Fraction of correct predictions; the standard accuracy when no fault
    is given. A crashed inference counts as incorrect."""
    if fault is None:
        correct = 0
        for x, label in zip(evalset.inputs, evalset.labels):
            if infer(net, x) == int(label):
                correct += 1
        return correct / evalset.size
    if fault.mode is FaultMode.CRASH:
        return 0.0
    if profile is None:
        raise ValueError("faulty accuracy requires the network profile")
    correct = 0
    for i, (x, label) in enumerate(zip(evalset.inputs, evalset.labels)):
        acts = cache.acts[i] if cache is not None else None
        pred = infer_faulty(net, x, fault, profile, acts=acts)
        if pred is not CRASH and pred == int(label):
            correct += 1
    return correct / evalset.size
