"""Bit-exact datapath models.

Three engine flavors produce identical layer outputs:

* ``dadn``: bit-parallel reference; plain integer multiply-accumulate.
* ``str`` / ``trt``: activations stream one B-bit slice per cycle (LSB slice
  first) into AND gates against latched weights; the slice holding the
  activation's sign bit is subtracted rather than added, which reproduces
  two's-complement multiplication exactly. ``trt`` additionally loads fc
  weights bit-serially (MSB first with sign extension) and may slice an fc
  output across cascaded units.

The serial behavior is modeled twice: `SipState` plus its step functions give
the per-cycle register-level reference used by the tile emulator and the unit
tests, while the `serial_*` helpers reconstruct whole tensors through the same
bit decomposition for fast vectorized layer evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .arch import ArchConfig, DEFAULT_ARCH, Engine
from .fixedpoint import (FixedPointFormat, FixedPointTensor,
                         _round_shift_right_even_array)
from .netmodel import LayerKind, LayerSpec, LayerPrecision
from .timing import fcl_waves

ACC_LIMIT = 1 << 31  # accumulators must stay inside 32 signed bits


class FunctionalError(ValueError):
    pass


def _check_range(arr: np.ndarray, bits: int, what: str):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if arr.size and (arr.min() < lo or arr.max() > hi):
        raise FunctionalError(f"{what} values exceed {bits}-bit two's-complement range")


def _check_acc(arr: np.ndarray):
    if arr.size and max(abs(int(arr.min())), abs(int(arr.max()))) >= ACC_LIMIT:
        raise FunctionalError("accumulator overflow: |sum| >= 2^31")


# ---------------------------------------------------------------------------
# vectorized serial reconstruction
# ---------------------------------------------------------------------------

def serial_activation_value(raw, pa: int, bits_per_cycle: int = 1,
                            msb_negate: bool = True) -> np.ndarray:
    """Accumulate a raw activation from its B-bit slices exactly as the serial
    datapath would: LSB slice first, each slice scaled by 2^(B*t), the sign
    bit's contribution negated. Equals `raw` when msb_negate is on.
    """
    raw = np.asarray(raw, dtype=np.int64)
    _check_range(raw, pa, "activation")
    unsigned = raw & ((1 << pa) - 1)
    total = np.zeros_like(unsigned)
    slices = -(-pa // bits_per_cycle)
    for t in range(slices):
        for i in range(bits_per_cycle):
            pos = t * bits_per_cycle + i
            if pos >= pa:
                break
            bit = (unsigned >> pos) & 1
            weight = 1 << pos
            if msb_negate and pos == pa - 1:
                total = total - bit * weight
            else:
                total = total + bit * weight
    return total


def serial_weight_value(raw, pw: int, bits_per_cycle: int = 1) -> np.ndarray:
    """Rebuild weights through the serial staging path: B-bit groups shifted
    in MSB first, the first group sign-extended. Identity for in-range weights.
    """
    raw = np.asarray(raw, dtype=np.int64)
    _check_range(raw, pw, "weight")
    groups = -(-pw // bits_per_cycle)
    width = groups * bits_per_cycle
    unsigned = raw & ((1 << width) - 1)  # sign extension to the padded width
    value = np.zeros_like(unsigned)
    for g in range(groups):
        shift = (groups - 1 - g) * bits_per_cycle
        chunk = (unsigned >> shift) & ((1 << bits_per_cycle) - 1)
        if g == 0:
            sign = chunk >> (bits_per_cycle - 1)
            chunk = chunk - (sign << bits_per_cycle)  # sign-extend first group
        value = value * (1 << bits_per_cycle) + chunk
    return value


# ---------------------------------------------------------------------------
# SIP register-level reference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SipState:
    """Registers of one serial inner-product unit (brick_size weight lanes)."""

    swr: tuple          # serial staging subregisters (signed values)
    wr: tuple           # latched operand subregisters
    or_acc: int = 0
    cascade_in: int = 0
    swr_bits: int = 0   # bits shifted in since the staging register was drained

    @classmethod
    def fresh(cls, brick_size: int = 16) -> "SipState":
        return cls(swr=(0,) * brick_size, wr=(0,) * brick_size)

    @property
    def brick_size(self) -> int:
        return len(self.wr)


def sip_load_weights_parallel(s: SipState, weights) -> SipState:
    """Latch a full weight brick directly into WR (conv path)."""
    weights = tuple(int(w) for w in weights)
    if len(weights) != s.brick_size:
        raise FunctionalError(f"expected {s.brick_size} weights, got {len(weights)}")
    return replace(s, wr=weights)


def sip_shift_weights(s: SipState, bit_groups, bits_per_cycle: int = 1) -> SipState:
    """Shift one B-bit group per lane into SWR, MSB group first.

    The first group of a load sequence sign-extends; subsequent groups shift
    left. After ceil(Pw/B) calls each subregister holds the signed weight.
    """
    bit_groups = tuple(int(b) for b in bit_groups)
    if len(bit_groups) != s.brick_size:
        raise FunctionalError(f"expected {s.brick_size} bit groups, got {len(bit_groups)}")
    top = 1 << bits_per_cycle
    if any(not 0 <= b < top for b in bit_groups):
        raise FunctionalError(f"bit groups must be {bits_per_cycle}-bit values")
    if s.swr_bits == 0:
        new = tuple(b - ((b >> (bits_per_cycle - 1)) << bits_per_cycle) for b in bit_groups)
    else:
        new = tuple(v * top + b for v, b in zip(s.swr, bit_groups))
    return replace(s, swr=new, swr_bits=s.swr_bits + bits_per_cycle)


def sip_copy_swr_to_wr(s: SipState) -> SipState:
    """Latch SWR into WR; SWR is then free for the next serial load."""
    return replace(s, wr=s.swr, swr_bits=0)


def sip_cycle(s: SipState, act_bit_groups, slice_weight: int, msb_flags,
              bits_per_cycle: int = 1, msb_negate: bool = True) -> SipState:
    """One compute cycle: AND each activation bit with its latched weight and
    accumulate, scaling the slice by `slice_weight` (= 2^(B*t) for slice t).

    `msb_flags` marks, per lane, which bit positions inside this slice carry
    the activation's sign bit (a boolean for B=1, a B-bit mask otherwise);
    those products are subtracted.
    """
    act_bit_groups = tuple(int(a) for a in act_bit_groups)
    msb_flags = tuple(int(m) for m in msb_flags)
    if len(act_bit_groups) != s.brick_size or len(msb_flags) != s.brick_size:
        raise FunctionalError("activation slice/flag length mismatch")
    contribution = 0
    for w, bits, mask in zip(s.wr, act_bit_groups, msb_flags):
        for i in range(bits_per_cycle):
            if (bits >> i) & 1:
                term = w << i
                if msb_negate and (mask >> i) & 1:
                    contribution -= term
                else:
                    contribution += term
    acc = s.or_acc + slice_weight * contribution
    if abs(acc) >= ACC_LIMIT:
        raise FunctionalError("accumulator overflow: |or_acc| >= 2^31")
    return replace(s, or_acc=acc)


def sip_serial_product(weights, acts, pa: int, arch: ArchConfig = DEFAULT_ARCH,
                       msb_negate: bool = True, initial: int = 0) -> int:
    """Full serial inner product of one brick through sip_cycle steps."""
    b = arch.bits_per_cycle
    s = replace(SipState.fresh(len(tuple(weights))), or_acc=initial)
    s = sip_load_weights_parallel(s, weights)
    acts = tuple(int(a) for a in acts)
    unsigned = [a & ((1 << pa) - 1) for a in acts]
    for t in range(-(-pa // b)):
        groups = [(u >> (t * b)) & ((1 << b) - 1) for u in unsigned]
        mask = 0
        msb_pos = pa - 1
        if t * b <= msb_pos < (t + 1) * b:
            mask = 1 << (msb_pos - t * b)
        s = sip_cycle(s, groups, 1 << (t * b), [mask] * len(groups), b, msb_negate)
    return s.or_acc


def cascade_reduce(row_partials) -> int:
    """Reduce sliced partial sums along a row's daisy chain (one hop per cycle)."""
    parts = [int(p) for p in row_partials]
    if not 1 <= len(parts) <= 16:
        raise FunctionalError(f"cascade width must be 1..16, got {len(parts)}")
    total = parts[0]
    for p in parts[1:]:
        total += p
    return total


# ---------------------------------------------------------------------------
# layer evaluation
# ---------------------------------------------------------------------------

def _conv_accumulate(layer: LayerSpec, weights: np.ndarray, acts: np.ndarray) -> np.ndarray:
    """Direct grouped convolution; weights (F, ky, kx, kc), acts (y, x, c)."""
    oy, ox = layer.out_y, layer.out_x
    pad = layer.pad
    padded = np.zeros((layer.in_y + 2 * pad, layer.in_x + 2 * pad, layer.in_c),
                      dtype=np.int64)
    padded[pad:pad + layer.in_y, pad:pad + layer.in_x, :] = acts
    out = np.zeros((oy, ox, layer.filters), dtype=np.int64)
    groups = layer.groups
    fpg = layer.filters // groups
    s = layer.stride
    for g in range(groups):
        c0 = g * layer.kc
        w_g = weights[g * fpg:(g + 1) * fpg]
        for dy in range(layer.ky):
            for dx in range(layer.kx):
                patch = padded[dy:dy + s * oy:s, dx:dx + s * ox:s, c0:c0 + layer.kc]
                out[:, :, g * fpg:(g + 1) * fpg] += np.tensordot(
                    patch, w_g[:, dy, dx, :], axes=([2], [1]))
    return out


def _fc_accumulate_sliced(layer: LayerSpec, weights: np.ndarray, acts: np.ndarray,
                          arch: ArchConfig) -> np.ndarray:
    """Fc dot products computed per the wave/cascade plan: each output's input
    range is split over np slices at brick granularity, partials reduced
    through the row chain. Slicing never changes the integer totals.
    """
    out = np.empty(layer.filters, dtype=np.int64)
    brick = arch.brick_size
    done = 0
    for wave in fcl_waves(layer, arch):
        hi = min(done + wave.outputs, layer.filters)
        w_wave = weights[done:hi]
        if wave.np_slices == 1:
            out[done:hi] = w_wave @ acts
        else:
            partials = []
            for sl in range(wave.np_slices):
                lo_e = sl * wave.bricks_per_slice * brick
                hi_e = min((sl + 1) * wave.bricks_per_slice * brick, layer.in_c)
                partials.append(w_wave[:, lo_e:hi_e] @ acts[lo_e:hi_e])
            stacked = partials[0].copy()
            for p in partials[1:]:
                stacked += p
            out[done:hi] = stacked
        done = hi
    return out


def layer_accumulate(layer: LayerSpec, weights: FixedPointTensor,
                     activations: FixedPointTensor, precision: LayerPrecision,
                     arch: ArchConfig = DEFAULT_ARCH, engine: Engine = Engine.TRT,
                     msb_negate: bool = True) -> np.ndarray:
    """Raw 32-bit accumulator tensor for a conv or fc layer under `engine`."""
    w = weights.data
    a = activations.data
    _check_range(a, precision.pa, f"{layer.name} activation")
    _check_range(w, precision.pw, f"{layer.name} weight")
    if engine != Engine.DADN:
        a = serial_activation_value(a, precision.pa, arch.bits_per_cycle, msb_negate)
    if layer.kind == LayerKind.FCL:
        if a.shape != (layer.in_c,):
            raise FunctionalError(f"{layer.name}: activations must be ({layer.in_c},)")
        if w.shape != (layer.filters, layer.in_c):
            raise FunctionalError(f"{layer.name}: weights must be "
                                  f"({layer.filters}, {layer.in_c})")
        if engine == Engine.TRT:
            w = serial_weight_value(w, precision.pw, arch.bits_per_cycle)
            out = _fc_accumulate_sliced(layer, w, a, arch)
        else:
            out = w @ a
    elif layer.kind == LayerKind.CVL:
        if a.shape != (layer.in_y, layer.in_x, layer.in_c):
            raise FunctionalError(f"{layer.name}: activations must be "
                                  f"({layer.in_y}, {layer.in_x}, {layer.in_c})")
        if w.shape != (layer.filters, layer.ky, layer.kx, layer.kc):
            raise FunctionalError(f"{layer.name}: weights must be "
                                  f"({layer.filters}, {layer.ky}, {layer.kx}, {layer.kc})")
        out = _conv_accumulate(layer, w, a)
    else:
        raise FunctionalError(f"{layer.name}: cannot accumulate a {layer.kind} layer")
    _check_acc(out)
    return out


def max_pool(layer: LayerSpec, acts: np.ndarray) -> np.ndarray:
    """Windowed max over (y, x) per channel; ceil-mode windows are clipped."""
    if layer.kind != LayerKind.POOL:
        raise FunctionalError(f"{layer.name}: not a pool layer")
    if layer.kx > layer.in_x or layer.ky > layer.in_y:
        raise FunctionalError(f"{layer.name}: window exceeds input dims")
    oy, ox = layer.out_y, layer.out_x
    out = np.empty((oy, ox, layer.in_c), dtype=np.int64)
    for y in range(oy):
        for x in range(ox):
            y0, x0 = y * layer.stride, x * layer.stride
            win = acts[y0:min(y0 + layer.ky, layer.in_y),
                       x0:min(x0 + layer.kx, layer.in_x), :]
            out[y, x, :] = win.max(axis=(0, 1))
    return out


def apply_pool_and_activation(t: FixedPointTensor, layer: LayerSpec) -> FixedPointTensor:
    """Max pooling for pool layers; relu for conv/fc outputs that request it."""
    if layer.kind == LayerKind.POOL:
        return FixedPointTensor(max_pool(layer, t.data), t.format)
    if layer.activation == "relu":
        return FixedPointTensor(np.maximum(t.data, 0), t.format)
    return t


def run_layer_functional(layer: LayerSpec, weights: FixedPointTensor | None,
                         activations: FixedPointTensor,
                         precision: LayerPrecision | None,
                         arch: ArchConfig = DEFAULT_ARCH,
                         engine: Engine = Engine.TRT,
                         out_format: FixedPointFormat | None = None,
                         msb_negate: bool = True) -> FixedPointTensor:
    """Evaluate one layer end to end: accumulate, activation, requantize.

    Engine choice never changes the result; only precisions do. Pool layers
    ignore `weights`/`precision`.
    """
    if layer.kind == LayerKind.POOL:
        return apply_pool_and_activation(activations, layer)
    if weights is None or precision is None:
        raise FunctionalError(f"{layer.name}: conv/fc layers need weights and precisions")
    acc = layer_accumulate(layer, weights, activations, precision, arch, engine, msb_negate)
    if layer.activation == "relu":
        acc = np.maximum(acc, 0)
    acc_frac = activations.format.frac_bits + weights.format.frac_bits
    if out_format is None:
        out_format = FixedPointFormat(16, min(acc_frac, 15))
    shifted = _round_shift_right_even_array(acc, acc_frac - out_format.frac_bits)
    clipped = np.clip(shifted, out_format.min_raw, out_format.max_raw)
    return FixedPointTensor(clipped, out_format)
