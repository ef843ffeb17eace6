"""Cycle-level tile emulation for small layers.

Drives the SipState register model through the same schedule the timing
module counts: conv layers walk the dispatcher's column waves with parallel
weight loads; fc layers walk output waves with serially staged weights, the
next pass's weights shifting in while the current pass computes, and sliced
outputs reduced through the row cascade. Used by tests and `sipsim verify`
to check the bit-exact outputs and that instrumented cycle counts agree with
the analytic model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arch import ArchConfig, DEFAULT_ARCH
from .fixedpoint import FixedPointTensor
from .functional import (FunctionalError, SipState, cascade_reduce,
                         sip_copy_swr_to_wr, sip_cycle, sip_load_weights_parallel,
                         sip_shift_weights, _check_acc)
from .netmodel import LayerKind, LayerSpec, LayerPrecision
from .timing import cvl_schedule, fcl_waves


@dataclass
class EmulationCounters:
    sip_compute_cycles: int = 0    # sip_cycle invocations, summed over active SIPs
    parallel_loads: int = 0
    serial_shift_cycles: int = 0   # staging shifts per wave (counted once, not per SIP)
    copies: int = 0
    cascade_reduce_cycles: int = 0


def _act_slices(value: int, pa: int, b: int):
    """B-bit activation slices, LSB slice first, with the per-slice sign mask."""
    unsigned = value & ((1 << pa) - 1)
    out = []
    for t in range(-(-pa // b)):
        group = (unsigned >> (t * b)) & ((1 << b) - 1)
        mask = 0
        if t * b <= pa - 1 < (t + 1) * b:
            mask = 1 << (pa - 1 - t * b)
        out.append((group, mask))
    return out


def _weight_groups(value: int, pw: int, b: int):
    """B-bit weight groups, MSB group first (sign extension handled by SWR)."""
    groups = -(-pw // b)
    unsigned = value & ((1 << groups * b) - 1)
    return [(unsigned >> ((groups - 1 - g) * b)) & ((1 << b) - 1) for g in range(groups)]


def emulate_fcl(layer: LayerSpec, weights: FixedPointTensor,
                activations: FixedPointTensor, precision: LayerPrecision,
                arch: ArchConfig = DEFAULT_ARCH, msb_negate: bool = True):
    """Emulate an fc layer; returns (accumulators, EmulationCounters)."""
    if layer.kind != LayerKind.FCL:
        raise FunctionalError(f"{layer.name}: not an fc layer")
    b = arch.bits_per_cycle
    brick = arch.brick_size
    pa, pw = precision.pa, precision.pw
    a_slices_cycles = arch.slices(pa)
    pass_cycles = arch.slices(max(pa, pw))
    load_cycles = arch.slices(pw)
    w = weights.data
    a = activations.data
    counters = EmulationCounters()
    out = np.zeros(layer.filters, dtype=np.int64)

    def weight_brick(out_idx, brick_idx):
        lo = brick_idx * brick
        vals = [int(w[out_idx, lo + j]) if lo + j < layer.in_c else 0
                for j in range(brick)]
        return vals

    def act_brick(brick_idx):
        lo = brick_idx * brick
        return [int(a[lo + j]) if lo + j < layer.in_c else 0 for j in range(brick)]

    done = 0
    for wave in fcl_waves(layer, arch):
        n_out = min(wave.outputs, layer.filters - done)
        states = [[SipState.fresh(brick) for _ in range(wave.np_slices)]
                  for _ in range(n_out)]

        def stage_pass(pass_idx):
            # shift the pass's weights into every slot's SWR, one group per cycle
            groups_per_slot = {}
            for o in range(n_out):
                for sl in range(wave.np_slices):
                    bidx = sl * wave.bricks_per_slice + pass_idx
                    lane_groups = [_weight_groups(v, pw, b)
                                   for v in weight_brick(done + o, bidx)]
                    groups_per_slot[(o, sl)] = lane_groups
            for g in range(load_cycles):
                for (o, sl), lane_groups in groups_per_slot.items():
                    states[o][sl] = sip_shift_weights(
                        states[o][sl], [lg[g] for lg in lane_groups], b)
            counters.serial_shift_cycles += load_cycles

        stage_pass(0)  # first load is the exposed dispatch window
        for p in range(wave.bricks_per_slice):
            for o in range(n_out):
                for sl in range(wave.np_slices):
                    states[o][sl] = sip_copy_swr_to_wr(states[o][sl])
                    counters.copies += 1
            staged_next = False
            slices = {}
            for o in range(n_out):
                for sl in range(wave.np_slices):
                    bidx = sl * wave.bricks_per_slice + p
                    slices[(o, sl)] = [_act_slices(v, pa, b)
                                       for v in act_brick(bidx)]
            for c in range(pass_cycles):
                for o in range(n_out):
                    for sl in range(wave.np_slices):
                        lane_slices = slices[(o, sl)]
                        if c < a_slices_cycles:
                            groups = [ls[c][0] for ls in lane_slices]
                            masks = [ls[c][1] for ls in lane_slices]
                        else:
                            groups = [0] * brick  # waiting on the weight pipeline
                            masks = [0] * brick
                        states[o][sl] = sip_cycle(states[o][sl], groups,
                                                  1 << (c * b), masks, b, msb_negate)
                        counters.sip_compute_cycles += 1
                if not staged_next and p + 1 < wave.bricks_per_slice:
                    staged_next = True
                    stage_pass(p + 1)  # overlaps with this pass's compute
        for o in range(n_out):
            partials = [states[o][sl].or_acc for sl in range(wave.np_slices)]
            out[done + o] = cascade_reduce(partials)
        if wave.np_slices > 1:
            counters.cascade_reduce_cycles += wave.np_slices
        done += n_out
    _check_acc(out)
    return out, counters


def emulate_cvl(layer: LayerSpec, weights: FixedPointTensor,
                activations: FixedPointTensor, precision: LayerPrecision,
                arch: ArchConfig = DEFAULT_ARCH, msb_negate: bool = True):
    """Emulate a conv layer; returns (accumulators, EmulationCounters)."""
    if layer.kind != LayerKind.CVL:
        raise FunctionalError(f"{layer.name}: not a conv layer")
    b = arch.bits_per_cycle
    brick = arch.brick_size
    pa = precision.pa
    slices_per_brick = arch.slices(pa)
    w = weights.data
    a = activations.data
    counters = EmulationCounters()
    out = np.zeros((layer.out_y, layer.out_x, layer.filters), dtype=np.int64)

    # brick positions: (dy, dx, channel-offset) triples; channel counts under
    # the brick size are densely repacked along the flattened kernel
    if layer.kc >= brick:
        positions = [(dy, dx, cb * brick)
                     for dy in range(layer.ky) for dx in range(layer.kx)
                     for cb in range(-(-layer.kc // brick))]
        flat = None
    else:
        flat = [(dy, dx, c) for dy in range(layer.ky) for dx in range(layer.kx)
                for c in range(layer.kc)]
        positions = list(range(-(-len(flat) // brick)))

    def weight_brick(f, pos):
        if flat is None:
            dy, dx, c0 = pos
            return [int(w[f, dy, dx, c0 + j]) if c0 + j < layer.kc else 0
                    for j in range(brick)]
        lo = pos * brick
        return [int(w[f, flat[lo + j][0], flat[lo + j][1], flat[lo + j][2]])
                if lo + j < len(flat) else 0 for j in range(brick)]

    def act_brick(window, group, pos):
        oy, ox = divmod(window, layer.out_x)
        y0 = oy * layer.stride - layer.pad
        x0 = ox * layer.stride - layer.pad

        def sample(dy, dx, c):
            y, x = y0 + dy, x0 + dx
            if 0 <= y < layer.in_y and 0 <= x < layer.in_x:
                return int(a[y, x, group * layer.kc + c])
            return 0  # zero padding

        if flat is None:
            dy, dx, c0 = pos
            return [sample(dy, dx, c0 + j) if c0 + j < layer.kc else 0
                    for j in range(brick)]
        lo = pos * brick
        return [sample(*flat[lo + j]) if lo + j < len(flat) else 0
                for j in range(brick)]

    for item in cvl_schedule(layer, arch):
        n_cols = min(item.active_cols, layer.windows - item.window_start)
        states = [[SipState.fresh(brick) for _ in range(n_cols)]
                  for _ in range(item.active_f)]
        for pos in positions:
            for r in range(item.active_f):
                wb = weight_brick(item.filter_start + r, pos)
                for c in range(n_cols):
                    states[r][c] = sip_load_weights_parallel(states[r][c], wb)
                    counters.parallel_loads += 1
            col_slices = [[_act_slices(v, pa, b)
                           for v in act_brick(item.window_start + c, item.group, pos)]
                          for c in range(n_cols)]
            for t in range(slices_per_brick):
                for r in range(item.active_f):
                    for c in range(n_cols):
                        lane_slices = col_slices[c]
                        groups = [ls[t][0] for ls in lane_slices]
                        masks = [ls[t][1] for ls in lane_slices]
                        states[r][c] = sip_cycle(states[r][c], groups,
                                                 1 << (t * b), masks, b, msb_negate)
                        counters.sip_compute_cycles += 1
        for r in range(item.active_f):
            f = item.filter_start + r
            for c in range(n_cols):
                oy, ox = divmod(item.window_start + c, layer.out_x)
                out[oy, ox, f] = states[r][c].or_acc
    _check_acc(out)
    return out, counters


def emulate_layer(layer: LayerSpec, weights: FixedPointTensor,
                  activations: FixedPointTensor, precision: LayerPrecision,
                  arch: ArchConfig = DEFAULT_ARCH, msb_negate: bool = True):
    if layer.kind == LayerKind.FCL:
        return emulate_fcl(layer, weights, activations, precision, arch, msb_negate)
    if layer.kind == LayerKind.CVL:
        return emulate_cvl(layer, weights, activations, precision, arch, msb_negate)
    raise FunctionalError(f"{layer.name}: nothing to emulate for {layer.kind}")
