"""Cycle-count models for the bit-parallel baseline and the serial engines.

Both engines are driven by one shared dispatch schedule: convolution windows
are issued in groups of 16 (the column count of the 1-bit serial tile), fc
outputs in chip-sized waves of 256-output groups. The baseline consumes one
activation brick per cycle against that schedule; the serial engines consume
each brick position over ceil(P/B) cycles across all columns at once. With
16-bit operands and one bit per cycle the two models therefore coincide
exactly on every layer.

Serial weight loading for fc layers and the trailing cascade reduction are
pipelined with surrounding computation (the serial staging registers are free
while the latched weights compute), so they do not extend total_cycles; they
are still reported per layer, and dispatch_overhead_fraction exposes the
isolated-layer view used for overhead accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import ArchConfig, DEFAULT_ARCH, Engine
from .netmodel import LayerKind, LayerSpec, NetworkSpec, PrecisionProfile


class TimingError(ValueError):
    pass


@dataclass(frozen=True)
class CascadePlan:
    """Number of slices one fc output is spread over along a SIP row."""

    np_slices: int

    def __post_init__(self):
        if not (1 <= self.np_slices <= 16):
            raise TimingError(f"cascade slices must be in 1..16, got {self.np_slices}")


@dataclass(frozen=True)
class CycleReport:
    layer: str
    engine: Engine
    total_cycles: int
    weight_load_cycles: int
    compute_cycles: int
    cascade_reduce_cycles: int
    idle_sip_fraction: float
    dispatch_overhead_fraction: float

    def __post_init__(self):
        assert self.total_cycles == self.compute_cycles
        assert 0.0 <= self.idle_sip_fraction <= 1.0
        assert 0.0 <= self.dispatch_overhead_fraction <= 1.0


def baseline_arch(arch: ArchConfig) -> ArchConfig:
    """The bit-parallel geometry matching `arch`'s memory organization."""
    return ArchConfig(brick_size=arch.brick_size, filters_per_tile=arch.filters_per_tile,
                      tiles=arch.tiles, bits_per_cycle=1,
                      base_precision=arch.base_precision)


def choose_cascade(outputs: int, arch: ArchConfig = DEFAULT_ARCH) -> CascadePlan:
    """Largest power-of-two slicing that still gives every slice a SIP."""
    if outputs < 1:
        raise TimingError("outputs must be >= 1")
    limit = min(16, arch.chip_sips // outputs)
    np_slices = 1
    while np_slices * 2 <= limit:
        np_slices *= 2
    return CascadePlan(max(1, np_slices))


DISPATCH_POOL = 16  # windows per dispatcher pool, fixed by the baseline schedule


@dataclass(frozen=True)
class CvlWorkItem:
    """One column wave x filter pass of a conv layer's schedule."""

    window_start: int    # first flattened window index served by this wave
    active_cols: int     # real windows in this wave (idle columns beyond)
    group: int           # channel group (grouped convs serialize groups)
    filter_start: int    # first absolute filter index of this pass
    active_f: int        # real filters in this pass
    bricks: int          # brick positions streamed per window


def cvl_schedule(layer: LayerSpec, arch: ArchConfig):
    """Work items for a conv layer.

    The dispatcher stages windows in pools of 16 regardless of engine; a tile
    with fewer columns drains each pool in several column waves, and grouped
    convolutions serialize their channel groups over the shared broadcast.
    The baseline and the serial engines walk the identical item list.
    """
    if layer.kind != LayerKind.CVL:
        raise TimingError(f"{layer.name}: not a conv layer")
    cols = arch.columns_per_tile
    waves_per_pool = DISPATCH_POOL // cols
    bpw = layer.bricks_per_window(arch.brick_size)
    slots = arch.chip_filter_slots
    fpg = layer.filters // layer.groups
    done_w = 0
    while done_w < layer.windows:
        pool = min(DISPATCH_POOL, layer.windows - done_w)
        for cw in range(waves_per_pool):
            active_cols = min(cols, max(0, pool - cw * cols))
            for g in range(layer.groups):
                done_f = 0
                while done_f < fpg:
                    active_f = min(slots, fpg - done_f)
                    yield CvlWorkItem(done_w + cw * cols, active_cols, g,
                                      g * fpg + done_f, active_f, bpw)
                    done_f += active_f
        done_w += pool


@dataclass(frozen=True)
class FclWave:
    """One chip pass over a group of fc outputs."""

    outputs: int          # real outputs finished in this wave
    output_slots: int     # padded to output-group granularity
    np_slices: int
    bricks_per_slice: int


def fcl_waves(layer: LayerSpec, arch: ArchConfig):
    """Wave/cascade plan for an fc layer.

    Outputs are taken in chip-sized waves; a final ragged wave is sliced
    along the SIP rows so the whole grid stays busy. Slice counts are powers
    of two that divide the input brick count (partial splits force np = 1).
    """
    if layer.kind != LayerKind.FCL:
        raise TimingError(f"{layer.name}: not an fc layer")
    group = arch.chip_filter_slots          # outputs per group (256 at full scale)
    bricks = layer.input_bricks(arch.brick_size)
    chip_groups = arch.chip_sips // group   # groups per wave (= column count)
    total_groups = -(-layer.filters // group)
    waves = []
    done_groups = 0
    done_outputs = 0
    while done_groups < total_groups:
        g = min(chip_groups, total_groups - done_groups)
        outputs = min(layer.filters - done_outputs, g * group)
        np_slices = min(choose_cascade(g * group, arch).np_slices, chip_groups // g)
        while np_slices > 1 and bricks % np_slices:
            np_slices //= 2
        waves.append(FclWave(outputs, g * group, np_slices, bricks // np_slices))
        done_groups += g
        done_outputs += outputs
    return waves


def cycles_dadn(layer: LayerSpec, arch: ArchConfig = DEFAULT_ARCH) -> CycleReport:
    """Baseline cycles: one activation brick consumed per cycle against the shared schedule."""
    barch = baseline_arch(arch)
    lanes = barch.chip_filter_slots * barch.brick_size  # multiplier lanes chip-wide
    if layer.kind == LayerKind.CVL:
        total = 0
        active = 0
        for item in cvl_schedule(layer, barch):
            total += barch.columns_per_tile * item.bricks
            active += item.active_cols * item.bricks * item.active_f * barch.brick_size
        idle = 1.0 - active / (total * lanes)
        return CycleReport(layer.name, Engine.DADN, total, 0, total, 0, idle, 0.0)
    if layer.kind == LayerKind.FCL:
        bricks = layer.input_bricks(barch.brick_size)
        groups = -(-layer.filters // barch.chip_filter_slots)
        total = bricks * groups
        active = layer.filters * barch.brick_size * bricks
        idle = 1.0 - active / (total * lanes)
        return CycleReport(layer.name, Engine.DADN, total, 0, total, 0, idle, 0.0)
    raise TimingError(f"{layer.name}: no cycle model for {layer.kind}")


def cycles_trt_cvl(layer: LayerSpec, pa: int, arch: ArchConfig = DEFAULT_ARCH,
                   engine: Engine = Engine.TRT) -> CycleReport:
    """Serial-engine conv cycles: each brick position costs ceil(Pa/B) cycles per window group."""
    if not (1 <= pa <= 16):
        raise TimingError(f"Pa must be in 1..16, got {pa}")
    slices = arch.slices(pa)
    total = 0
    active = 0
    for item in cvl_schedule(layer, arch):
        total += item.bricks * slices
        active += item.active_cols * item.active_f * item.bricks * slices
    idle = 1.0 - active / (total * arch.chip_sips)
    return CycleReport(layer.name, engine, total, 0, total, 0, idle, 0.0)


def cycles_trt_fcl(layer: LayerSpec, pa: int, pw: int, arch: ArchConfig = DEFAULT_ARCH,
                   plan: CascadePlan | None = None,
                   engine: Engine = Engine.TRT) -> CycleReport:
    """Serial-engine fc cycles.

    Compute is bound by max(Pa, Pw) per pass. The serial load of the first
    weight set and the per-wave cascade reductions overlap adjacent work and
    are reported without extending the total.
    """
    if layer.filters < 1:
        raise TimingError(f"{layer.name}: fc layer needs outputs")
    slices = arch.slices(max(pa, pw))
    load = arch.slices(pw)
    waves = fcl_waves(layer, arch)
    if plan is not None and len(waves) == 1:
        np_slices = plan.np_slices
        bricks = layer.input_bricks(arch.brick_size)
        while np_slices > 1 and bricks % np_slices:
            np_slices //= 2
        w = waves[0]
        waves = [FclWave(w.outputs, w.output_slots, np_slices, bricks // np_slices)]
    total = 0
    active = 0
    reduce_cycles = 0
    for w in waves:
        cycles = w.bricks_per_slice * slices
        total += cycles
        active += w.outputs * w.np_slices * cycles
        if w.np_slices > 1:
            reduce_cycles += w.np_slices
    idle = 1.0 - active / (total * arch.chip_sips)
    dispatch = load / (load + total + reduce_cycles)
    return CycleReport(layer.name, engine, total, load, total, reduce_cycles, idle, dispatch)


def cycles_for(layer: LayerSpec, pa: int, pw: int, arch: ArchConfig,
               engine: Engine) -> CycleReport:
    if engine == Engine.DADN:
        return cycles_dadn(layer, arch)
    if layer.kind == LayerKind.CVL:
        return cycles_trt_cvl(layer, pa, arch, engine)
    if engine == Engine.STR:
        # fc parity with the baseline: no serial weight loading path exists.
        rep = cycles_dadn(layer, arch)
        return CycleReport(layer.name, Engine.STR, rep.total_cycles, 0, rep.compute_cycles,
                           0, rep.idle_sip_fraction, 0.0)
    return cycles_trt_fcl(layer, pa, pw, arch, engine=engine)


@dataclass(frozen=True)
class NetworkTiming:
    network: str
    engine: Engine
    reports: tuple          # CycleReport per conv/fc layer, in order
    kinds: tuple            # LayerKind per report

    def total_cycles(self, kind: LayerKind | None = None) -> int:
        return sum(r.total_cycles for r, k in zip(self.reports, self.kinds)
                   if kind is None or k == kind)

    def isolated_cycles(self, kind: LayerKind | None = None) -> int:
        """Sum of per-layer schedules with their load/reduce overheads un-overlapped."""
        return sum(r.weight_load_cycles + r.compute_cycles + r.cascade_reduce_cycles
                   for r, k in zip(self.reports, self.kinds)
                   if kind is None or k == kind)

    def dispatch_overhead_fraction(self) -> float:
        load = sum(r.weight_load_cycles for r in self.reports)
        denom = self.isolated_cycles()
        return load / denom if denom else 0.0


def simulate_network(net: NetworkSpec, profile: PrecisionProfile,
                     arch: ArchConfig = DEFAULT_ARCH,
                     engine: Engine = Engine.TRT) -> NetworkTiming:
    """Cycle reports for every conv/fc layer of `net` under `profile`."""
    profile.validate_for(net)
    reports = []
    kinds = []
    for layer, entry in zip(net.compute_layers(), profile.entries):
        reports.append(cycles_for(layer, entry.pa, entry.pw, arch, engine))
        kinds.append(layer.kind)
    return NetworkTiming(net.name, engine, tuple(reports), tuple(kinds))


def speedup(base: NetworkTiming, other: NetworkTiming,
            kind: LayerKind | None = None) -> float:
    """Aggregate speedup of `other` vs `base` (total time ratio)."""
    t = other.total_cycles(kind)
    if t == 0:
        raise TimingError("degenerate timing: zero cycles")
    return base.total_cycles(kind) / t


def geomean(values) -> float:
    values = list(values)
    if not values:
        raise TimingError("geomean of no values")
    return math.exp(sum(math.log(v) for v in values) / len(values))


@dataclass(frozen=True)
class TwoBitComparison:
    network: str
    vs_dadn: dict      # LayerKind -> speedup of the 2-bit engine over the baseline
    vs_onebit: dict    # LayerKind -> 2-bit time advantage over the 1-bit engine (1.0 = equal)


def simulate_trt2b(net: NetworkSpec, profile: PrecisionProfile,
                   arch: ArchConfig | None = None) -> TwoBitComparison:
    """Compare the two-bit serial variant against the baseline and the 1-bit engine.

    Precisions are effectively rounded up to the next even value by the
    two-bit slice count; the halved column/SIP parallelism is the competing
    cost. Comparisons use the per-layer isolated schedules (with weight-load
    and cascade-reduce terms), which is where the halved serial load of the
    two-bit variant shows up.
    """
    arch2 = arch or ArchConfig(bits_per_cycle=2)
    if arch2.bits_per_cycle != 2:
        raise TimingError("simulate_trt2b needs a 2-bit arch")
    base = simulate_network(net, profile, baseline_arch(arch2), Engine.DADN)
    one = simulate_network(net, profile, baseline_arch(arch2), Engine.TRT)
    two = simulate_network(net, profile, arch2, Engine.TRT)
    vs_dadn = {}
    vs_onebit = {}
    for kind in (LayerKind.CVL, LayerKind.FCL):
        if any(k == kind for k in base.kinds):
            vs_dadn[kind] = base.isolated_cycles(kind) / two.isolated_cycles(kind)
            vs_onebit[kind] = one.isolated_cycles(kind) / two.isolated_cycles(kind)
    return TwoBitComparison(net.name, vs_dadn, vs_onebit)
