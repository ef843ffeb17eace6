"""Parametric event-count energy model.

Counts memory, interconnect, and datapath events along the exact schedules
the timing module walks, then applies a user-supplied per-event coefficient
table. The shipped table is a calibration artifact tuned so the fixture
networks land near the published relative-efficiency figures; it is not a
physical prediction (no synthesis data backs it).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .arch import ArchConfig, DEFAULT_ARCH, Engine
from .netmodel import LayerKind, LayerSpec, NetworkSpec, PrecisionProfile
from .timing import baseline_arch, cvl_schedule, cycles_for, fcl_waves


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyEventCounts:
    """Per-run event totals (all non-negative integers)."""

    sb_bits_read: int = 0
    nm_bits_read: int = 0
    nm_bits_written: int = 0
    interconnect_bit_hops: int = 0
    sip_adder_activations: int = 0
    bitparallel_mult_ops: int = 0
    idle_sip_cycles: int = 0
    total_cycles: int = 0  # drives the static leakage term

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise EnergyError(f"negative event count for {f.name}")

    def __add__(self, other: "EnergyEventCounts") -> "EnergyEventCounts":
        return EnergyEventCounts(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                                    for f in fields(self)})


@dataclass(frozen=True)
class EnergyCoefficients:
    """Energy per event in abstract units, plus static leakage per cycle."""

    sb_bits_read: float = 0.0
    nm_bits_read: float = 0.0
    nm_bits_written: float = 0.0
    interconnect_bit_hops: float = 0.0
    sip_adder_activations: float = 0.0
    bitparallel_mult_ops: float = 0.0
    idle_sip_cycles: float = 0.0
    leakage_per_cycle: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise EnergyError(f"coefficient {f.name} must be non-negative")


def load_coefficients(path) -> EnergyCoefficients:
    """Parse a flat `key = value` coefficient table."""
    path = Path(path)
    known = {f.name for f in fields(EnergyCoefficients)}
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise EnergyError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in known:
            raise EnergyError(f"{path}:{lineno}: unknown event class {key!r}")
        try:
            values[key] = float(raw.strip())
        except ValueError:
            raise EnergyError(f"{path}:{lineno}: bad number {raw.strip()!r}") from None
    return EnergyCoefficients(**values)


def save_coefficients(coeffs: EnergyCoefficients, path):
    lines = [f"{f.name} = {getattr(coeffs, f.name)!r}" for f in fields(EnergyCoefficients)]
    Path(path).write_text("\n".join(lines) + "\n")


def default_coefficients() -> EnergyCoefficients:
    """The calibration table shipped with the package."""
    from .netmodel import fixture_dir
    return load_coefficients(fixture_dir() / "calibration.coeffs")


def count_layer_events(layer: LayerSpec, pa: int, pw: int,
                       arch: ArchConfig = DEFAULT_ARCH,
                       engine: Engine = Engine.TRT) -> EnergyEventCounts:
    """Event totals for one conv/fc layer under `engine`.

    Activation traffic from the central memory scales exactly with the number
    of bit slices streamed per value; fc weight traffic scales with the
    serially loaded weight bits.
    """
    brick = arch.brick_size
    if engine == Engine.DADN or (engine == Engine.STR and layer.kind == LayerKind.FCL):
        serial = False
        march = baseline_arch(arch)
    else:
        serial = True
        march = arch
    act_bits = march.slices(pa) * march.bits_per_cycle if serial else 16
    report = cycles_for(layer, pa, pw, arch, engine)
    cycles = report.total_cycles

    sb = nm_r = nm_w = adder = mult = 0
    if layer.kind == LayerKind.CVL:
        slices = march.slices(pa) if serial else 1
        for item in cvl_schedule(layer, march):
            bricks = item.bricks
            if serial:
                # weights parallel-loaded once per brick position, reused
                # across the whole column wave
                sb += bricks * item.active_f * brick * 16
            else:
                # the baseline re-reads weights every window
                sb += item.active_cols * bricks * item.active_f * brick * 16
            nm_r += item.active_cols * bricks * brick * act_bits
            ops = item.active_cols * item.active_f * bricks * slices
            if serial:
                adder += ops
            else:
                mult += ops * brick
        nm_w += layer.windows * layer.filters * 16
    elif layer.kind == LayerKind.FCL:
        bricks = layer.input_bricks(brick)
        weight_bits = march.slices(pw) * march.bits_per_cycle if engine == Engine.TRT else 16
        sb += layer.filters * layer.in_c * weight_bits
        if engine == Engine.TRT:
            for wave in fcl_waves(layer, march):
                nm_r += bricks * brick * act_bits
                adder += (wave.outputs * wave.np_slices * wave.bricks_per_slice
                          * march.slices(max(pa, pw)))
        else:
            groups = -(-layer.filters // march.chip_filter_slots)
            waves = -(-groups // (march.chip_sips // march.chip_filter_slots))
            nm_r += bricks * brick * 16 * waves
            if engine == Engine.STR:
                adder += layer.filters * bricks * 16  # serial grid at full width
            else:
                mult += layer.filters * bricks * brick
        nm_w += layer.filters * 16
    else:
        raise EnergyError(f"{layer.name}: no event model for {layer.kind}")

    if engine == Engine.DADN:
        lanes = march.chip_filter_slots * brick
        idle = max(0, cycles * lanes - mult)
    else:
        idle = max(0, cycles * march.chip_sips - adder)
    hops = nm_r * march.tiles
    return EnergyEventCounts(sb, nm_r, nm_w, hops, adder, mult, idle, cycles)


def count_events(net: NetworkSpec, profile: PrecisionProfile,
                 arch: ArchConfig = DEFAULT_ARCH,
                 engine: Engine = Engine.TRT) -> EnergyEventCounts:
    """Event totals over every conv/fc layer of a network."""
    profile.validate_for(net)
    total = EnergyEventCounts()
    for layer, entry in zip(net.compute_layers(), profile.entries):
        total = total + count_layer_events(layer, entry.pa, entry.pw, arch, engine)
    return total


def energy(counts: EnergyEventCounts, coeffs: EnergyCoefficients) -> float:
    """Total energy in the coefficient table's abstract units."""
    return (counts.sb_bits_read * coeffs.sb_bits_read
            + counts.nm_bits_read * coeffs.nm_bits_read
            + counts.nm_bits_written * coeffs.nm_bits_written
            + counts.interconnect_bit_hops * coeffs.interconnect_bit_hops
            + counts.sip_adder_activations * coeffs.sip_adder_activations
            + counts.bitparallel_mult_ops * coeffs.bitparallel_mult_ops
            + counts.idle_sip_cycles * coeffs.idle_sip_cycles
            + counts.total_cycles * coeffs.leakage_per_cycle)


def efficiency(counts_a: EnergyEventCounts, counts_b: EnergyEventCounts,
               coeffs: EnergyCoefficients) -> float:
    """Energy efficiency of run `a` relative to run `b`: energy(b) / energy(a)."""
    e_a = energy(counts_a, coeffs)
    if e_a == 0:
        raise EnergyError("zero energy for the reference run")
    return energy(counts_b, coeffs) / e_a
