"""Network and precision-profile descriptions, file formats, and fixture access.

A network is a linear chain of conv / pool / fc layers. Fully-connected layers
are treated as convolutions with unit spatial dimensions whose filter equals
the whole input. Precision profiles assign per-layer activation/weight bit
widths to the conv and fc layers only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

NET_MAGIC = "sipsim-net v1"
PROFILE_MAGIC = "sipsim-profile v1"

BRICK = 16  # elements per brick along the channel dimension


class NetModelError(ValueError):
    """Raised for malformed network/profile files or inconsistent specs."""


class LayerKind(str, Enum):
    CVL = "conv"
    FCL = "fc"
    POOL = "pool"


@dataclass(frozen=True)
class LayerSpec:
    """One layer with its resolved input dimensions.

    For conv: kx*ky*kc kernel, `filters` output channels, kc may be smaller
    than in_c for grouped convolutions (kc must divide in_c evenly).
    For fc: modeled as a 1x1 spatial conv over in_c = flattened inputs.
    For pool: max pooling window kx*ky, filters/kc unused.
    """

    kind: LayerKind
    name: str
    in_x: int
    in_y: int
    in_c: int
    filters: int = 0
    kx: int = 1
    ky: int = 1
    kc: int = 0
    stride: int = 1
    pad: int = 0
    pool_ceil: bool = False
    activation: str = "none"

    def __post_init__(self):
        if min(self.in_x, self.in_y, self.in_c) < 1:
            raise NetModelError(f"{self.name}: input dims must be >= 1")
        if self.stride < 1:
            raise NetModelError(f"{self.name}: stride must be >= 1")
        if self.kind in (LayerKind.CVL, LayerKind.FCL):
            if self.filters < 1:
                raise NetModelError(f"{self.name}: needs at least one filter")
            if self.kc < 1 or self.in_c % self.kc != 0:
                raise NetModelError(
                    f"{self.name}: filter channels {self.kc} must divide input channels {self.in_c}"
                )
            if self.filters % (self.in_c // self.kc) != 0:
                raise NetModelError(
                    f"{self.name}: {self.filters} filters do not split evenly over "
                    f"{self.in_c // self.kc} channel groups"
                )
        if self.kind == LayerKind.FCL and (self.in_x, self.in_y) != (1, 1):
            raise NetModelError(f"{self.name}: fc layers use unit spatial dims")
        if self.activation not in ("none", "relu"):
            raise NetModelError(f"{self.name}: unknown activation {self.activation!r}")
        if self.out_x < 1 or self.out_y < 1:
            raise NetModelError(f"{self.name}: kernel/stride produce empty output")

    @property
    def out_x(self) -> int:
        span = self.in_x + 2 * self.pad - self.kx
        return (-(-span // self.stride) if self.pool_ceil else span // self.stride) + 1

    @property
    def out_y(self) -> int:
        span = self.in_y + 2 * self.pad - self.ky
        return (-(-span // self.stride) if self.pool_ceil else span // self.stride) + 1

    @property
    def out_c(self) -> int:
        return self.filters if self.kind in (LayerKind.CVL, LayerKind.FCL) else self.in_c

    @property
    def windows(self) -> int:
        return self.out_x * self.out_y

    @property
    def kernel_elems(self) -> int:
        return self.kx * self.ky * self.kc

    @property
    def macs(self) -> int:
        if self.kind == LayerKind.POOL:
            return 0
        return self.windows * self.filters * self.kernel_elems

    @property
    def groups(self) -> int:
        return self.in_c // self.kc if self.kc else 1

    def bricks_per_window(self, brick: int = BRICK) -> int:
        """Weight bricks streamed per window position.

        Channel counts below the brick size are densely repacked along the
        flattened kernel (the dispatcher interleaves kernel positions), so a
        3-channel first layer does not pay a 16/3 brick tax.
        """
        if self.kc >= brick:
            return self.kx * self.ky * (-(-self.kc // brick))
        return -(-self.kernel_elems // brick)

    def input_bricks(self, brick: int = BRICK) -> int:
        """Fc input bricks (ceil of inputs / brick)."""
        return -(-self.in_c // brick)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_x: int
    input_y: int
    input_c: int
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise NetModelError(f"{self.name}: network has no layers")

    def compute_layers(self):
        """Conv and fc layers in order (the ones precision profiles index)."""
        return [l for l in self.layers if l.kind != LayerKind.POOL]

    def conv_layers(self):
        return [l for l in self.layers if l.kind == LayerKind.CVL]

    def fc_layers(self):
        return [l for l in self.layers if l.kind == LayerKind.FCL]


class NetworkBuilder:
    """Chains layer shapes so each layer's input dims follow from the previous output."""

    def __init__(self, name: str, input_x: int, input_y: int, input_c: int):
        self.name = name
        self.input = (input_x, input_y, input_c)
        self._x, self._y, self._c = input_x, input_y, input_c
        self._layers = []
        self._flattened = False

    def _advance(self, layer: LayerSpec) -> LayerSpec:
        self._layers.append(layer)
        self._x, self._y, self._c = layer.out_x, layer.out_y, layer.out_c
        return layer

    def conv(self, name, filters, kernel, stride=1, pad=0, channels=None, activation="relu"):
        if self._flattened:
            raise NetModelError(f"{name}: conv after fc is not supported")
        kx, ky = kernel if isinstance(kernel, tuple) else (kernel, kernel)
        return self._advance(LayerSpec(
            LayerKind.CVL, name, self._x, self._y, self._c,
            filters=filters, kx=kx, ky=ky, kc=channels or self._c,
            stride=stride, pad=pad, activation=activation,
        ))

    def pool(self, name, kernel, stride, ceil_mode=False):
        if self._flattened:
            raise NetModelError(f"{name}: pool after fc is not supported")
        kx, ky = kernel if isinstance(kernel, tuple) else (kernel, kernel)
        return self._advance(LayerSpec(
            LayerKind.POOL, name, self._x, self._y, self._c,
            kx=kx, ky=ky, stride=stride, pool_ceil=ceil_mode,
        ))

    def fc(self, name, outputs, activation="relu"):
        inputs = self._x * self._y * self._c
        self._flattened = True
        self._x = self._y = 1
        self._c = inputs
        return self._advance(LayerSpec(
            LayerKind.FCL, name, 1, 1, inputs,
            filters=outputs, kx=1, ky=1, kc=inputs, activation=activation,
        ))

    def build(self) -> NetworkSpec:
        return NetworkSpec(self.name, *self.input, tuple(self._layers))


@dataclass(frozen=True)
class LayerPrecision:
    """Activation and weight bit widths for one conv/fc layer."""

    pa: int
    pw: int

    def __post_init__(self):
        if not (1 <= self.pa <= 16 and 1 <= self.pw <= 16):
            raise NetModelError(f"precisions must be in 1..16, got Pa={self.pa} Pw={self.pw}")


@dataclass(frozen=True)
class PrecisionProfile:
    """Per-layer precisions for every conv/fc layer of a network, in order.

    Conv entries keep weights at the 16-bit baseline; fc entries use a common
    activation/weight width, reflecting that fc execution time is bound by
    the larger of the two.
    """

    network: str
    label: str
    entries: tuple

    def validate_for(self, net: NetworkSpec):
        compute = net.compute_layers()
        if len(self.entries) != len(compute):
            raise NetModelError(
                f"profile {self.label!r} has {len(self.entries)} entries, "
                f"network {net.name!r} has {len(compute)} conv/fc layers"
            )
        for layer, entry in zip(compute, self.entries):
            if layer.kind == LayerKind.FCL and entry.pa != entry.pw:
                raise NetModelError(f"{layer.name}: fc entries need Pa == Pw")
            if layer.kind == LayerKind.CVL and entry.pw != 16:
                raise NetModelError(f"{layer.name}: conv entries keep Pw = 16")

    def entry_for(self, net: NetworkSpec, layer: LayerSpec) -> LayerPrecision:
        for cand, entry in zip(net.compute_layers(), self.entries):
            if cand is layer or cand == layer:
                return entry
        raise NetModelError(f"no profile entry for layer {layer.name!r}")


def uniform_profile(net: NetworkSpec, bits: int = 16, label: str = "uniform") -> PrecisionProfile:
    entries = tuple(
        LayerPrecision(bits, 16 if l.kind == LayerKind.CVL else bits)
        for l in net.compute_layers()
    )
    return PrecisionProfile(net.name, label, entries)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _parse_kv(tokens, lineno, path):
    kv = {}
    for tok in tokens:
        if "=" not in tok:
            raise NetModelError(f"{path}:{lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v
    return kv


def _get_int(kv, key, lineno, path, default=None):
    if key not in kv:
        if default is not None:
            return default
        raise NetModelError(f"{path}:{lineno}: missing field {key!r}")
    try:
        return int(kv[key])
    except ValueError:
        raise NetModelError(f"{path}:{lineno}: field {key!r} is not an integer: {kv[key]!r}")


def load_network(path) -> NetworkSpec:
    """Parse a .net file into a validated NetworkSpec."""
    path = Path(path)
    lines = path.read_text().splitlines()
    content = [(i + 1, l.strip()) for i, l in enumerate(lines)
               if l.strip() and not l.strip().startswith("#")]
    if not content:
        raise NetModelError(f"{path}: empty network file")
    lineno, header = content[0]
    if header != NET_MAGIC:
        raise NetModelError(f"{path}:{lineno}: expected header {NET_MAGIC!r}, got {header!r}")

    name = None
    builder = None
    for lineno, line in content[1:]:
        tokens = line.split()
        tag = tokens[0]
        if tag == "name":
            name = " ".join(tokens[1:])
        elif tag == "input":
            if name is None:
                raise NetModelError(f"{path}:{lineno}: 'name' must come before 'input'")
            if len(tokens) != 4:
                raise NetModelError(f"{path}:{lineno}: input takes exactly X Y C")
            builder = NetworkBuilder(name, int(tokens[1]), int(tokens[2]), int(tokens[3]))
        elif tag in ("conv", "pool", "fc"):
            if builder is None:
                raise NetModelError(f"{path}:{lineno}: layer before 'input' line")
            kv = _parse_kv(tokens[1:], lineno, path)
            lname = kv.get("name", f"{tag}{len(builder._layers)}")
            try:
                if tag == "conv":
                    k = kv.get("kernel", "")
                    kx, ky = (int(p) for p in k.split("x")) if "x" in k else (int(k), int(k))
                    builder.conv(
                        lname, _get_int(kv, "filters", lineno, path), (kx, ky),
                        stride=_get_int(kv, "stride", lineno, path, 1),
                        pad=_get_int(kv, "pad", lineno, path, 0),
                        channels=_get_int(kv, "channels", lineno, path, 0) or None,
                        activation=kv.get("act", "relu"),
                    )
                elif tag == "pool":
                    k = kv.get("kernel", "")
                    kx, ky = (int(p) for p in k.split("x")) if "x" in k else (int(k), int(k))
                    builder.pool(
                        lname, (kx, ky),
                        stride=_get_int(kv, "stride", lineno, path, 1),
                        ceil_mode=kv.get("round", "floor") == "ceil",
                    )
                else:
                    builder.fc(
                        lname, _get_int(kv, "outputs", lineno, path),
                        activation=kv.get("act", "relu"),
                    )
            except NetModelError as e:
                raise NetModelError(f"{path}:{lineno}: {e}") from None
            except ValueError as e:
                raise NetModelError(f"{path}:{lineno}: {e}") from None
        else:
            raise NetModelError(f"{path}:{lineno}: unknown directive {tag!r}")
    if builder is None:
        raise NetModelError(f"{path}: no 'input' line")
    return builder.build()


def save_network(net: NetworkSpec, path):
    out = [NET_MAGIC, f"name {net.name}", f"input {net.input_x} {net.input_y} {net.input_c}"]
    for l in net.layers:
        if l.kind == LayerKind.CVL:
            parts = [f"conv name={l.name}", f"filters={l.filters}", f"kernel={l.kx}x{l.ky}"]
            if l.kc != l.in_c:
                parts.append(f"channels={l.kc}")
            parts += [f"stride={l.stride}", f"pad={l.pad}", f"act={l.activation}"]
        elif l.kind == LayerKind.POOL:
            parts = [f"pool name={l.name}", f"kernel={l.kx}x{l.ky}", f"stride={l.stride}"]
            if l.pool_ceil:
                parts.append("round=ceil")
        else:
            parts = [f"fc name={l.name}", f"outputs={l.filters}", f"act={l.activation}"]
        out.append(" ".join(parts))
    Path(path).write_text("\n".join(out) + "\n")


def load_profile(path, net: NetworkSpec) -> PrecisionProfile:
    """Parse a .profile file and validate it against `net`."""
    path = Path(path)
    lines = path.read_text().splitlines()
    content = [(i + 1, l.strip()) for i, l in enumerate(lines)
               if l.strip() and not l.strip().startswith("#")]
    if not content:
        raise NetModelError(f"{path}: empty profile file")
    lineno, header = content[0]
    if header != PROFILE_MAGIC:
        raise NetModelError(f"{path}:{lineno}: expected header {PROFILE_MAGIC!r}, got {header!r}")

    network = label = None
    conv_bits, fc_bits = None, None
    for lineno, line in content[1:]:
        tokens = line.split()
        tag = tokens[0]
        if tag == "network":
            network = " ".join(tokens[1:])
        elif tag == "label":
            label = " ".join(tokens[1:])
        elif tag in ("conv", "fc"):
            try:
                bits = [int(t) for t in tokens[1:]]
            except ValueError:
                raise NetModelError(f"{path}:{lineno}: non-integer precision value")
            bad = [b for b in bits if not (1 <= b <= 16)]
            if bad:
                raise NetModelError(f"{path}:{lineno}: precision out of range 1..16: {bad}")
            if tag == "conv":
                conv_bits = bits
            else:
                fc_bits = bits
        else:
            raise NetModelError(f"{path}:{lineno}: unknown directive {tag!r}")

    if network != net.name:
        raise NetModelError(f"{path}: profile is for {network!r}, not {net.name!r}")
    conv_bits = conv_bits or []
    fc_bits = fc_bits or []
    if len(conv_bits) != len(net.conv_layers()):
        raise NetModelError(
            f"{path}: {len(conv_bits)} conv entries for {len(net.conv_layers())} conv layers"
        )
    if len(fc_bits) != len(net.fc_layers()):
        raise NetModelError(
            f"{path}: {len(fc_bits)} fc entries for {len(net.fc_layers())} fc layers"
        )
    conv_iter, fc_iter = iter(conv_bits), iter(fc_bits)
    entries = []
    for layer in net.compute_layers():
        if layer.kind == LayerKind.CVL:
            entries.append(LayerPrecision(next(conv_iter), 16))
        else:
            b = next(fc_iter)
            entries.append(LayerPrecision(b, b))
    profile = PrecisionProfile(network, label or "custom", tuple(entries))
    profile.validate_for(net)
    return profile


def save_profile(profile: PrecisionProfile, net: NetworkSpec, path):
    conv_bits, fc_bits = [], []
    for layer, entry in zip(net.compute_layers(), profile.entries):
        (conv_bits if layer.kind == LayerKind.CVL else fc_bits).append(entry.pa)
    out = [PROFILE_MAGIC, f"network {profile.network}", f"label {profile.label}"]
    if conv_bits:
        out.append("conv " + " ".join(str(b) for b in conv_bits))
    if fc_bits:
        out.append("fc " + " ".join(str(b) for b in fc_bits))
    Path(path).write_text("\n".join(out) + "\n")


def validate_brick_alignment(net: NetworkSpec, brick: int = BRICK):
    """Warn about layers whose channel counts leave brick lanes idle."""
    warnings = []
    for layer in net.layers:
        if layer.kind == LayerKind.POOL:
            continue
        c = layer.kc
        if c % brick != 0:
            idle = brick - (c % brick) if c > brick else brick - c
            if c < brick:
                warnings.append(
                    f"{layer.name}: {c} input channels fill {c}/{brick} brick lanes "
                    f"({idle} idle unless repacked)"
                )
            else:
                warnings.append(
                    f"{layer.name}: {c} channels are not a multiple of the brick size "
                    f"{brick}; final brick has {idle} idle lanes"
                )
    return warnings


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

FIXTURE_NETWORKS = ("alexnet", "vgg_s", "vgg_m", "vgg_19")
FIXTURE_LABELS = ("100", "99")


def fixture_dir() -> Path:
    """Fixture directory, overridable through SIPSIM_FIXTURES."""
    override = os.environ.get("SIPSIM_FIXTURES")
    if override:
        return Path(override)
    return Path(__file__).parent / "fixtures"


def fixture_network(name: str) -> NetworkSpec:
    if name not in FIXTURE_NETWORKS:
        raise NetModelError(f"unknown fixture network {name!r}; have {FIXTURE_NETWORKS}")
    return load_network(fixture_dir() / f"{name}.net")


def fixture_profile(name: str, label: str) -> PrecisionProfile:
    label = label.rstrip("%")
    if label not in FIXTURE_LABELS:
        raise NetModelError(f"unknown profile label {label!r}; have {FIXTURE_LABELS}")
    net = fixture_network(name)
    return load_profile(fixture_dir() / f"{name}-{label}.profile", net)
