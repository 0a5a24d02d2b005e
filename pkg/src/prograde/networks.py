"""Generator and discriminator construction, growth and parameter plumbing."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .autodiff import functional as F
from .layers import (
    BatchNorm,
    EqualizedConv2d,
    FadeState,
    LayerNorm,
    fade_blend,
    minibatch_stddev,
    multiplicative_noise,
    pixelnorm,
)

VARIANTS = ("full", "reduced", "baseline-gulrajani")

# Conv 3x3 feature maps per resolution for the full-resolution networks.
FULL_CHANNELS = {4: 512, 8: 512, 16: 512, 32: 512, 64: 256, 128: 128, 256: 64, 512: 32, 1024: 16}

_ROLE_SEED = {"generator": 0, "discriminator": 1}


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def reduced_channels(resolution: int) -> int:
    """Lower-capacity schedule: halve at 16x16, quarter beyond."""
    full = FULL_CHANNELS[resolution]
    if resolution < 16:
        return full
    if resolution == 16:
        return full // 2
    return full // 4


@dataclass(frozen=True)
class NetworkSpec:
    resolution: int = 4
    variant: str = "full"
    latent_size: int = 512
    max_resolution: int = 64
    channel_divisor: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("resolution", "max_resolution"):
            r = getattr(self, name)
            if not (_is_pow2(r) and 4 <= r <= 1024):
                raise ValueError(f"{name} must be a power of two in [4, 1024], got {r}")
        if self.resolution > self.max_resolution:
            raise ValueError(f"resolution {self.resolution} exceeds max_resolution {self.max_resolution}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.latent_size < 1 or self.channel_divisor < 1:
            raise ValueError("latent_size and channel_divisor must be positive")

    def channels(self, resolution: int) -> int:
        base = FULL_CHANNELS[resolution] if self.variant == "full" else reduced_channels(resolution)
        return max(1, base // self.channel_divisor)

    @property
    def resolutions(self) -> list[int]:
        return [4 << i for i in range(int(math.log2(self.resolution)) - 1)]

    @property
    def equalized(self) -> bool:
        return self.variant != "baseline-gulrajani"


class Network:
    """Ordered named layers plus the shared parameter plumbing."""

    role = ""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layers: dict[str, object] = {}
        self.fade: FadeState | None = None
        self.training = True

    @property
    def resolution(self) -> int:
        return self.spec.resolution

    def _rng(self, resolution: int) -> np.random.Generator:
        return np.random.default_rng([self.spec.seed, _ROLE_SEED[self.role], resolution])

    def _conv(self, name, cin, cout, k, pad, rng):
        self.layers[name] = EqualizedConv2d(cin, cout, k, pad, rng, equalized=self.spec.equalized)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, t in layer.parameters().items():
                out[f"{lname}.{pname}"] = t
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            if isinstance(layer, BatchNorm):
                out[f"{lname}.running_mean"] = layer.running_mean
                out[f"{lname}.running_var"] = layer.running_var
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data for k, v in self.parameters().items()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.parameters()
        buffers = self.buffers()
        if strict:
            missing = (set(params) | set(buffers)) - set(state)
            if missing:
                raise KeyError(f"missing entries: {sorted(missing)}")
        for name, t in params.items():
            if name in state:
                value = np.asarray(state[name], dtype=t.dtype)
                if value.shape != t.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {t.shape}")
                t.data = value.copy()
        for name in buffers:
            if name in state:
                lname, attr = name.rsplit(".", 1)
                setattr(self.layers[lname], attr, np.array(state[name], dtype=params[f"{lname}.gain"].dtype))

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def finish_fade(self) -> None:
        """Drop the previous-resolution head once the fade has completed."""
        if self.fade is None:
            return
        self.layers.pop(self._head_name(self.resolution // 2), None)
        self.fade = None

    def _head_name(self, resolution: int) -> str:
        raise NotImplementedError

    def _add_block(self, resolution: int) -> None:
        raise NotImplementedError

    def _add_head(self, resolution: int) -> None:
        raise NotImplementedError

    def _build(self):
        for r in self.spec.resolutions:
            self._add_block(r)
        self._add_head(self.resolution)

    def __call__(self, x: Tensor, **kw) -> Tensor:
        return self.forward(x, **kw)


class Generator(Network):
    role = "generator"

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        self._build()

    def _head_name(self, resolution):
        return f"rgb{resolution}"

    def _add_block(self, r):
        s, rng = self.spec, self._rng(r)
        if r == 4:
            self._conv("b4.conv0", s.latent_size, s.channels(4), 4, 3, rng)
            self._conv("b4.conv1", s.channels(4), s.channels(4), 3, 1, rng)
        else:
            self._conv(f"b{r}.conv0", s.channels(r // 2), s.channels(r), 3, 1, rng)
            self._conv(f"b{r}.conv1", s.channels(r), s.channels(r), 3, 1, rng)
        if not s.equalized:
            self.layers[f"b{r}.norm0"] = BatchNorm(s.channels(r))
            self.layers[f"b{r}.norm1"] = BatchNorm(s.channels(r))

    def _add_head(self, r):
        self._conv(f"rgb{r}", self.spec.channels(r), 3, 1, 0, self._rng(r))

    def _act(self, h: Tensor, name: str) -> Tensor:
        if self.spec.equalized:
            return pixelnorm(F.leaky_relu(h, 0.2))
        return F.relu(self.layers[name](h, training=self.training))

    def _block(self, h: Tensor, r: int) -> Tensor:
        if r != 4:
            h = F.upsample2x(h)
        h = self._act(self.layers[f"b{r}.conv0"](h), f"b{r}.norm0")
        return self._act(self.layers[f"b{r}.conv1"](h), f"b{r}.norm1")

    def _to_rgb(self, h: Tensor, r: int) -> Tensor:
        out = self.layers[f"rgb{r}"](h)
        return out if self.spec.equalized else F.tanh(out)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.spec.latent_size:
            raise ValueError(f"expected latents (B, {self.spec.latent_size}), got {z.shape}")
        h = F.reshape(z, (z.shape[0], z.shape[1], 1, 1))
        prev = None
        for r in self.spec.resolutions:
            if r == self.resolution and self.fade is not None:
                prev = h
            h = self._block(h, r)
        out = self._to_rgb(h, self.resolution)
        if self.fade is not None:
            old = F.upsample2x(self._to_rgb(prev, self.resolution // 2))
            out = fade_blend(old, out, self.fade)
        return out


class Discriminator(Network):
    role = "discriminator"

    def __init__(self, spec: NetworkSpec, mbstd: bool | None = None):
        super().__init__(spec)
        self.mbstd = spec.equalized if mbstd is None else mbstd
        self._build()

    def _head_name(self, resolution):
        return f"from{resolution}"

    def _add_block(self, r):
        s, rng = self.spec, self._rng(r)
        c = s.channels(r)
        if r == 4:
            self._conv("b4.conv", c + (1 if self.mbstd else 0), c, 3, 1, rng)
            self._conv("b4.dense", c, c, 4, 0, rng)
            self._conv("b4.fc", c, 1, 1, 0, rng)
            if not s.equalized:
                self.layers["b4.norm0"] = LayerNorm(c)
                self.layers["b4.norm1"] = LayerNorm(c)
        else:
            self._conv(f"b{r}.conv0", c, c, 3, 1, rng)
            self._conv(f"b{r}.conv1", c, s.channels(r // 2), 3, 1, rng)
            if not s.equalized:
                self.layers[f"b{r}.norm0"] = LayerNorm(c)
                self.layers[f"b{r}.norm1"] = LayerNorm(s.channels(r // 2))

    def _add_head(self, r):
        self._conv(f"from{r}", 3, self.spec.channels(r), 1, 0, self._rng(r))

    def _conv_act(self, h, conv, norm, noise, rng):
        h = self.layers[conv](multiplicative_noise(h, noise, rng))
        if not self.spec.equalized:
            h = self.layers[norm](h)
        return F.leaky_relu(h, 0.2)

    def _block(self, h, r, noise, rng):
        if r == 4:
            if self.mbstd:
                h = minibatch_stddev(h)
            h = self._conv_act(h, "b4.conv", "b4.norm0", noise, rng)
            h = self._conv_act(h, "b4.dense", "b4.norm1", noise, rng)
            return self.layers["b4.fc"](h)
        h = self._conv_act(h, f"b{r}.conv0", f"b{r}.norm0", noise, rng)
        h = self._conv_act(h, f"b{r}.conv1", f"b{r}.norm1", noise, rng)
        return F.avgpool2x(h)

    def _from_rgb(self, x, r):
        return F.leaky_relu(self.layers[f"from{r}"](x), 0.2)

    def forward(self, x: Tensor, noise: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
        r0 = self.resolution
        if x.ndim != 4 or x.shape[1:] != (3, r0, r0):
            raise ValueError(f"expected images (B, 3, {r0}, {r0}), got {x.shape}")
        h = self._from_rgb(x, r0)
        for r in reversed(self.spec.resolutions):
            h = self._block(h, r, noise, rng)
            if r == r0 and self.fade is not None:
                old = self._from_rgb(F.avgpool2x(x), r0 // 2)
                h = fade_blend(old, h, self.fade)
        return F.reshape(h, (x.shape[0], 1))


def build_generator(spec: NetworkSpec) -> Generator:
    return Generator(spec)


def build_discriminator(spec: NetworkSpec) -> Discriminator:
    return Discriminator(spec)


def build_baseline(spec: NetworkSpec) -> tuple[Generator, Discriminator]:
    """Batch-norm/layer-norm baseline with He init at construction."""
    if spec.variant != "baseline-gulrajani":
        spec = replace(spec, variant="baseline-gulrajani")
    return Generator(spec), Discriminator(spec, mbstd=False)


def grow(network: Network, fade: FadeState | float = 0.0) -> Network:
    """Next-resolution network; existing parameters are copied unchanged.

    The previous head stays attached and is blended in with ``fade`` until
    :meth:`Network.finish_fade` is called.
    """
    r = network.resolution
    if r >= network.spec.max_resolution:
        raise ValueError(f"network already at max resolution {network.spec.max_resolution}")
    if network.fade is not None:
        raise ValueError("finish the current fade before growing again")
    grown = copy.deepcopy(network)
    grown.spec = replace(network.spec, resolution=2 * r)
    grown._add_block(2 * r)
    grown._add_head(2 * r)
    grown.fade = fade if isinstance(fade, FadeState) else FadeState(float(fade))
    return grown


def build_network(role: str, spec: NetworkSpec) -> Network:
    if role == "generator":
        return Generator(spec)
    if role == "discriminator":
        return Discriminator(spec)
    raise ValueError(f"unknown role {role!r}")


def restore_network(role: str, spec: NetworkSpec, fade: float | None = None) -> Network:
    """Empty-shell network matching a saved one, including a mid-fade old head."""
    net = build_network(role, spec)
    if fade is not None:
        if spec.resolution == 4:
            raise ValueError("a 4x4 network cannot be fading")
        net._add_head(spec.resolution // 2)
        net.fade = FadeState(float(fade))
    return net


def set_trainable(network: Network, flag: bool) -> None:
    """Toggle ``requires_grad`` on every parameter (freezes a network during the other's update)."""
    for p in network.parameters().values():
        p.requires_grad = flag
