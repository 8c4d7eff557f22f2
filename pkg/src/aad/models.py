"""Reconstruction model ladder for anomaly scoring.

Four variants share one interface: a dense autoencoder over stacked
context vectors, a convolutional autoencoder and its variational twin
over mel-frame windows, and a hybrid whose encoder is a stack of dilated
causal convolutions feeding per-step variational heads. Decoders are
non-causal; scoring always sees complete windows.

Models carry feature mean/std buffers (set during training) and do all
internal arithmetic in normalized space; ``reconstruct_features`` maps
back so anomaly scores live in feature space.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, ShapeError, SpecError, SpecMismatchError, TooShortError
from .features import FeatureMatrix, stack_frames
from .tensor import Tensor, backward, conv1d_causal, dense, downsample, upsample

CHECKPOINT_MAGIC = b"AADM"
CHECKPOINT_VERSION = 1

MODEL_KINDS = ("dense_ae", "cae", "cvae", "tcn_cvae")

_DTYPE = np.float32


@dataclass
class ModelSpec:
    """Architecture configuration for one model of the ladder."""

    kind: str
    n_mels: int = 128
    context_frames: int = 5        # dense_ae input = n_mels * context_frames
    window_frames: int = 32        # conv models consume (n_mels, T) windows
    window_hop: int = 16
    hidden: tuple = (128, 128, 128, 128)
    bottleneck: int = 8            # dense_ae latent width
    conv_channels: tuple = (32, 64, 128)
    latent_dim: int = 40           # cae/cvae bottleneck; tcn per-step channels
    tcn_layers: int = 6
    kernel: int = 3
    tcn_channels: int = 64
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.conv_channels = tuple(self.conv_channels)
        if self.kind not in MODEL_KINDS:
            raise SpecError(f"unknown model kind {self.kind!r}")
        if self.n_mels < 1 or self.latent_dim < 1:
            raise SpecError("n_mels and latent_dim must be >= 1")
        if self.kind == "dense_ae":
            if self.context_frames < 1 or self.bottleneck < 1:
                raise SpecError("dense_ae needs context_frames, bottleneck >= 1")
        if self.kind in ("cae", "cvae"):
            if not self.conv_channels:
                raise SpecError("conv models need at least one channel stage")
            down = 2 ** len(self.conv_channels)
            if self.window_frames % down != 0:
                raise SpecError(
                    f"window_frames={self.window_frames} must be divisible by "
                    f"{down} for {len(self.conv_channels)} stride-2 stages"
                )
        if self.kind == "tcn_cvae":
            if self.tcn_layers < 1 or self.kernel < 1:
                raise SpecError("tcn_cvae needs tcn_layers, kernel >= 1")
        if self.window_hop < 1:
            raise SpecError("window_hop must be >= 1")

    @property
    def dilations(self) -> tuple:
        return tuple(2 ** i for i in range(self.tcn_layers))

    @property
    def input_dims(self):
        if self.kind == "dense_ae":
            return self.n_mels * self.context_frames
        return (self.n_mels, self.window_frames)

    @property
    def variational(self) -> bool:
        return self.kind in ("cvae", "tcn_cvae")


def default_spec(kind: str, n_mels: int = 128, seed: int = 0, **overrides) -> ModelSpec:
    """Spec with per-kind defaults at the given mel resolution."""
    base: dict = dict(kind=kind, n_mels=n_mels, seed=seed)
    if kind == "tcn_cvae":
        base.update(latent_dim=16)
    base.update(overrides)
    return ModelSpec(**base)


@dataclass
class LatentDistribution:
    """Diagonal-Gaussian posterior parameters (log_var is log sigma^2)."""

    mu: Tensor
    log_var: Tensor


class ForwardResult(NamedTuple):
    recon: Tensor
    latent: LatentDistribution | None


def reparameterize(ld: LatentDistribution, noise: np.ndarray) -> Tensor:
    """z = mu + exp(log_var / 2) * noise, differentiable in mu and log_var."""
    if tuple(noise.shape) != ld.mu.shape:
        raise ShapeError(f"noise shape {noise.shape} != mu shape {ld.mu.shape}")
    sigma = (ld.log_var * 0.5).exp()
    return ld.mu + sigma * Tensor(np.asarray(noise, dtype=ld.mu.dtype.type))


class VaeLoss(NamedTuple):
    recon: Tensor
    kl: Tensor
    total: Tensor


def vae_loss(x: Tensor, x_hat: Tensor, ld: LatentDistribution | None) -> VaeLoss:
    """Reconstruction MSE plus the diagonal-Gaussian KL regularizer.

    recon = 1/2 sum (x - x_hat)^2 and kl = -1/2 sum (1 + log_var - mu^2
    - sigma^2), each averaged over the batch (leading axis when 2-D+).
    With ld=None the KL term is zero (plain autoencoder loss).
    """
    if x.shape != x_hat.shape:
        raise ShapeError(f"vae_loss: shapes {x.shape} and {x_hat.shape} differ")
    batch = x.shape[0] if x.data.ndim > 1 else 1
    diff = x - x_hat
    recon = (diff * diff).sum() * (0.5 / batch)
    if ld is None:
        kl = Tensor(np.asarray(0.0, dtype=x.dtype))
    else:
        inner = (ld.log_var + 1.0) - ld.mu * ld.mu - ld.log_var.exp()
        kl = inner.sum() * (-0.5 / batch)
    return VaeLoss(recon=recon, kl=kl, total=recon + kl)


class ReceptiveField(NamedTuple):
    estimate: int  # 2^l * (k - 1)
    exact: int     # 1 + (k - 1) * (2^l - 1) for dilations 1..2^(l-1)


def receptive_field(layers: int, kernel: int) -> ReceptiveField:
    """History coverage of a plain dilated causal stack, both formulas."""
    if layers < 1 or kernel < 1:
        raise SpecError("layers and kernel must be >= 1")
    return ReceptiveField(
        estimate=2 ** layers * (kernel - 1),
        exact=1 + (kernel - 1) * (2 ** layers - 1),
    )


def empirical_receptive_field(layers: int, kernel: int) -> int:
    """Measure the receptive field of a plain dilated stack by gradient mask.

    All-ones kernels, no nonlinearity: the count of input positions with
    nonzero gradient at the last output step is the exact receptive field.
    """
    rf = receptive_field(layers, kernel)
    t = rf.exact + 2 ** layers  # margin so the field fits in the input
    x = Tensor(np.zeros((1, 1, t)), requires_grad=True)
    h = x
    for d in (2 ** i for i in range(layers)):
        h = conv1d_causal(h, Tensor(np.ones((1, 1, kernel))), dilation=d)
    mask = np.zeros((1, 1, t))
    mask[0, 0, -1] = 1.0
    backward((h * Tensor(mask)).sum())
    nonzero = np.nonzero(x.grad[0, 0])[0]
    return int(t - nonzero[0])


def _he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape).astype(_DTYPE)


class Model:
    """Shared machinery: parameter registry and normalization buffers."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.params: list[Tensor] = []
        self.param_names: list[str] = []
        self._rng = np.random.default_rng(spec.seed)
        dims = spec.n_mels if spec.kind != "dense_ae" else spec.n_mels * spec.context_frames
        self.feature_mean = np.zeros(dims, dtype=_DTYPE)
        self.feature_std = np.ones(dims, dtype=_DTYPE)

    # -- parameter management --

    def _param(self, name: str, shape: tuple, fan_in: int, zero: bool = False) -> Tensor:
        data = np.zeros(shape, dtype=_DTYPE) if zero else _he_uniform(self._rng, shape, fan_in)
        t = Tensor(data, requires_grad=True)
        self.params.append(t)
        self.param_names.append(name)
        return t

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params)

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.feature_mean = np.asarray(mean, dtype=_DTYPE)
        self.feature_std = np.maximum(np.asarray(std, dtype=_DTYPE), 1e-3)

    def _norm(self, x: np.ndarray) -> np.ndarray:
        if not self.spec.normalize:
            return np.asarray(x, dtype=_DTYPE)
        if x.ndim == 2:  # (rows, dims)
            return ((x - self.feature_mean) / self.feature_std).astype(_DTYPE)
        return ((x - self.feature_mean[None, :, None])
                / self.feature_std[None, :, None]).astype(_DTYPE)

    def _denorm(self, x: np.ndarray) -> np.ndarray:
        if not self.spec.normalize:
            return x
        if x.ndim == 2:
            return x * self.feature_std + self.feature_mean
        return x * self.feature_std[None, :, None] + self.feature_mean[None, :, None]

    # -- feature plumbing --

    def _frame_windows(self, fm: FeatureMatrix) -> np.ndarray:
        """Slice (frames, mels) into (windows, mels, T), covering the tail."""
        t_win, hop = self.spec.window_frames, self.spec.window_hop
        if fm.frames < t_win:
            raise TooShortError(f"{fm.frames} frames < window_frames {t_win}")
        starts = list(range(0, fm.frames - t_win + 1, hop))
        if starts[-1] != fm.frames - t_win:
            starts.append(fm.frames - t_win)
        return np.stack([fm.data[s:s + t_win].T for s in starts]).astype(_DTYPE)

    def inputs_from_features(self, fm: FeatureMatrix) -> np.ndarray:
        """Raw-space training samples for this model kind."""
        if self.spec.kind == "dense_ae":
            return stack_frames(fm, self.spec.context_frames).data.astype(_DTYPE)
        return self._frame_windows(fm)

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> ForwardResult:
        raise NotImplementedError

    def reconstruct_features(self, fm: FeatureMatrix) -> tuple[np.ndarray, np.ndarray]:
        """(observed, reconstructed) frame vectors in feature space.

        Rows are context vectors (dense_ae) or window frames (conv kinds);
        variational models reconstruct from the posterior mean.
        """
        samples = self.inputs_from_features(fm)
        out = self.forward(Tensor(self._norm(samples))).recon.data
        xr = self._denorm(out)
        if samples.ndim == 3:  # (windows, mels, T) -> frame rows
            xa = samples.transpose(0, 2, 1).reshape(-1, self.spec.n_mels)
            xr = xr.transpose(0, 2, 1).reshape(-1, self.spec.n_mels)
            return xa, xr
        return samples, xr

    def encode(self, fm: FeatureMatrix) -> np.ndarray:
        """One latent vector per clip (posterior mean for variational kinds)."""
        samples = self.inputs_from_features(fm)
        codes = self._encode_batch(Tensor(self._norm(samples)))
        if codes.ndim == 3:  # (windows, latent, T): average over time
            codes = codes.mean(axis=2)
        return codes.mean(axis=0)

    def _encode_batch(self, x: Tensor) -> np.ndarray:
        raise NotImplementedError


class DenseAutoencoder(Model):
    """Mirrored fully-connected autoencoder over stacked context vectors."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        d = spec.n_mels * spec.context_frames
        widths = [d, *spec.hidden, spec.bottleneck, *reversed(spec.hidden), d]
        self.layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = self._param(f"w{i}", (a, b), fan_in=a)
            bias = self._param(f"b{i}", (b,), fan_in=a, zero=True)
            self.layers.append((w, bias))
        self._bottleneck_index = len(spec.hidden)  # layer whose output is the code

    def _run(self, x: Tensor, stop_at_bottleneck: bool = False):
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = dense(h, w, b)
            if i == self._bottleneck_index and stop_at_bottleneck:
                return h
            if i != last and i != self._bottleneck_index:
                h = h.relu()
        return h

    def forward(self, x, rng=None):
        return ForwardResult(recon=self._run(x), latent=None)

    def _encode_batch(self, x):
        return self._run(x, stop_at_bottleneck=True).data


class ConvAutoencoder(Model):
    """Convolutional AE over (mels, T) windows; optional variational heads.

    Encoder stages are centered k=3 convolutions with a stride-2 analog
    (keep every other frame); the decoder mirrors with repeat-upsampling.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        chans = [spec.n_mels, *spec.conv_channels]
        k = 3
        self.enc = []
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
            w = self._param(f"enc{i}_w", (cout, cin, k), fan_in=cin * k)
            b = self._param(f"enc{i}_b", (cout,), fan_in=cin * k, zero=True)
            self.enc.append((w, b))
        self.t_inner = spec.window_frames // 2 ** len(spec.conv_channels)
        flat = spec.conv_channels[-1] * self.t_inner
        if spec.variational:
            self.w_mu = self._param("mu_w", (flat, spec.latent_dim), fan_in=flat)
            self.b_mu = self._param("mu_b", (spec.latent_dim,), fan_in=flat, zero=True)
            self.w_lv = self._param("lv_w", (flat, spec.latent_dim), fan_in=flat)
            self.b_lv = self._param("lv_b", (spec.latent_dim,), fan_in=flat, zero=True)
        else:
            self.w_mu = self._param("code_w", (flat, spec.latent_dim), fan_in=flat)
            self.b_mu = self._param("code_b", (spec.latent_dim,), fan_in=flat, zero=True)
        self.w_up = self._param("up_w", (spec.latent_dim, flat), fan_in=spec.latent_dim)
        self.b_up = self._param("up_b", (flat,), fan_in=spec.latent_dim, zero=True)
        self.dec = []
        rev = [*reversed(spec.conv_channels), spec.n_mels]
        for i, (cin, cout) in enumerate(zip(rev[:-1], rev[1:])):
            w = self._param(f"dec{i}_w", (cout, cin, k), fan_in=cin * k)
            b = self._param(f"dec{i}_b", (cout,), fan_in=cin * k, zero=True)
            self.dec.append((w, b))

    def _encode_flat(self, x: Tensor) -> Tensor:
        h = x
        for w, b in self.enc:
            h = conv1d_causal(h, w, bias=b, causal=False).relu()
            h = downsample(h, 2)
        return h.reshape((h.shape[0], -1))

    def _decode(self, z: Tensor) -> Tensor:
        h = dense(z, self.w_up, self.b_up).relu()
        h = h.reshape((z.shape[0], self.spec.conv_channels[-1], self.t_inner))
        last = len(self.dec) - 1
        for i, (w, b) in enumerate(self.dec):
            h = upsample(h, 2)
            h = conv1d_causal(h, w, bias=b, causal=False)
            if i != last:
                h = h.relu()
        return h

    def forward(self, x, rng=None):
        flat = self._encode_flat(x)
        if not self.spec.variational:
            return ForwardResult(recon=self._decode(dense(flat, self.w_mu, self.b_mu)),
                                 latent=None)
        ld = LatentDistribution(mu=dense(flat, self.w_mu, self.b_mu),
                                log_var=dense(flat, self.w_lv, self.b_lv))
        if rng is None:
            z = ld.mu
        else:
            z = reparameterize(ld, rng.standard_normal(ld.mu.shape))
        return ForwardResult(recon=self._decode(z), latent=ld)

    def _encode_batch(self, x):
        return dense(self._encode_flat(x), self.w_mu, self.b_mu).data


class TcnVae(Model):
    """Dilated-causal-conv encoder with per-step variational heads.

    The encoder never reads the future; the decoder reconstructs each
    complete window with centered convolutions.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        k, c = spec.kernel, spec.tcn_channels
        self.blocks = []
        cin = spec.n_mels
        for i, d in enumerate(spec.dilations):
            w = self._param(f"tcn{i}_w", (c, cin, k), fan_in=cin * k)
            b = self._param(f"tcn{i}_b", (c,), fan_in=cin * k, zero=True)
            self.blocks.append((w, b, d))
            cin = c
        lat = spec.latent_dim
        self.w_mu = self._param("mu_w", (lat, c, 1), fan_in=c)
        self.b_mu = self._param("mu_b", (lat,), fan_in=c, zero=True)
        self.w_lv = self._param("lv_w", (lat, c, 1), fan_in=c)
        self.b_lv = self._param("lv_b", (lat,), fan_in=c, zero=True)
        self.w_d0 = self._param("dec0_w", (c, lat, 1), fan_in=lat)
        self.b_d0 = self._param("dec0_b", (c,), fan_in=lat, zero=True)
        self.w_d1 = self._param("dec1_w", (c, c, 3), fan_in=c * 3)
        self.b_d1 = self._param("dec1_b", (c,), fan_in=c * 3, zero=True)
        self.w_d2 = self._param("dec2_w", (spec.n_mels, c, 1), fan_in=c)
        self.b_d2 = self._param("dec2_b", (spec.n_mels,), fan_in=c, zero=True)

    def _encode_dist(self, x: Tensor) -> LatentDistribution:
        h = x
        for w, b, d in self.blocks:
            h = conv1d_causal(h, w, bias=b, dilation=d).relu()
        return LatentDistribution(
            mu=conv1d_causal(h, self.w_mu, bias=self.b_mu),
            log_var=conv1d_causal(h, self.w_lv, bias=self.b_lv),
        )

    def _decode(self, z: Tensor) -> Tensor:
        h = conv1d_causal(z, self.w_d0, bias=self.b_d0).relu()
        h = conv1d_causal(h, self.w_d1, bias=self.b_d1, causal=False).relu()
        return conv1d_causal(h, self.w_d2, bias=self.b_d2)

    def forward(self, x, rng=None):
        ld = self._encode_dist(x)
        if rng is None:
            z = ld.mu
        else:
            z = reparameterize(ld, rng.standard_normal(ld.mu.shape))
        return ForwardResult(recon=self._decode(z), latent=ld)

    def _encode_batch(self, x):
        return self._encode_dist(x).mu.data


def build(spec: ModelSpec) -> Model:
    """Construct a model with seeded parameters."""
    if spec.kind == "dense_ae":
        return DenseAutoencoder(spec)
    if spec.kind in ("cae", "cvae"):
        return ConvAutoencoder(spec)
    if spec.kind == "tcn_cvae":
        return TcnVae(spec)
    raise SpecError(f"unknown model kind {spec.kind!r}")


def param_count(model: Model) -> int:
    return model.param_count()


# -- checkpoint serialization --


def _write_tensor(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor(buf: bytes, off: int, path) -> tuple[np.ndarray, int]:
    if off + 4 > len(buf):
        raise FormatError(f"{path}: truncated tensor header")
    ndim, = struct.unpack_from("<I", buf, off)
    off += 4
    if ndim > 8 or off + 4 * ndim > len(buf):
        raise FormatError(f"{path}: bad tensor header")
    shape = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    end = off + 4 * count
    if end > len(buf):
        raise FormatError(f"{path}: truncated tensor data")
    arr = np.frombuffer(buf[off:end], dtype="<f4").reshape(shape).copy()
    return arr, end


def checkpoint_save(model: Model, path: str | Path) -> None:
    """Serialize spec echo plus parameter tensors (float32, exact)."""
    blob = json.dumps({"spec": asdict(model.spec)}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.params:
            _write_tensor(fh, p.data)
        if model.spec.normalize:
            _write_tensor(fh, model.feature_mean)
            _write_tensor(fh, model.feature_std)


def checkpoint_load(path: str | Path, expected_spec: ModelSpec | None = None) -> Model:
    """Rebuild a model from a checkpoint; bit-identical parameters.

    With ``expected_spec`` given, a differing stored spec raises
    SpecMismatchError instead of silently returning another architecture.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint")
    version, = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    hlen, = struct.unpack_from("<I", buf, 8)
    if len(buf) < 12 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
        spec = ModelSpec(**header["spec"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad spec header: {exc}") from exc
    if expected_spec is not None and asdict(spec) != asdict(expected_spec):
        raise SpecMismatchError(
            f"{path}: checkpoint holds kind={spec.kind!r}, "
            f"expected kind={expected_spec.kind!r} spec"
        )
    model = build(spec)
    off = 12 + hlen
    tensors = []
    n_expected = len(model.params) + (2 if spec.normalize else 0)
    for _ in range(n_expected):
        arr, off = _read_tensor(buf, off, path)
        tensors.append(arr)
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes after tensors")
    for p, arr in zip(model.params, tensors):
        if p.data.shape != arr.shape:
            raise FormatError(f"{path}: tensor shape {arr.shape} != {p.data.shape}")
        p.data = arr
    if spec.normalize:
        model.feature_mean, model.feature_std = tensors[-2], tensors[-1]
    return model
