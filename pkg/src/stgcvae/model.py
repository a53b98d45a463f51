"""The three networks: conditional prior, recognition, and decoder.

All three are built from GCN layers (per-frame channel mix followed by
agent mixing against the normalized adjacency), temporal convolutions,
1x1 latent heads, and time-extrapolating convolutions that treat the
time axis as channels. Everything is per-agent or adjacency-mediated,
so the networks are agent-permutation equivariant and accept any N.

Parameters live in a ParamStore (name -> float64 array). A forward pass
wraps them in autodiff leaves via `traced_params`, so gradients come
back keyed by parameter name.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, FormatError

LOGVAR_MIN, LOGVAR_MAX = ad.LOGVAR_MIN, ad.LOGVAR_MAX

# Guards for the output distribution channels. The latent clamp above bounds
# the loss value, but near-degenerate output Gaussians also blow up the NLL
# gradient (1/sigma^2 and 1/(1-rho^2) factors), which diverges under
# fixed-rate SGD. Flooring sigma at exp(-3) ~ 0.05 m and capping |rho| at
# tanh(1.2) ~ 0.83 keeps that curvature below the stability threshold of the
# 0.01 step size while leaving the predicted means unconstrained.
SIGMA_S_MIN = -3.0
RHO_R_MAX = 1.2


@dataclass
class ModelConfig:
    in_channels: int = 2
    embed_channels: int = 24
    latent_len: int = 20
    obs_len: int = 8
    seq_len: int = 20
    out_channels: int = 5  # (mu_x, mu_y, s_x, s_y, r)
    prior_blocks: int = 3    # GCN+TCN pairs in the prior encoder
    recog_blocks: int = 2    # GCN+TCN pairs in the recognition encoder
    tcn_kernel: int = 3
    dropout: float = 0.1
    noise_std: float = 0.01
    # Multiplier applied to displacement features on the way into the
    # networks (and divided back out of the predicted means). Typical
    # per-frame steps are ~0.1-0.4 m, well below the unit scale of the
    # latent noise; scaling up raises the signal-to-noise ratio of the
    # latent means without touching the pinned weight init.
    feature_scale: float = 1.0

    def __post_init__(self):
        if self.feature_scale <= 0:
            raise ConfigError("feature_scale must be positive")
        for name in ("in_channels", "embed_channels", "latent_len",
                     "obs_len", "seq_len", "out_channels",
                     "prior_blocks", "recog_blocks", "tcn_kernel"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.prior_blocks <= self.recog_blocks:
            # asymmetry: the prior is the more expressive encoder
            raise ConfigError("prior_blocks must exceed recog_blocks")
        if self.seq_len <= self.obs_len:
            raise ConfigError("seq_len must exceed obs_len")

    @property
    def reduce_kernel(self) -> int:
        # stride-free reduction of the recognition embedding: seq -> obs frames
        return self.seq_len - self.obs_len + 1


class ParamStore:
    """Named, shaped parameter arrays grouped by network prefix."""

    def __init__(self):
        self._entries: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray):
        if name in self._entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._entries[name] = np.asarray(array, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, array: np.ndarray):
        if name not in self._entries:
            raise KeyError(name)
        if self._entries[name].shape != array.shape:
            raise DimensionError(
                f"parameter {name!r}: shape {array.shape} != "
                f"{self._entries[name].shape}")
        self._entries[name] = np.asarray(array, dtype=np.float64)

    def __contains__(self, name):
        return name in self._entries

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def group(self, prefix: str):
        return {k: v for k, v in self._entries.items()
                if k.startswith(prefix)}

    def count_params(self) -> int:
        return sum(v.size for v in self._entries.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self._entries.items():
            out.add(k, v.copy())
        return out

    def traced(self) -> dict[str, ad.Value]:
        return {k: ad.leaf(v) for k, v in self._entries.items()}


@dataclass
class LatentGaussian:
    """Diagonal-Gaussian latent aligned to the graph embedding.

    mu and logvar both have shape (L, T_obs, N); logvar is already clamped
    to the safe exponentiation range.
    """
    mu: ad.Value
    logvar: ad.Value

    @property
    def shape(self):
        return self.mu.data.shape


@dataclass
class BivariateGaussianSeq:
    """Raw decoder output (5, T_out, N) and its constrained view."""
    raw: ad.Value

    @property
    def data(self) -> np.ndarray:
        return self.raw.data

    def constrained(self) -> np.ndarray:
        """(5, T, N) numpy with sigma = exp(clamped s) and rho = tanh(r)."""
        out = self.raw.data.copy()
        out[2:4] = np.exp(np.clip(out[2:4], SIGMA_S_MIN, LOGVAR_MAX))
        out[4] = np.tanh(np.clip(out[4], -RHO_R_MAX, RHO_R_MAX))
        return out


# ---------------------------------------------------------------------------
# initialization


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases,
    prelu slopes 0.25. Deterministic under the generator's state."""
    store = ParamStore()
    c, p = config.in_channels, config.embed_channels
    k, l = config.tcn_kernel, config.latent_len

    def conv(name, c_out, c_in, width):
        bound = np.sqrt(1.0 / (c_in * width))
        store.add(name + ".w", rng.uniform(-bound, bound, (c_out, c_in, width)))
        store.add(name + ".b", np.zeros(c_out))

    def slope(name, channels):
        store.add(name, np.full(channels, 0.25))

    def encoder(prefix, blocks, last_tcn_kernel):
        for i in range(blocks):
            c_in = c if i == 0 else p
            conv(f"{prefix}.block{i}.gcn", p, c_in, 1)
            slope(f"{prefix}.block{i}.gcn.slope", p)
            width = last_tcn_kernel if i == blocks - 1 else k
            conv(f"{prefix}.block{i}.tcn", p, p, width)
            slope(f"{prefix}.block{i}.tcn.slope", p)
        conv(f"{prefix}.head.mu", l, p, 1)
        conv(f"{prefix}.head.logvar", l, p, 1)

    encoder("prior", config.prior_blocks, k)
    encoder("recog", config.recog_blocks, config.reduce_kernel)

    # decoder
    conv("dec.obs_embed", p, c, 1)
    slope("dec.obs_embed.slope", p)
    conv("dec.z_embed", p, l, k)
    slope("dec.z_embed.slope", p)
    conv("dec.fuse", p, 2 * p, 1)
    slope("dec.fuse.slope", p)
    conv("dec.txp1", config.seq_len, config.obs_len, k)
    slope("dec.txp1.slope", p)
    conv("dec.txp2", config.seq_len, config.seq_len, k)
    slope("dec.txp2.slope", p)
    conv("dec.out", config.out_channels, p, 1)
    return store


def count_params(store: ParamStore) -> int:
    return store.count_params()


# ---------------------------------------------------------------------------
# building blocks


def _gcn(v, adj, params, name):
    """Per-frame graph convolution: channel mix, agent mix, prelu."""
    h = ad.add_bias(ad.conv_time(v, params[name + ".w"]), params[name + ".b"])
    h = ad.mix_agents(h, adj)
    return ad.prelu(h, params[name + ".slope"])


def _tcn(v, params, name, padding):
    h = ad.add_bias(ad.conv_time(v, params[name + ".w"], padding=padding),
                    params[name + ".b"])
    return ad.prelu(h, params[name + ".slope"])


def _txp(v, params, name):
    """Time-extrapolating convolution: time treated as the channel axis."""
    h = ad.transpose_ct(v)
    h = ad.add_bias(ad.conv_time(h, params[name + ".w"], padding=1),
                    params[name + ".b"])
    h = ad.transpose_ct(h)
    return ad.prelu(h, params[name + ".slope"])


def stgcnn_embed(v: ad.Value, adj: np.ndarray, params: dict, prefix: str,
                 blocks: int, tcn_kernel: int, last_tcn_kernel: int,
                 dropout_rate: float = 0.0,
                 rng: np.random.Generator | None = None) -> ad.Value:
    """Alternating GCN / TCN blocks with identity residuals.

    A residual connects block input to block output whenever shapes match
    (i.e. from the second block on, when the time length is preserved).
    """
    if v.data.shape[1] != adj.shape[0]:
        raise DimensionError(
            f"stgcnn_embed: {v.data.shape[1]} frames vs adjacency "
            f"{adj.shape[0]} frames")
    h = v
    for i in range(blocks):
        block_in = h
        h = _gcn(h, adj, params, f"{prefix}.block{i}.gcn")
        width = last_tcn_kernel if i == blocks - 1 else tcn_kernel
        padding = (tcn_kernel - 1) // 2 if width == tcn_kernel else 0
        h = _tcn(h, params, f"{prefix}.block{i}.tcn", padding)
        if h.data.shape == block_in.data.shape:
            h = ad.add(h, block_in)
        if dropout_rate > 0.0 and rng is not None:
            h = ad.dropout(h, dropout_rate, rng)
    return h


def _heads(embed, params, prefix):
    mu = ad.add_bias(ad.conv_time(embed, params[prefix + ".head.mu.w"]),
                     params[prefix + ".head.mu.b"])
    logvar = ad.add_bias(ad.conv_time(embed, params[prefix + ".head.logvar.w"]),
                         params[prefix + ".head.logvar.b"])
    return mu, ad.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)


# ---------------------------------------------------------------------------
# the model


class TrajCvae:
    """Conditional prior + recognition encoder + decoder over one ParamStore."""

    def __init__(self, config: ModelConfig, params: ParamStore | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        if params is None:
            params = init_params(config, rng or np.random.default_rng(0))
        self.params = params

    def traced_params(self) -> dict[str, ad.Value]:
        return self.params.traced()

    def prior_forward(self, p: dict, v_obs: ad.Value,
                      a_obs: np.ndarray) -> LatentGaussian:
        """Latent Gaussian over z given the 8 observed frames.

        v_obs: (2, obs_len, N) displacement features, a_obs: (obs_len, N, N).
        """
        cfg = self.config
        if v_obs.data.shape[1] != cfg.obs_len:
            raise DimensionError(
                f"prior_forward: expected {cfg.obs_len} frames, got "
                f"{v_obs.data.shape[1]}")
        embed = stgcnn_embed(v_obs, a_obs, p, "prior", cfg.prior_blocks,
                             cfg.tcn_kernel, cfg.tcn_kernel)
        return LatentGaussian(*_heads(embed, p, "prior"))

    def recog_forward(self, p: dict, v_full: ad.Value, a_full: np.ndarray,
                      train: bool = False,
                      rng: np.random.Generator | None = None) -> LatentGaussian:
        """Approximate posterior over z from all 20 frames.

        The final TCN uses a stride-free kernel of length seq-obs+1, so
        the latent lands on the same 8-frame grid as the prior. In train
        mode dropout acts inside the embedding and small Gaussian noise
        is added to mu.
        """
        cfg = self.config
        if v_full.data.shape[1] != cfg.seq_len:
            raise DimensionError(
                f"recog_forward: expected {cfg.seq_len} frames, got "
                f"{v_full.data.shape[1]}")
        if train and rng is None:
            raise ConfigError("recog_forward: train mode needs an rng")
        embed = stgcnn_embed(v_full, a_full, p, "recog", cfg.recog_blocks,
                             cfg.tcn_kernel, cfg.reduce_kernel,
                             dropout_rate=cfg.dropout if train else 0.0,
                             rng=rng)
        mu, logvar = _heads(embed, p, "recog")
        if train:
            noise = rng.standard_normal(mu.data.shape) * cfg.noise_std
            mu = ad.add(mu, ad.Value(noise))
        return LatentGaussian(mu, logvar)

    def decode(self, p: dict, z: ad.Value, v_obs: ad.Value,
               a_obs: np.ndarray) -> BivariateGaussianSeq:
        """Cascade-fuse the observed graph with the latent transition and
        extrapolate to the full 20-frame bivariate Gaussian sequence.

        The re-embedded latent is also pushed through the first
        time-extrapolation kernel and added back between the two TXP
        blocks (latent skip connection).
        """
        cfg = self.config
        if z.data.shape[2] != v_obs.data.shape[2]:
            raise DimensionError(
                f"decode: z has {z.data.shape[2]} agents, observation has "
                f"{v_obs.data.shape[2]}")
        if z.data.shape[:2] != (cfg.latent_len, cfg.obs_len):
            raise DimensionError(
                f"decode: z shape {z.data.shape} != "
                f"({cfg.latent_len}, {cfg.obs_len}, N)")

        obs = ad.add_bias(ad.conv_time(v_obs, p["dec.obs_embed.w"]),
                          p["dec.obs_embed.b"])
        obs = ad.mix_agents(obs, a_obs)
        obs = ad.prelu(obs, p["dec.obs_embed.slope"])

        zre = ad.add_bias(ad.conv_time(z, p["dec.z_embed.w"], padding=1),
                          p["dec.z_embed.b"])
        zre = ad.prelu(zre, p["dec.z_embed.slope"])

        fused = ad.concat_channels(obs, zre)
        fused = ad.add_bias(ad.conv_time(fused, p["dec.fuse.w"]),
                            p["dec.fuse.b"])
        fused = ad.prelu(fused, p["dec.fuse.slope"])

        h = _txp(fused, p, "dec.txp1")            # time obs_len -> seq_len
        z_skip = _txp(zre, p, "dec.txp1")         # same extrapolation kernel
        h = ad.add(h, z_skip)

        h2 = _txp(h, p, "dec.txp2")               # refine at seq_len
        h = ad.add(h2, h)

        raw = ad.add_bias(ad.conv_time(h, p["dec.out.w"]), p["dec.out.b"])
        return BivariateGaussianSeq(raw)

    def count_params(self) -> int:
        return self.params.count_params()


# ---------------------------------------------------------------------------
# checkpoint file: magic STGC, version byte, entries
# version 1 stores float32 data, version 2 float64 (bit-exact resume)

_MAGIC = b"STGC"


def save_params(path, store: ParamStore, metadata: dict | None = None,
                dtype: str = "f4") -> None:
    """Write a checkpoint. A sidecar `<path>.meta` records config metadata
    as plain `key=value` lines."""
    version = 1 if dtype == "f4" else 2
    np_dtype = "<f4" if dtype == "f4" else "<f8"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BI", version, len(store.names())))
        for name, arr in store.items():
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=np_dtype).tobytes())
    if metadata is not None:
        lines = [f"{k}={v}" for k, v in metadata.items()]
        Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def load_params(path) -> tuple[ParamStore, dict]:
    """Read a checkpoint and its sidecar metadata (empty dict if absent)."""
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from("<BI", blob, 4)
        if version not in (1, 2):
            raise FormatError(f"{path}: unsupported version {version}")
        np_dtype = "<f4" if version == 1 else "<f8"
        itemsize = 4 if version == 1 else 8
        store = ParamStore()
        off = 9
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype=np_dtype, count=size,
                                offset=off).reshape(shape).astype(np.float64)
            off += size * itemsize
            store.add(name, arr)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated ({exc})") from exc

    meta_path = Path(str(path) + ".meta")
    metadata = {}
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                metadata[k.strip()] = v.strip()
    return store, metadata


def config_from_metadata(metadata: dict) -> ModelConfig:
    """Rebuild a ModelConfig from sidecar metadata, using defaults for
    missing keys."""
    kwargs = {}
    defaults = ModelConfig()
    for f_name, default in asdict(defaults).items():
        if f_name in metadata:
            cast = type(default)
            kwargs[f_name] = cast(metadata[f_name])
    return ModelConfig(**kwargs)
