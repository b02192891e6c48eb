"""Transformer rate predictor: featurization, forward pass, serialization.

Pipeline per window (W steps x M links x 3 raw features):
learnable per-feature affine scaling (identity at init) concatenated with
the raw features; a shared two-layer temporal convolution encoder with mean
pooling giving one embedding per antenna; learnable per-antenna identity
embeddings; one pre-LN transformer encoder block over the antenna axis (no
positional encoding); concat with the raw per-antenna time mean; a shared
two-layer head with Softplus; and a hard per-link capacity cap.

Rates are handled internally in units of ``rate_unit`` bits/s (default
1e8) so targets are O(1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .links import LinkConfig
from .ratemap import rate_from_snr_db

N_RAW_FEATURES = 3  # measured flag, SNR in dB, rate in rate_unit
MODEL_SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    window: int = 20
    n_links: int = 4
    embed_dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 128
    head_hidden: int = 64
    dropout: float = 0.2
    rate_caps_bps: tuple[float, ...] = ()
    rate_unit: float = 1e8

    def __post_init__(self):
        self.rate_caps_bps = tuple(float(c) for c in self.rate_caps_bps)
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if len(self.rate_caps_bps) != self.n_links:
            raise ValueError("need one rate cap per link")

    @classmethod
    def for_links(cls, links: list[LinkConfig], **kwargs) -> "ModelConfig":
        return cls(n_links=len(links), rate_caps_bps=tuple(l.cap_bps for l in links), **kwargs)

    @property
    def caps_scaled(self) -> np.ndarray:
        return np.asarray(self.rate_caps_bps) / self.rate_unit

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def featurize(obs_snr_db: np.ndarray, mask: np.ndarray, links: list[LinkConfig],
              rate_unit: float = 1e8) -> np.ndarray:
    """(T, M) masked observations -> (T, M, 3) feature triplets.

    Measured links carry (1, SNR dB, mapped rate); unmeasured links are all
    zeros, so the flag channel doubles as the mask.
    """
    obs = np.asarray(obs_snr_db, dtype=np.float64)
    mask = np.asarray(mask)
    feats = np.zeros(obs.shape + (N_RAW_FEATURES,))
    for j, link in enumerate(links):
        measured = mask[:, j] == 1
        feats[measured, j, 0] = 1.0
        feats[measured, j, 1] = obs[measured, j]
        feats[measured, j, 2] = rate_from_snr_db(obs[measured, j], link) / rate_unit
    return feats


def build_window(features: np.ndarray, t: int, window: int) -> np.ndarray:
    """History block for a prediction at step t: features of [t-W, t)."""
    if t < window:
        raise ValueError(f"window needs t >= {window}, got t={t}")
    return features[t - window:t]


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """Glorot-uniform weights, zero biases, identity affine scaling."""
    p = ParamStore()

    def glorot(shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    d = config.embed_dim
    p.add("affine.scale", np.ones(N_RAW_FEATURES))
    p.add("affine.shift", np.zeros(N_RAW_FEATURES))
    c_in = 2 * N_RAW_FEATURES
    p.add("temporal.conv1.kernel", glorot((3, c_in, d), 3 * c_in, d))
    p.add("temporal.conv1.bias", np.zeros(d))
    p.add("temporal.conv2.kernel", glorot((3, d, d), 3 * d, d))
    p.add("temporal.conv2.bias", np.zeros(d))
    p.add("antenna_embed", rng.normal(0.0, 0.02, size=(config.n_links, d)))
    p.add("attn.ln.gain", np.ones(d))
    p.add("attn.ln.bias", np.zeros(d))
    for name in ("wq", "wk", "wv", "wo"):
        p.add(f"attn.{name}", glorot((d, d), d, d))
        p.add(f"attn.{name}_bias", np.zeros(d))
    p.add("ffn.ln.gain", np.ones(d))
    p.add("ffn.ln.bias", np.zeros(d))
    p.add("ffn.w1", glorot((d, config.ffn_dim), d, config.ffn_dim))
    p.add("ffn.b1", np.zeros(config.ffn_dim))
    p.add("ffn.w2", glorot((config.ffn_dim, d), config.ffn_dim, d))
    p.add("ffn.b2", np.zeros(d))
    h_in = d + N_RAW_FEATURES
    p.add("head.w1", glorot((h_in, config.head_hidden), h_in, config.head_hidden))
    p.add("head.b1", np.zeros(config.head_hidden))
    p.add("head.w2", glorot((config.head_hidden, 1), config.head_hidden, 1))
    p.add("head.b2", np.zeros(1))
    return p


def _ln_affine(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return ad.add(ad.multiply(ad.layer_norm(x), gain), bias)


def forward(windows: np.ndarray, params: ParamStore, config: ModelConfig,
            train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Batched forward pass: (B, W, M, 3) windows -> (B, M) scaled rates."""
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    b, w, m, f = x.shape
    if (w, m, f) != (config.window, config.n_links, N_RAW_FEATURES):
        raise ValueError(
            f"window shape {(w, m, f)} does not match config "
            f"{(config.window, config.n_links, N_RAW_FEATURES)}")
    p = config.dropout if train else 0.0
    raw = Tensor(x)

    scaled = ad.affine_per_feature(raw, params["affine.scale"], params["affine.shift"])
    feats = ad.concat([raw, scaled], axis=-1)                      # (B, W, M, 6)

    # shared temporal encoder per antenna
    h = ad.transpose(feats, (0, 2, 1, 3))                          # (B, M, W, 6)
    h = ad.conv1d_time(h, params["temporal.conv1.kernel"], params["temporal.conv1.bias"])
    h = ad.dropout(ad.relu(h), p, rng, train)
    h = ad.conv1d_time(h, params["temporal.conv2.kernel"], params["temporal.conv2.bias"])
    h = ad.dropout(ad.relu(h), p, rng, train)
    h = ad.mean_over_axis(h, axis=2)                               # (B, M, d)
    h = ad.add(h, params["antenna_embed"])

    # one pre-LN transformer encoder block over the antenna axis
    d, heads = config.embed_dim, config.n_heads
    hd = d // heads
    z = _ln_affine(h, params["attn.ln.gain"], params["attn.ln.bias"])

    def split_heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, m, heads, hd)), (0, 2, 1, 3))

    q = split_heads(ad.add(ad.matmul(z, params["attn.wq"]), params["attn.wq_bias"]))
    k = split_heads(ad.add(ad.matmul(z, params["attn.wk"]), params["attn.wk_bias"]))
    v = split_heads(ad.add(ad.matmul(z, params["attn.wv"]), params["attn.wv_bias"]))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    attn = ad.dropout(ad.softmax_lastdim(scores), p, rng, train)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, m, d))
    ctx = ad.dropout(ad.add(ad.matmul(ctx, params["attn.wo"]), params["attn.wo_bias"]),
                     p, rng, train)
    h = ad.add(h, ctx)

    z = _ln_affine(h, params["ffn.ln.gain"], params["ffn.ln.bias"])
    z = ad.relu(ad.add(ad.matmul(z, params["ffn.w1"]), params["ffn.b1"]))
    z = ad.dropout(z, p, rng, train)
    z = ad.add(ad.matmul(z, params["ffn.w2"]), params["ffn.b2"])
    h = ad.add(h, ad.dropout(z, p, rng, train))

    # append the raw per-antenna mean over time, then the shared head
    raw_mean = ad.mean_over_axis(raw, axis=1)                      # (B, M, 3)
    h = ad.concat([h, raw_mean], axis=-1)
    h = ad.relu(ad.add(ad.matmul(h, params["head.w1"]), params["head.b1"]))
    h = ad.dropout(h, p, rng, train)
    h = ad.add(ad.matmul(h, params["head.w2"]), params["head.b2"])
    h = ad.softplus(ad.reshape(h, (b, m)))
    return ad.elementwise_min_const(h, config.caps_scaled)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = ad.sub(pred, np.asarray(target, dtype=np.float64))
    sq = ad.multiply(diff, diff)
    flat = ad.reshape(sq, (int(np.prod(sq.shape)),))
    return ad.mean_over_axis(flat, axis=0)


def save_model(path: Path, config: ModelConfig, params: ParamStore) -> None:
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model_config": config.to_dict(),
        "params": {
            name: {"shape": list(t.data.shape),
                   "data": [float(v) for v in t.data.ravel()]}
            for name, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path: Path) -> tuple[ModelConfig, ParamStore]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {doc.get('schema_version')}")
    config = ModelConfig.from_dict(doc["model_config"])
    params = ParamStore()
    for name, entry in doc["params"].items():
        arr = np.array([float(v) for v in entry["data"]]).reshape(entry["shape"])
        params.add(name, arr)
    return config, params
