"""The multi-branch detector network.

Each enabled feature (token log-likelihoods ``ll``, token entropies ``ent``,
hidden-state embeddings ``emb``) runs through its own branch encoder to a
d_h-dimensional vector; branch vectors are fused either by softmax attention
over branches or by concatenation + MLP; a linear head emits the logit whose
sigmoid is the hallucination probability.

Branch encoders:
  * ``cnn``:      conv3(pad 1) -> ReLU -> conv3 -> ReLU -> masked average pool
  * ``mlp_pool``: masked mean pool -> linear -> ReLU -> linear

Padded positions are zeroed on entry and excluded from pooling (unless
``pooling_masked`` is off, the length-dilution ablation), so the logit is a
function of the first ``true_len`` tokens only.

Forward/backward are hand-written per layer; ``finite_difference_check``
verifies every gradient against 64-bit central differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .features import Dataset, FeatureRecord

FEATURE_NAMES = ("ll", "ent", "emb")
ENCODER_KINDS = ("cnn", "mlp_pool")
FUSION_KINDS = ("attention", "concat_mlp")
ENCODER_PRESETS = ("all-cnn", "mixed", "all-mlp")

CHECKPOINT_FORMAT = "haludet-ckpt"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def encoders_preset(preset: str, features: tuple[str, ...]) -> dict[str, str]:
    """Per-feature encoder assignment for the three studied settings."""
    if preset == "all-cnn":
        return {f: "cnn" for f in features}
    if preset == "all-mlp":
        return {f: "mlp_pool" for f in features}
    if preset == "mixed":
        return {f: ("cnn" if f == "emb" else "mlp_pool") for f in features}
    raise ConfigError(f"unknown encoder preset {preset!r} (choose from {ENCODER_PRESETS})")


@dataclass
class ModelConfig:
    """Complete architecture description; enough to rebuild the network
    bit-exactly from a checkpoint."""

    d_emb: int
    features: tuple[str, ...] = FEATURE_NAMES
    encoders: dict[str, str] = field(default_factory=dict)
    fusion: str = "concat_mlp"
    l_max: int = 50
    d_conv: int = 64
    d_h: int = 64
    d_mlp: int = 64
    d_a: int = 64
    pooling_masked: bool = True

    def __post_init__(self):
        self.features = tuple(self.features)
        if not self.encoders:
            self.encoders = encoders_preset("all-cnn", self.features)
        self.validate()

    def validate(self) -> None:
        if not self.features:
            raise ConfigError("at least one feature must be enabled")
        if len(set(self.features)) != len(self.features):
            raise ConfigError("duplicate feature in features")
        for f in self.features:
            if f not in FEATURE_NAMES:
                raise ConfigError(f"unknown feature {f!r} (choose from {FEATURE_NAMES})")
        if set(self.encoders) != set(self.features):
            raise ConfigError("encoders must be given for exactly the enabled features")
        for f, enc in self.encoders.items():
            if enc not in ENCODER_KINDS:
                raise ConfigError(f"unknown encoder {enc!r} for feature {f!r}")
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"unknown fusion {self.fusion!r} (choose from {FUSION_KINDS})")
        for name in ("d_emb", "l_max", "d_conv", "d_h", "d_mlp", "d_a"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if any(e == "cnn" for e in self.encoders.values()) and self.d_conv != self.d_h:
            raise ConfigError("cnn branches pool d_conv channels into the d_h branch "
                              "vector, so d_conv must equal d_h")

    @property
    def n_features(self) -> int:
        return len(self.features)

    def to_dict(self) -> dict:
        return {
            "d_emb": self.d_emb,
            "features": list(self.features),
            "encoders": {f: self.encoders[f] for f in self.features},
            "fusion": self.fusion,
            "l_max": self.l_max,
            "d_conv": self.d_conv,
            "d_h": self.d_h,
            "d_mlp": self.d_mlp,
            "d_a": self.d_a,
            "pooling_masked": self.pooling_masked,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["features"] = tuple(d.get("features", FEATURE_NAMES))
        return cls(**d)


def _branch_in_channels(cfg: ModelConfig, feature: str) -> int:
    return cfg.d_emb if feature == "emb" else 1


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) manifest, in build order."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for f in cfg.features:
        cin = _branch_in_channels(cfg, f)
        if cfg.encoders[f] == "cnn":
            shapes += [
                (f"branch.{f}.conv1.K", (cfg.d_conv, cin, 3)),
                (f"branch.{f}.conv1.b", (cfg.d_conv,)),
                (f"branch.{f}.conv2.K", (cfg.d_conv, cfg.d_conv, 3)),
                (f"branch.{f}.conv2.b", (cfg.d_conv,)),
            ]
        else:
            shapes += [
                (f"branch.{f}.fc1.W", (cfg.d_mlp, cin)),
                (f"branch.{f}.fc1.b", (cfg.d_mlp,)),
                (f"branch.{f}.fc2.W", (cfg.d_h, cfg.d_mlp)),
                (f"branch.{f}.fc2.b", (cfg.d_h,)),
            ]
    if cfg.fusion == "attention":
        shapes += [
            ("fusion.attn.proj.W", (cfg.d_a, cfg.d_h)),
            ("fusion.attn.score.w", (cfg.d_a,)),
        ]
    else:
        shapes += [
            ("fusion.concat.fc1.W", (cfg.d_mlp, cfg.n_features * cfg.d_h)),
            ("fusion.concat.fc1.b", (cfg.d_mlp,)),
            ("fusion.concat.fc2.W", (cfg.d_h, cfg.d_mlp)),
            ("fusion.concat.fc2.b", (cfg.d_h,)),
        ]
    shapes += [("head.w", (cfg.d_h,)), ("head.b", (1,))]
    return shapes


def init_params(cfg: ModelConfig, rng: nn.Rng, dtype=nn.DTYPE) -> nn.ParamStore:
    """Deterministic initialization: Kaiming-uniform (fan-in, ReLU gain) for
    convs and hidden linears, Xavier-uniform for the logit head and the
    attention projection/score vectors, zero biases."""
    params = nn.ParamStore()
    for name, shape in param_shapes(cfg):
        if name.endswith(".b") or name == "head.b":
            params.add(name, np.zeros(shape, dtype=dtype))
        elif name.endswith("conv1.K") or name.endswith("conv2.K"):
            fan_in = shape[1] * shape[2]
            params.add(name, nn.kaiming_uniform(shape, fan_in, rng, dtype))
        elif name.startswith("fusion.attn."):
            if name.endswith("proj.W"):
                params.add(name, nn.xavier_uniform(shape, shape[1], shape[0], rng, dtype))
            else:
                params.add(name, nn.xavier_uniform(shape, shape[0], 1, rng, dtype))
        elif name == "head.w":
            params.add(name, nn.xavier_uniform(shape, shape[0], 1, rng, dtype))
        else:
            params.add(name, nn.kaiming_uniform(shape, shape[1], rng, dtype))
    return params


# ---------------------------------------------------------------------------
# Batched forward / backward
# ---------------------------------------------------------------------------

def build_batch(records: list[FeatureRecord], cfg: ModelConfig, dtype=nn.DTYPE) -> dict:
    for r in records:
        if r.d_emb != cfg.d_emb:
            raise ConfigError(f"record {r.id!r} has d_emb {r.d_emb}, model expects {cfg.d_emb}")
        if r.l_max != cfg.l_max:
            raise ConfigError(f"record {r.id!r} has l_max {r.l_max}, model expects {cfg.l_max}")
    batch = {
        "lengths": np.array([r.true_len for r in records], dtype=np.int64),
        "labels": np.array([r.label for r in records], dtype=np.int64),
    }
    if "ll" in cfg.features:
        batch["ll"] = np.stack([r.log_likelihoods for r in records]).astype(dtype)
    if "ent" in cfg.features:
        batch["ent"] = np.stack([r.entropies for r in records]).astype(dtype)
    if "emb" in cfg.features:
        batch["emb"] = np.stack([r.embeddings for r in records]).astype(dtype)
    return batch


def forward_batch(batch: dict, params: nn.ParamStore, cfg: ModelConfig) -> tuple[np.ndarray, dict]:
    """Compute logits for a batch; the returned cache feeds backward_batch."""
    lengths = batch["lengths"]
    B = lengths.shape[0]
    L = cfg.l_max
    dtype = params["head.w"].value.dtype
    time_mask = (np.arange(L)[None, :] < lengths[:, None]).astype(dtype)
    pool_lengths = lengths if cfg.pooling_masked else np.full(B, L, dtype=np.int64)

    cache: dict = {"lengths": lengths, "pool_lengths": pool_lengths, "branches": {}}
    hs = []
    for f in cfg.features:
        x = batch[f]
        if f != "emb":
            x = x[:, :, None]
        x = x.astype(dtype) * time_mask[:, :, None]
        bc: dict = {"x": x}
        if cfg.encoders[f] == "cnn":
            K1, b1 = params[f"branch.{f}.conv1.K"].value, params[f"branch.{f}.conv1.b"].value
            K2, b2 = params[f"branch.{f}.conv2.K"].value, params[f"branch.{f}.conv2.b"].value
            bc["c1"] = nn.conv1d(x, K1, b1)
            bc["r1"] = nn.relu(bc["c1"])
            bc["c2"] = nn.conv1d(bc["r1"], K2, b2)
            bc["r2"] = nn.relu(bc["c2"])
            h = nn.masked_mean_pool(bc["r2"], pool_lengths)
        else:
            W1, b1 = params[f"branch.{f}.fc1.W"].value, params[f"branch.{f}.fc1.b"].value
            W2, b2 = params[f"branch.{f}.fc2.W"].value, params[f"branch.{f}.fc2.b"].value
            bc["pooled"] = nn.masked_mean_pool(x, pool_lengths)
            bc["a1"] = nn.linear(bc["pooled"], W1, b1)
            bc["r"] = nn.relu(bc["a1"])
            h = nn.linear(bc["r"], W2, b2)
        cache["branches"][f] = bc
        hs.append(h)

    H = np.stack(hs, axis=1)  # (B, F, d_h)
    cache["H"] = H
    if cfg.fusion == "attention":
        Wa = params["fusion.attn.proj.W"].value
        w = params["fusion.attn.score.w"].value
        pre = H @ Wa.T
        z = np.tanh(pre)
        scores = z @ w
        alpha = nn.softmax(scores, axis=1)
        fused = (alpha[:, :, None] * H).sum(axis=1)
        cache.update(pre=pre, z=z, alpha=alpha, fused=fused)
    else:
        W1, b1 = params["fusion.concat.fc1.W"].value, params["fusion.concat.fc1.b"].value
        W2, b2 = params["fusion.concat.fc2.W"].value, params["fusion.concat.fc2.b"].value
        cat = H.reshape(B, cfg.n_features * cfg.d_h)
        a1 = nn.linear(cat, W1, b1)
        r = nn.relu(a1)
        fused = nn.linear(r, W2, b2)
        cache.update(cat=cat, a1=a1, r=r, fused=fused)

    logits = cache["fused"] @ params["head.w"].value + params["head.b"].value[0]
    cache["logits"] = logits
    return logits, cache


def backward_batch(dlogits: np.ndarray, cache: dict, params: nn.ParamStore, cfg: ModelConfig) -> None:
    """Accumulate gradients of the scalar loss into every grad buffer."""
    fused, H = cache["fused"], cache["H"]
    w_o = params["head.w"].value
    params["head.w"].grad += fused.T @ dlogits
    params["head.b"].grad += dlogits.sum(keepdims=True)
    dfused = dlogits[:, None] * w_o[None, :]

    if cfg.fusion == "attention":
        z, alpha = cache["z"], cache["alpha"]
        Wa = params["fusion.attn.proj.W"].value
        w = params["fusion.attn.score.w"].value
        dalpha = np.einsum("bc,bfc->bf", dfused, H)
        dH = alpha[:, :, None] * dfused[:, None, :]
        ds = nn.softmax_backward(dalpha, alpha, axis=1)
        params["fusion.attn.score.w"].grad += np.einsum("bf,bfa->a", ds, z)
        dpre = ds[:, :, None] * w[None, None, :] * (1.0 - z * z)
        params["fusion.attn.proj.W"].grad += np.einsum("bfa,bfc->ac", dpre, H)
        dH += dpre @ Wa
    else:
        r, a1, cat = cache["r"], cache["a1"], cache["cat"]
        W1 = params["fusion.concat.fc1.W"].value
        W2 = params["fusion.concat.fc2.W"].value
        dr, dW2, db2 = nn.linear_backward(dfused, r, W2)
        params["fusion.concat.fc2.W"].grad += dW2
        params["fusion.concat.fc2.b"].grad += db2
        da1 = nn.relu_backward(dr, a1)
        dcat, dW1, db1 = nn.linear_backward(da1, cat, W1)
        params["fusion.concat.fc1.W"].grad += dW1
        params["fusion.concat.fc1.b"].grad += db1
        dH = dcat.reshape(H.shape)

    pool_lengths = cache["pool_lengths"]
    for fi, f in enumerate(cfg.features):
        bc = cache["branches"][f]
        dh = dH[:, fi, :]
        if cfg.encoders[f] == "cnn":
            K1 = params[f"branch.{f}.conv1.K"].value
            K2 = params[f"branch.{f}.conv2.K"].value
            dr2 = nn.masked_mean_pool_backward(dh, bc["r2"].shape, pool_lengths, dh.dtype)
            dc2 = nn.relu_backward(dr2, bc["c2"])
            dr1, dK2, db2 = nn.conv1d_backward(dc2, bc["r1"], K2)
            params[f"branch.{f}.conv2.K"].grad += dK2
            params[f"branch.{f}.conv2.b"].grad += db2
            dc1 = nn.relu_backward(dr1, bc["c1"])
            _, dK1, db1 = nn.conv1d_backward(dc1, bc["x"], K1)
            params[f"branch.{f}.conv1.K"].grad += dK1
            params[f"branch.{f}.conv1.b"].grad += db1
        else:
            W1 = params[f"branch.{f}.fc1.W"].value
            W2 = params[f"branch.{f}.fc2.W"].value
            dr, dW2, db2 = nn.linear_backward(dh, bc["r"], W2)
            params[f"branch.{f}.fc2.W"].grad += dW2
            params[f"branch.{f}.fc2.b"].grad += db2
            da1 = nn.relu_backward(dr, bc["a1"])
            _, dW1, db1 = nn.linear_backward(da1, bc["pooled"], W1)
            params[f"branch.{f}.fc1.W"].grad += dW1
            params[f"branch.{f}.fc1.b"].grad += db1


def forward_backward(batch: dict, params: nn.ParamStore, cfg: ModelConfig) -> float:
    """Mean BCE over the batch; accumulates its gradients into params."""
    logits, cache = forward_batch(batch, params, cfg)
    y = batch["labels"]
    loss = float(nn.bce_with_logits(logits, y).mean())
    dlogits = (nn.bce_grad(logits, y) / logits.shape[0]).astype(logits.dtype)
    backward_batch(dlogits, cache, params, cfg)
    return loss


def forward(record: FeatureRecord, params: nn.ParamStore, cfg: ModelConfig):
    """Score one record. Returns (logit, p, attention weights or None)."""
    batch = build_batch([record], cfg, dtype=params["head.w"].value.dtype)
    logits, cache = forward_batch(batch, params, cfg)
    attn = cache["alpha"][0].copy() if cfg.fusion == "attention" else None
    logit = float(logits[0])
    return logit, float(nn.sigmoid(np.array([logit]))[0]), attn


def predict(p: float) -> int:
    """Hard decision: hallucinated iff p >= 0.5 (boundary inclusive)."""
    return 1 if p >= 0.5 else 0


def score_records(records: list[FeatureRecord], params: nn.ParamStore, cfg: ModelConfig,
                  batch_size: int = 256) -> np.ndarray:
    """Hallucination probabilities for a list of records, batched."""
    out = np.empty(len(records), dtype=np.float64)
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        logits, _ = forward_batch(build_batch(chunk, cfg), params, cfg)
        out[start:start + len(chunk)] = nn.sigmoid(logits.astype(np.float64))
    return out


def score_dataset(ds: Dataset, params: nn.ParamStore, cfg: ModelConfig,
                  batch_size: int = 256) -> np.ndarray:
    return score_records(ds.records, params, cfg, batch_size)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: nn.ParamStore, cfg: ModelConfig, path) -> None:
    """One JSON header line (format tag, version, config, name->shape manifest
    in parameter order) followed by all tensors as one little-endian float32
    blob, concatenated in manifest order."""
    manifest = [[name, list(params[name].value.shape)] for name in params.names()]
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "manifest": manifest,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        for name in params.names():
            f.write(np.ascontiguousarray(params[name].value, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[nn.ParamStore, ModelConfig]:
    with open(path, "rb") as f:
        header_line = f.readline()
        blob = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a detector checkpoint (bad format tag)")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f"invalid embedded config: {e}") from e
    manifest = [(name, tuple(shape)) for name, shape in header.get("manifest", [])]
    expected = param_shapes(cfg)
    if manifest != expected:
        raise CheckpointError("manifest does not match the architecture derived "
                              "from the embedded config")
    total = sum(int(np.prod(shape)) for _, shape in manifest)
    if len(blob) != 4 * total:
        raise CheckpointError(f"truncated or oversized blob: expected {4 * total} bytes, "
                              f"found {len(blob)}")
    params = nn.ParamStore()
    offset = 0
    for name, shape in manifest:
        size = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=4 * offset)
        params.add(name, arr.reshape(shape).astype(np.float32, copy=True))
        offset += size
    return params, cfg


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def _random_check_batch(cfg: ModelConfig, rng: nn.Rng, batch_size: int) -> dict:
    L = cfg.l_max
    lengths = np.array([2 + rng.randint(L - 1) for _ in range(batch_size)], dtype=np.int64)
    lengths[0] = L
    batch = {
        "lengths": lengths,
        "labels": np.array([i % 2 for i in range(batch_size)], dtype=np.int64),
    }
    for f in cfg.features:
        if f == "emb":
            batch[f] = rng.normal(batch_size * L * cfg.d_emb).reshape(batch_size, L, cfg.d_emb)
        else:
            batch[f] = rng.normal(batch_size * L).reshape(batch_size, L)
    return batch


def _min_relu_margin(cache: dict, cfg: ModelConfig) -> float:
    margins = []
    for f in cfg.features:
        bc = cache["branches"][f]
        for key in ("c1", "c2", "a1"):
            if key in bc:
                margins.append(np.abs(bc[key]).min())
    if cfg.fusion == "concat_mlp":
        margins.append(np.abs(cache["a1"]).min())
    return float(min(margins))


def finite_difference_check(cfg: ModelConfig, seed: int, eps: float = 1e-3,
                            batch_size: int = 2) -> dict[str, float]:
    """Compare analytic gradients with 64-bit central finite differences.

    Returns the max relative error per parameter tensor. Draws where some ReLU
    pre-activation lies within a few eps of its kink are redrawn (the two-sided
    difference is meaningless across the kink); the redraw is deterministic.
    """
    attempt = 0
    while True:
        rng = nn.Rng(nn.derive_seed(seed, attempt))
        params = init_params(cfg, rng, dtype=np.float64)
        batch = _random_check_batch(cfg, rng, batch_size)
        _, cache = forward_batch(batch, params, cfg)
        if _min_relu_margin(cache, cfg) > 8 * eps:
            break
        attempt += 1
        if attempt > 200:
            raise RuntimeError("could not find a kink-free draw for the gradient check")

    y = batch["labels"]

    def loss_fn() -> float:
        logits, _ = forward_batch(batch, params, cfg)
        return float(nn.bce_with_logits(logits, y).mean())

    params.zero_grads()
    forward_backward(batch, params, cfg)

    errors: dict[str, float] = {}
    for name in params.names():
        value = params[name].value
        analytic = params[name].grad
        worst = 0.0
        flat = value.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            rel = abs(aflat[i] - fd) / max(abs(aflat[i]) + abs(fd), 1e-6)
            worst = max(worst, rel)
        errors[name] = worst
    return errors
