"""Speech and image encoders with boundary-aware recurrent layers.

The speech encoder is a 1-D convolution (stride 1, length-preserving),
a stack of recurrent layers, and additive attention pooling to a unit-norm
embedding.  Each recurrent layer is either a plain left-to-right GRU or a
"packager": the same GRU whose state restarts from zero right after every
segment-final frame of its boundary tier.  A packager either emits every
step (ALL) or only segment-final steps (KEEP); KEEP shortens the sequence
to one vector per segment and re-expresses the remaining higher tiers on
the shortened axis.

Residual connections are added from the second recurrent layer on, and
only when a layer preserves both sequence lengths and width, so they never
bridge a KEEP reduction.

The image encoder is a single linear map to the same embedding space,
also L2-normalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .segmentation import LEVELS, NESTED_ABOVE, BoundaryVector, project_boundaries
from .tensor import (ShapeError, Tensor, accumulate, add, from_op, l2_normalize,
                     masked_softmax, matmul, mul, reshape, sigmoid, sub, tanh)

MODES = ("ALL", "KEEP")

_LEVEL_RANK = {"phone": 0, "syllable_connected": 1, "syllable_word": 1, "word": 2}


class ConfigError(ValueError):
    """Invalid encoder architecture description."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    width: int
    stride: int = 1


@dataclass(frozen=True)
class LayerSpec:
    """One recurrent layer: plain GRU or a boundary packager."""

    kind: str  # "vanilla" | "packager"
    hidden_dim: int
    level: str | None = None
    mode: str | None = None

    def __post_init__(self):
        if self.kind == "vanilla":
            if self.level is not None or self.mode is not None:
                raise ConfigError("vanilla layers take no level or mode")
        elif self.kind == "packager":
            if self.level not in LEVELS:
                raise ConfigError(f"packager needs a segment level, got {self.level!r}")
            if self.mode not in MODES:
                raise ConfigError(f"packager needs a mode in {MODES}, got {self.mode!r}")
        else:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be positive, got {self.hidden_dim}")


@dataclass(frozen=True)
class EncoderConfig:
    conv: ConvSpec
    layers: tuple[LayerSpec, ...]
    attention_dim: int
    embed_dim: int
    image_in_dim: int


def validate_config(config: EncoderConfig) -> None:
    """Reject architectures the encoder cannot run."""
    if not config.layers:
        raise ConfigError("encoder needs at least one recurrent layer")
    if config.conv.filters < 1 or config.conv.width < 1:
        raise ConfigError("conv filters and width must be positive")
    if config.conv.stride != 1:
        raise ConfigError("conv stride must be 1 to preserve boundary positions")
    if config.attention_dim < 1 or config.embed_dim < 1 or config.image_in_dim < 1:
        raise ConfigError("attention_dim, embed_dim and image_in_dim must be positive")
    if config.embed_dim != config.layers[-1].hidden_dim:
        raise ConfigError(
            f"embed_dim {config.embed_dim} must equal the last hidden_dim "
            f"{config.layers[-1].hidden_dim} (attention pools that layer)")

    # Packager levels must stack bottom-up along the nesting order, and a
    # level must still be expressible after every KEEP reduction below it.
    available = set(LEVELS)
    prev: LayerSpec | None = None
    for spec in config.layers:
        if spec.kind != "packager":
            continue
        if prev is not None and spec.level != prev.level:
            if _LEVEL_RANK[spec.level] <= _LEVEL_RANK[prev.level]:
                raise ConfigError(
                    f"packager levels must be ordered bottom-up: {spec.level!r} "
                    f"cannot follow {prev.level!r}")
        if spec.level not in available:
            raise ConfigError(
                f"level {spec.level!r} is not available after earlier KEEP reductions")
        if spec.mode == "KEEP":
            available = available.intersection(NESTED_ABOVE[spec.level])
        prev = spec


# ---------------------------------------------------------------------------
# parameters


def _uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class GruParams:
    """Gate parameters of one GRU layer (update z, reset r, candidate h)."""

    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, d_in: int, d_h: int, rng: np.random.Generator) -> "GruParams":
        return cls(
            W_z=_uniform_init(rng, d_in, (d_in, d_h)),
            W_r=_uniform_init(rng, d_in, (d_in, d_h)),
            W_h=_uniform_init(rng, d_in, (d_in, d_h)),
            U_z=_uniform_init(rng, d_h, (d_h, d_h)),
            U_r=_uniform_init(rng, d_h, (d_h, d_h)),
            U_h=_uniform_init(rng, d_h, (d_h, d_h)),
            b_z=_zeros((d_h,)),
            b_r=_zeros((d_h,)),
            b_h=_zeros((d_h,)),
        )

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.W_z, self.W_r, self.W_h, self.U_z, self.U_r, self.U_h,
                self.b_z, self.b_r, self.b_h]


@dataclass
class ConvParams:
    kernel: Tensor  # (width, d_in, filters)
    bias: Tensor    # (filters,)

    @classmethod
    def init(cls, width: int, d_in: int, filters: int, rng: np.random.Generator) -> "ConvParams":
        return cls(kernel=_uniform_init(rng, width * d_in, (width, d_in, filters)),
                   bias=_zeros((filters,)))

    def tensors(self) -> list[Tensor]:
        return [self.kernel, self.bias]


@dataclass
class AttentionParams:
    W: Tensor  # (d_h, attention_dim)
    b: Tensor  # (attention_dim,)
    u: Tensor  # (attention_dim,)

    @classmethod
    def init(cls, d_h: int, attention_dim: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(W=_uniform_init(rng, d_h, (d_h, attention_dim)),
                   b=_zeros((attention_dim,)),
                   u=_uniform_init(rng, attention_dim, (attention_dim,)))

    def tensors(self) -> list[Tensor]:
        return [self.W, self.b, self.u]


@dataclass
class ImageParams:
    W: Tensor  # (image_in_dim, embed_dim)
    b: Tensor  # (embed_dim,)

    @classmethod
    def init(cls, image_in_dim: int, embed_dim: int, rng: np.random.Generator) -> "ImageParams":
        return cls(W=_uniform_init(rng, image_in_dim, (image_in_dim, embed_dim)),
                   b=_zeros((embed_dim,)))

    def tensors(self) -> list[Tensor]:
        return [self.W, self.b]


@dataclass
class EncoderParams:
    """All trainable tensors of the paired speech/image encoders."""

    conv: ConvParams
    layers: list[GruParams]
    attention: AttentionParams
    image: ImageParams

    def param_list(self) -> list[Tensor]:
        out = self.conv.tensors()
        for layer in self.layers:
            out.extend(layer.tensors())
        out.extend(self.attention.tensors())
        out.extend(self.image.tensors())
        return out

    def copy(self) -> "EncoderParams":
        def cp(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=t.requires_grad)

        return EncoderParams(
            conv=ConvParams(cp(self.conv.kernel), cp(self.conv.bias)),
            layers=[GruParams(*(cp(t) for t in layer.tensors())) for layer in self.layers],
            attention=AttentionParams(*(cp(t) for t in self.attention.tensors())),
            image=ImageParams(*(cp(t) for t in self.image.tensors())),
        )


def init_params(config: EncoderConfig, frame_dim: int, seed: int) -> EncoderParams:
    """Seeded parameter initialization for a validated config."""
    validate_config(config)
    rng = np.random.default_rng(seed)
    conv = ConvParams.init(config.conv.width, frame_dim, config.conv.filters, rng)
    layers = []
    d_in = config.conv.filters
    for spec in config.layers:
        layers.append(GruParams.init(d_in, spec.hidden_dim, rng))
        d_in = spec.hidden_dim
    attention = AttentionParams.init(d_in, config.attention_dim, rng)
    image = ImageParams.init(config.image_in_dim, config.embed_dim, rng)
    return EncoderParams(conv=conv, layers=layers, attention=attention, image=image)


# ---------------------------------------------------------------------------
# batches


@dataclass
class SequenceBatch:
    """Padded batch of frame sequences with masks and boundary tiers.

    ``data`` is (B, T_max, d); padded positions hold zero vectors, zero
    mask, and zero tier bits.  ``tiers`` maps each item's available levels
    to bit arrays padded to T_max.
    """

    data: Tensor
    lengths: np.ndarray
    mask: np.ndarray
    tiers: list[dict[str, np.ndarray]]

    @classmethod
    def from_frames(cls, frames: Sequence[np.ndarray],
                    tiers: Sequence[dict[str, BoundaryVector]] | None = None) -> "SequenceBatch":
        if not frames:
            raise ValueError("empty batch")
        lengths = np.array([f.shape[0] for f in frames], dtype=np.int64)
        if np.any(lengths < 1):
            raise ValueError("every batch item needs at least one frame")
        d = frames[0].shape[1]
        T = int(lengths.max())
        B = len(frames)
        data = np.zeros((B, T, d))
        mask = np.zeros((B, T))
        padded_tiers: list[dict[str, np.ndarray]] = []
        for i, f in enumerate(frames):
            if f.shape[1] != d:
                raise ShapeError(f"frame dim mismatch in batch: {f.shape[1]} vs {d}")
            L = f.shape[0]
            data[i, :L] = f
            mask[i, :L] = 1.0
            item_tiers: dict[str, np.ndarray] = {}
            if tiers is not None:
                for level, tier in tiers[i].items():
                    bits = tier.bits if isinstance(tier, BoundaryVector) else np.asarray(tier, dtype=np.uint8)
                    if bits.size != L:
                        raise ShapeError(
                            f"tier {level!r} has {bits.size} frames, item has {L}")
                    pad = np.zeros(T, dtype=np.uint8)
                    pad[:L] = bits
                    item_tiers[level] = pad
            padded_tiers.append(item_tiers)
        return cls(data=Tensor(data), lengths=lengths, mask=mask, tiers=padded_tiers)

    @property
    def batch_size(self) -> int:
        return int(self.data.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.data.shape[1])


def _mask_time(h: Tensor, mask: np.ndarray) -> Tensor:
    m = mask[:, :, None]

    def backward(g, table):
        accumulate(table, h, g * m)

    return from_op(h.data * m, (h,), backward)


# ---------------------------------------------------------------------------
# layers


def conv1d(batch: SequenceBatch, params: ConvParams) -> SequenceBatch:
    """Length-preserving 1-D convolution over the time axis (stride 1).

    Symmetric zero padding keeps every boundary position where it was;
    lengths, mask, and tiers pass through unchanged.
    """
    x = batch.data
    B, T, d = x.shape
    width, kd, filters = params.kernel.shape
    if kd != d:
        raise ShapeError(f"conv expects input dim {kd}, got {d}")
    left = (width - 1) // 2
    right = width - 1 - left
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    cols = np.stack([xp[:, k:k + T, :] for k in range(width)], axis=2)  # (B,T,width,d)
    flat = cols.reshape(B * T, width * d)
    wmat = params.kernel.data.reshape(width * d, filters)
    out = (flat @ wmat + params.bias.data).reshape(B, T, filters)

    kernel, bias = params.kernel, params.bias

    def backward(g, table):
        gflat = g.reshape(B * T, filters)
        accumulate(table, bias, gflat.sum(axis=0))
        accumulate(table, kernel, (flat.T @ gflat).reshape(width, d, filters))
        dcols = (gflat @ wmat.T).reshape(B, T, width, d)
        dxp = np.zeros_like(xp)
        for k in range(width):
            dxp[:, k:k + T, :] += dcols[:, :, k, :]
        accumulate(table, x, dxp[:, left:left + T, :])

    h = from_op(out, (x, kernel, bias), backward)
    return SequenceBatch(data=_mask_time(h, batch.mask), lengths=batch.lengths,
                         mask=batch.mask, tiers=batch.tiers)


def _gru_sequence(x: Tensor, resets: np.ndarray, lengths: np.ndarray, p: GruParams) -> Tensor:
    """One tape node wrapping the backend recurrence kernel."""
    B, T, d_in = x.shape
    H = p.hidden_dim
    if d_in != p.input_dim:
        raise ShapeError(f"layer expects input dim {p.input_dim}, got {d_in}")
    w = np.concatenate([p.W_z.data, p.W_r.data, p.W_h.data], axis=1)  # (d_in, 3H)
    bias = np.concatenate([p.b_z.data, p.b_r.data, p.b_h.data])       # (3H,)
    u = np.ascontiguousarray(np.stack([p.U_z.data, p.U_r.data, p.U_h.data]))
    xw = np.ascontiguousarray((x.data.reshape(B * T, d_in) @ w + bias).reshape(B, T, 3 * H))
    h, gates = kernels.gru_forward(xw, resets, u, lengths)

    parents = (x, *p.tensors())

    def backward(g, table):
        dxw, du = kernels.gru_backward(np.ascontiguousarray(g), h, gates, resets, u, lengths)
        flat = dxw.reshape(B * T, 3 * H)
        accumulate(table, x, (flat @ w.T).reshape(B, T, d_in))
        dw = x.data.reshape(B * T, d_in).T @ flat
        accumulate(table, p.W_z, dw[:, :H])
        accumulate(table, p.W_r, dw[:, H:2 * H])
        accumulate(table, p.W_h, dw[:, 2 * H:])
        accumulate(table, p.U_z, du[0])
        accumulate(table, p.U_r, du[1])
        accumulate(table, p.U_h, du[2])
        db = flat.sum(axis=0)
        accumulate(table, p.b_z, db[:H])
        accumulate(table, p.b_r, db[H:2 * H])
        accumulate(table, p.b_h, db[2 * H:])

    return from_op(h, parents, backward)


def _first_step_resets(B: int, T: int) -> np.ndarray:
    resets = np.zeros((B, T), dtype=np.uint8)
    resets[:, 0] = 1
    return resets


def vanilla_forward(batch: SequenceBatch, p: GruParams) -> SequenceBatch:
    """Standard left-to-right GRU over the valid positions of each item."""
    B, T = batch.batch_size, batch.max_len
    h = _gru_sequence(batch.data, _first_step_resets(B, T), batch.lengths, p)
    return SequenceBatch(data=_mask_time(h, batch.mask), lengths=batch.lengths,
                         mask=batch.mask, tiers=batch.tiers)


def _gather_time(h: Tensor, positions: list[np.ndarray], new_T: int) -> Tensor:
    B = h.shape[0]
    H = h.shape[2]
    out = np.zeros((B, new_T, H))
    for b, pos in enumerate(positions):
        out[b, :pos.size] = h.data[b, pos]

    def backward(g, table):
        dh = np.zeros(h.shape)
        for b, pos in enumerate(positions):
            dh[b, pos] = g[b, :pos.size]
        accumulate(table, h, dh)

    return from_op(out, (h,), backward)


def packager_forward(batch: SequenceBatch, level: str, mode: str, p: GruParams) -> SequenceBatch:
    """GRU whose state restarts after every segment-final frame of ``level``.

    ALL keeps the full sequence; KEEP emits only segment-final states and
    shortens each item to its segment count, re-padding the batch and
    projecting every remaining higher tier onto the shortened axis.
    """
    if mode not in MODES:
        raise ValueError(f"unknown packager mode {mode!r}")
    if level not in LEVELS:
        raise ValueError(f"unknown segment level {level!r}")
    B, T = batch.batch_size, batch.max_len
    bits = np.zeros((B, T), dtype=np.uint8)
    for b, item_tiers in enumerate(batch.tiers):
        if level not in item_tiers:
            raise ValueError(f"batch item {b} is missing tier {level!r}")
        bits[b] = item_tiers[level]
        if bits[b, :batch.lengths[b]].sum() < 1:
            raise ValueError(f"batch item {b} has an empty {level!r} tier")

    resets = _first_step_resets(B, T)
    resets[:, 1:] |= bits[:, :-1]
    h = _gru_sequence(batch.data, resets, batch.lengths, p)
    h = _mask_time(h, batch.mask)

    if mode == "ALL":
        return SequenceBatch(data=h, lengths=batch.lengths, mask=batch.mask, tiers=batch.tiers)

    positions = [np.flatnonzero(bits[b, :batch.lengths[b]]) for b in range(B)]
    new_lengths = np.array([pos.size for pos in positions], dtype=np.int64)
    new_T = int(new_lengths.max())
    out = _gather_time(h, positions, new_T)
    new_mask = np.zeros((B, new_T))
    new_tiers: list[dict[str, np.ndarray]] = []
    for b, pos in enumerate(positions):
        new_mask[b, :pos.size] = 1.0
        L = int(batch.lengths[b])
        own = BoundaryVector(bits=bits[b, :L], level=level)
        projected: dict[str, np.ndarray] = {}
        for upper in NESTED_ABOVE[level]:
            if upper not in batch.tiers[b]:
                continue
            upper_tier = BoundaryVector(bits=batch.tiers[b][upper][:L], level=upper)
            short = project_boundaries(own, upper_tier)
            pad = np.zeros(new_T, dtype=np.uint8)
            pad[:short.bits.size] = short.bits
            projected[upper] = pad
        new_tiers.append(projected)
    return SequenceBatch(data=_mask_time(out, new_mask), lengths=new_lengths,
                         mask=new_mask, tiers=new_tiers)


def gru_step(h_prev: Tensor, x: Tensor, p: GruParams) -> Tensor:
    """Single GRU step on plain vectors; the oracle-friendly slow path."""
    if h_prev.shape != (p.hidden_dim,) or x.shape != (p.input_dim,):
        raise ShapeError(
            f"gru_step expects h_prev ({p.hidden_dim},) and x ({p.input_dim},), "
            f"got {h_prev.shape} and {x.shape}")
    hp = reshape(h_prev, (1, p.hidden_dim))
    xx = reshape(x, (1, p.input_dim))
    z = sigmoid(add(add(matmul(xx, p.W_z), matmul(hp, p.U_z)), p.b_z))
    r = sigmoid(add(add(matmul(xx, p.W_r), matmul(hp, p.U_r)), p.b_r))
    c = tanh(add(add(matmul(xx, p.W_h), matmul(mul(r, hp), p.U_h)), p.b_h))
    one = Tensor(np.ones((1, p.hidden_dim)))
    h = add(mul(sub(one, z), hp), mul(z, c))
    return reshape(h, (p.hidden_dim,))


def _weighted_time_sum(alpha: Tensor, h: Tensor) -> Tensor:
    out = np.einsum("bt,bth->bh", alpha.data, h.data)

    def backward(g, table):
        accumulate(table, alpha, np.einsum("bh,bth->bt", g, h.data))
        accumulate(table, h, alpha.data[:, :, None] * g[:, None, :])

    return from_op(out, (alpha, h), backward)


def attention_pool(batch: SequenceBatch, params: AttentionParams) -> Tensor:
    """Additive self-attention over valid positions, then L2 normalization."""
    if np.any(batch.lengths < 1):
        raise ValueError("attention needs at least one valid position per item")
    B, T, H = batch.data.shape
    A = params.W.shape[1]
    flat = reshape(batch.data, (B * T, H))
    hidden = tanh(add(matmul(flat, params.W), params.b))
    scores = reshape(matmul(hidden, reshape(params.u, (A, 1))), (B, T))
    alpha = masked_softmax(scores, batch.mask)
    pooled = _weighted_time_sum(alpha, batch.data)
    return l2_normalize(pooled, axis=-1)


def encode_image(vec: Tensor, params: ImageParams) -> Tensor:
    """Linear projection of image features, L2-normalized."""
    single = vec.data.ndim == 1
    x = reshape(vec, (1, vec.shape[0])) if single else vec
    if x.data.ndim != 2 or x.shape[1] != params.W.shape[0]:
        raise ShapeError(
            f"image encoder expects input dim {params.W.shape[0]}, got {vec.shape}")
    out = l2_normalize(add(matmul(x, params.W), params.b), axis=-1)
    return reshape(out, (params.W.shape[1],)) if single else out


# ---------------------------------------------------------------------------
# model (de)serialization


def config_to_dict(config: EncoderConfig) -> dict:
    return {
        "conv": {"filters": config.conv.filters, "width": config.conv.width,
                 "stride": config.conv.stride},
        "layers": [
            {"kind": s.kind, "hidden_dim": s.hidden_dim, "level": s.level, "mode": s.mode}
            for s in config.layers
        ],
        "attention_dim": config.attention_dim,
        "embed_dim": config.embed_dim,
        "image_in_dim": config.image_in_dim,
    }


def config_from_dict(d: dict) -> EncoderConfig:
    return EncoderConfig(
        conv=ConvSpec(**d["conv"]),
        layers=tuple(LayerSpec(kind=s["kind"], hidden_dim=s["hidden_dim"],
                               level=s.get("level"), mode=s.get("mode"))
                     for s in d["layers"]),
        attention_dim=d["attention_dim"],
        embed_dim=d["embed_dim"],
        image_in_dim=d["image_in_dim"],
    )


def _named_tensors(params: EncoderParams) -> list[tuple[str, Tensor]]:
    named = [("conv.kernel", params.conv.kernel), ("conv.bias", params.conv.bias)]
    gate_names = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
    for i, layer in enumerate(params.layers):
        named.extend((f"layer{i}.{n}", t) for n, t in zip(gate_names, layer.tensors()))
    named.extend(zip(("attention.W", "attention.b", "attention.u"), params.attention.tensors()))
    named.extend(zip(("image.W", "image.b"), params.image.tensors()))
    return named


def save_model(path, config: EncoderConfig, params: EncoderParams) -> None:
    arrays = {name: t.data for name, t in _named_tensors(params)}
    arrays["__config__"] = np.frombuffer(
        json.dumps(config_to_dict(config), sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_model(path) -> tuple[EncoderConfig, EncoderParams]:
    with np.load(path) as data:
        config = config_from_dict(json.loads(bytes(data["__config__"]).decode("utf-8")))
        get = lambda name: Tensor(data[name], requires_grad=True)
        gate_names = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
        layers = [GruParams(*(get(f"layer{i}.{n}") for n in gate_names))
                  for i in range(len(config.layers))]
        params = EncoderParams(
            conv=ConvParams(get("conv.kernel"), get("conv.bias")),
            layers=layers,
            attention=AttentionParams(get("attention.W"), get("attention.b"), get("attention.u")),
            image=ImageParams(get("image.W"), get("image.b")),
        )
    return config, params


def encode_utterance(config: EncoderConfig, params: EncoderParams,
                     batch: SequenceBatch) -> Tensor:
    """Full speech encoder: conv, recurrent stack, attention pooling."""
    validate_config(config)
    current = conv1d(batch, params.conv)
    prev_dim = config.conv.filters
    for i, (spec, layer) in enumerate(zip(config.layers, params.layers)):
        inp = current
        if spec.kind == "vanilla":
            current = vanilla_forward(inp, layer)
        else:
            current = packager_forward(inp, spec.level, spec.mode, layer)
        length_preserving = spec.kind == "vanilla" or spec.mode == "ALL"
        if i >= 1 and length_preserving and spec.hidden_dim == prev_dim:
            current = SequenceBatch(data=add(current.data, inp.data),
                                    lengths=current.lengths, mask=current.mask,
                                    tiers=current.tiers)
        prev_dim = spec.hidden_dim
    return attention_pool(current, params.attention)
