"""The correction network: SAP encoder + speech encoder + transformer decoder.

Shapes used throughout: ``B`` batch, ``T`` frames (100 ms each), ``C = 2``
speakers, ``F = 345`` stacked log-Mel dims.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import SapSequence

_CKPT_MAGIC = b"DCCKPT1\n"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_speakers: int = 2
    emb_dim: int = 256
    sap_hidden: int = 512
    dconv_kernel: int = 3
    n_mels_stacked: int = 345
    conv_channels: int = 256
    conv_kernel: tuple[int, int] = (3, 7)
    conv_stride: tuple[int, int] = (1, 5)
    conv_padding: tuple[int, int] = (1, 0)
    decoder_layers: int = 2
    attn_heads: int = 4
    ff_dim: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        if self.n_speakers != 2:
            raise ValueError("only 2-speaker correction is supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.conv_kernel[0] != 2 * self.conv_padding[0] + 1 or self.conv_stride[0] != 1:
            raise ValueError("time axis of the speech encoder must preserve length")
        object.__setattr__(self, "conv_kernel", tuple(self.conv_kernel))
        object.__setattr__(self, "conv_stride", tuple(self.conv_stride))
        object.__setattr__(self, "conv_padding", tuple(self.conv_padding))

    @property
    def freq_trace(self) -> list[int]:
        """Frequency-axis length after the input and each Conv2d layer."""
        sizes = [self.n_mels_stacked]
        for _ in range(2):
            k, s, p = self.conv_kernel[1], self.conv_stride[1], self.conv_padding[1]
            sizes.append((sizes[-1] + 2 * p - k) // s + 1)
        return sizes

    @property
    def speech_linear_in(self) -> int:
        return self.conv_channels * self.freq_trace[-1]

    @property
    def decoder_in(self) -> int:
        return self.emb_dim * (1 + self.n_speakers)


class ChannelNorm(nn.LayerNorm):
    """LayerNorm over dim 1 of a channels-first tensor."""

    def forward(self, x):
        return super().forward(x.movedim(1, -1)).movedim(-1, 1)


class SapEncoder(nn.Module):
    """Per-speaker temporal conv block with a skip around the conv stack.

    The same weights encode every speaker; speaker ``c`` sees the 2-vector
    (own logit, other logit) at each frame.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.linear = nn.Linear(cfg.n_speakers, cfg.emb_dim)
        self.pw1 = nn.Conv1d(cfg.emb_dim, cfg.sap_hidden, 1)
        self.act1 = nn.PReLU()
        self.norm1 = ChannelNorm(cfg.sap_hidden)
        self.dconv = nn.Conv1d(
            cfg.sap_hidden, cfg.sap_hidden, cfg.dconv_kernel, padding=cfg.dconv_kernel // 2, groups=cfg.sap_hidden
        )
        self.act2 = nn.PReLU()
        self.norm2 = ChannelNorm(cfg.sap_hidden)
        self.pw2 = nn.Conv1d(cfg.sap_hidden, cfg.emb_dim, 1)

    def forward(self, sap):
        # sap: (B, T, 2) -> (B, T, 2, emb)
        if sap.dim() != 3 or sap.shape[-1] != 2:
            raise ValueError(f"SAP input must be (B, T, 2), got {tuple(sap.shape)}")
        b, t, _ = sap.shape
        streams = torch.stack([sap, sap.flip(-1)], dim=1).reshape(b * 2, t, 2)
        skip = self.linear(streams)
        x = self.pw1(skip.transpose(1, 2))
        x = self.norm1(self.act1(x))
        x = self.norm2(self.act2(self.dconv(x)))
        x = self.pw2(x).transpose(1, 2) + skip
        return x.reshape(b, 2, t, -1).transpose(1, 2)


class SpeechEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_in = cfg.n_mels_stacked
        kw = dict(kernel_size=cfg.conv_kernel, stride=cfg.conv_stride, padding=cfg.conv_padding)
        self.conv1 = nn.Conv2d(1, cfg.conv_channels, **kw)
        self.act1 = nn.PReLU()
        self.norm1 = ChannelNorm(cfg.conv_channels)
        self.conv2 = nn.Conv2d(cfg.conv_channels, cfg.conv_channels, **kw)
        self.act2 = nn.PReLU()
        self.norm2 = ChannelNorm(cfg.conv_channels)
        self.linear = nn.Linear(cfg.speech_linear_in, cfg.emb_dim)

    def forward(self, feats):
        # feats: (B, T, F) -> (B, T, emb)
        if feats.dim() != 3 or feats.shape[-1] != self.n_in:
            raise ValueError(f"features must be (B, T, {self.n_in}), got {tuple(feats.shape)}")
        x = feats.unsqueeze(1)
        x = self.norm1(self.act1(self.conv1(x)))
        x = self.norm2(self.act2(self.conv2(x)))
        b, c, t, f = x.shape
        return self.linear(x.permute(0, 2, 1, 3).reshape(b, t, c * f))


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(cfg.decoder_in, cfg.emb_dim)
        layer = nn.TransformerEncoderLayer(
            cfg.emb_dim, cfg.attn_heads, cfg.ff_dim, cfg.dropout, batch_first=True, norm_first=True
        )
        self.layers = nn.TransformerEncoder(
            layer, cfg.decoder_layers, norm=nn.LayerNorm(cfg.emb_dim), enable_nested_tensor=False
        )
        self.head = nn.Linear(cfg.emb_dim, cfg.n_speakers)

    def forward(self, x, pad_mask=None):
        return self.head(self.layers(self.proj(x), src_key_padding_mask=pad_mask))


class CorrectionModel(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.sap_encoder = SapEncoder(config)
        self.speech_encoder = SpeechEncoder(config)
        self.decoder = Decoder(config)

    def forward(self, feats, sap, pad_mask=None):
        """Map features (B, T, F) and initial logits (B, T, 2) to corrected logits (B, T, 2).

        ``pad_mask`` (B, T) is True on padded frames.
        """
        if feats.shape[:2] != sap.shape[:2]:
            raise ValueError(f"length mismatch: features {tuple(feats.shape)} vs SAP {tuple(sap.shape)}")
        speech = self.speech_encoder(feats)
        spk = self.sap_encoder(sap)
        x = torch.cat([speech, spk.flatten(2)], dim=-1)
        return self.decoder(x, pad_mask)


def build_model(config: ModelConfig = ModelConfig(), seed: int = 0) -> CorrectionModel:
    """Seeded construction that leaves the global torch RNG untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CorrectionModel(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


@torch.no_grad()
def correct(model: CorrectionModel, features, sap: SapSequence) -> SapSequence:
    """Run the model on one recording and return corrected logits."""
    values = features.values if hasattr(features, "values") else features
    if len(values) != len(sap):
        raise ValueError(f"length mismatch: {len(values)} feature frames vs {len(sap)} SAP frames")
    was_training = model.training
    model.eval()
    param = next(model.parameters())
    x = torch.as_tensor(np.asarray(values), dtype=param.dtype).unsqueeze(0)
    z = torch.as_tensor(sap.values, dtype=param.dtype).unsqueeze(0)
    out = model(x, z)[0].double().numpy()
    model.train(was_training)
    return SapSequence(out, sap.speakers, sap.frame_duration)


def average_checkpoints(models: Sequence[CorrectionModel]) -> CorrectionModel:
    """Parameter-wise arithmetic mean of models sharing one config."""
    if not models:
        raise ValueError("no checkpoints to average")
    config = models[0].config
    for m in models[1:]:
        if m.config != config:
            raise ValueError("cannot average checkpoints with different configs")
    states = [m.state_dict() for m in models]
    avg = {}
    for name, first in states[0].items():
        # running mean: exact for identical inputs
        acc = first.detach().double().clone()
        for k, state in enumerate(states[1:], start=2):
            acc += (state[name].double() - acc) / k
        avg[name] = acc.to(first.dtype)
    out = copy.deepcopy(models[0])
    out.load_state_dict(avg)
    return out


# ---------------------------------------------------------------------------
# checkpoint files


def save_checkpoint(path, model: CorrectionModel, meta: dict | None = None) -> None:
    """Write a DCCKPT1 file: magic, u64 header length, JSON header, raw tensors."""
    tensors, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().contiguous().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        tensors.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format": "DCCKPT1", "config": asdict(model.config), "tensors": tensors, "meta": meta or {}}).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def read_checkpoint_header(path) -> dict:
    raw = Path(path).read_bytes()
    return _parse_header(raw, path)[0]


def _parse_header(raw: bytes, path):
    if raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a DCCKPT1 checkpoint")
    pos = len(_CKPT_MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    try:
        header = json.loads(raw[pos : pos + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    return header, pos + n


def load_checkpoint(path) -> CorrectionModel:
    raw = Path(path).read_bytes()
    header, base = _parse_header(raw, path)
    cfg = header["config"]
    for key in ("conv_kernel", "conv_stride", "conv_padding"):
        cfg[key] = tuple(cfg[key])
    model = CorrectionModel(ModelConfig(**cfg))
    state = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        if start + entry["nbytes"] > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]), count=int(np.prod(entry["shape"], dtype=np.int64)), offset=start)
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    dtypes = {t.dtype for t in state.values()}
    if dtypes == {torch.float64}:
        model = model.double()
    model.load_state_dict(state)
    return model
