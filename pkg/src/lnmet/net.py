"""A two-level 3-D encoder-decoder with attention injection before each
output head, plus a small versioned checkpoint format."""

from __future__ import annotations

import json
import struct

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InputError

CHECKPOINT_MAGIC = b"LNCK"
CHECKPOINT_VERSION = 1


def attention_inject(features, a):
    """Scale features by an attention map, broadcast over channels.

    ``features`` is ``(B, C, *S)`` or ``(C, *S)``; ``a`` is ``(B, *S)``,
    ``(B, 1, *S)`` or ``S``-shaped.  Works on tensors and arrays alike.
    """
    spatial = tuple(features.shape[-3:])
    if tuple(a.shape[-3:]) != spatial:
        raise InputError(f"attention grid {tuple(a.shape[-3:])} != feature grid {spatial}")
    if features.ndim == 5:
        if a.ndim == 3:
            a = a[None, None]
        elif a.ndim == 4:
            a = a[:, None]
        if a.shape[0] not in (1, features.shape[0]):
            raise InputError("attention batch size does not match features")
    elif features.ndim == 4:
        if a.ndim == 3:
            a = a[None]
    else:
        raise InputError("features must be (B, C, W, H, D) or (C, W, H, D)")
    return features * a


def _he_init(conv: nn.Conv3d) -> nn.Conv3d:
    # the default init shrinks activations layer by layer in this shallow net
    nn.init.kaiming_normal_(conv.weight, a=0.01, nonlinearity="leaky_relu")
    nn.init.zeros_(conv.bias)
    return conv


def conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        _he_init(nn.Conv3d(cin, cout, 3, padding=1)),
        nn.LeakyReLU(0.01),
        _he_init(nn.Conv3d(cout, cout, 3, padding=1)),
        nn.LeakyReLU(0.01),
    )


class Encoder(nn.Module):
    def __init__(self, in_channels: int = 2, channels=(8, 16)):
        super().__init__()
        c1, c2 = channels
        self.enc1 = conv_block(in_channels, c1)
        self.enc2 = conv_block(c1, c2)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool3d(e1, 2))
        return e1, e2


class MicroNet(nn.Module):
    """Encoder-decoder with deep-supervision heads at full and half resolution.

    ``forward`` returns logits per level, full resolution first.  When
    attention maps are given (one per level) they multiply the penultimate
    features right before each 1x1x1 output convolution.
    """

    levels = 2

    def __init__(self, in_channels: int = 2, channels=(8, 16)):
        super().__init__()
        c1, c2 = channels
        self.config = {"in_channels": in_channels, "channels": list(channels)}
        self.encoder = Encoder(in_channels, channels)
        self.up = nn.ConvTranspose3d(c2, c1, 2, stride=2)
        self.dec1 = conv_block(2 * c1, c1)
        self.head0 = nn.Conv3d(c1, 2, 1)
        self.head1 = nn.Conv3d(c2, 2, 1)

    def penultimate(self, x):
        e1, e2 = self.encoder(x)
        d1 = self.dec1(torch.cat([self.up(e2), e1], dim=1))
        return d1, e2

    def forward(self, x, attention=None):
        if min(x.shape[-3:]) < 2 or any(n % 2 for n in x.shape[-3:]):
            raise InputError(f"spatial dims must be even, got {tuple(x.shape[-3:])}")
        d1, e2 = self.penultimate(x)
        if attention is not None:
            d1 = attention_inject(d1, attention[0])
            e2 = attention_inject(e2, attention[1])
        return [self.head0(d1), self.head1(e2)]


def downsample_labels(label, factor: int = 2):
    """Nearest-neighbour label pooling: keep the first voxel of every block."""
    return label[..., ::factor, ::factor, ::factor]


def attention_pyramid(att: torch.Tensor, levels: int = 2) -> list[torch.Tensor]:
    """``(B, W, H, D)`` attention -> per-level maps via 2x block-max pooling."""
    out = [att]
    for _ in range(levels - 1):
        out.append(F.max_pool3d(out[-1][:, None], 2, ceil_mode=True)[:, 0])
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: nn.Module, meta: dict | None = None) -> None:
    state = model.state_dict()
    entries = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = json.dumps({
        "arch": type(model).__name__,
        "config": getattr(model, "config", {}),
        "params": entries,
        "meta": meta or {},
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for v in state.values():
            fh.write(v.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(header, state_dict)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen])
    offset = 12 + hlen
    state = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if offset + 4 * n > len(raw):
            raise InputError(f"{path}: truncated parameter payload")
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * n
    if offset != len(raw):
        raise InputError(f"{path}: trailing bytes after parameter payload")
    return header, state


def load_micronet(path) -> tuple[MicroNet, dict]:
    header, state = load_checkpoint(path)
    if header["arch"] != "MicroNet":
        raise InputError(f"{path}: expected a MicroNet checkpoint, found {header['arch']}")
    cfg = header["config"]
    net = MicroNet(cfg["in_channels"], tuple(cfg["channels"]))
    net.load_state_dict(state)
    net.eval()
    return net, header["meta"]
