"""Searchable UNet backbone.

Each searchable block chooses among six candidate convolution kinds:
in-plane 2D (3 or 5), full 3D (3 or 5), and pseudo-3D (an in-plane
convolution followed by a through-plane one). Every candidate is the
composite batch-norm -> ReLU -> conv, and each owns its normalization
parameters so a one-hot relaxation reduces exactly to the single op.

The choice is relaxed continuously: per block, six logits alpha map
through a softmax to weights gamma, the block output is the
gamma-weighted sum of all candidates, and the final architecture takes
the top-weight candidate per block.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, IoError, ShapeError


class OpKind(Enum):
    CONV2D_K3 = "Conv2D_k3"
    CONV2D_K5 = "Conv2D_k5"
    CONV3D_K3 = "Conv3D_k3"
    CONV3D_K5 = "Conv3D_k5"
    P3D_K3 = "P3D_k3"
    P3D_K5 = "P3D_k5"

    @property
    def index(self) -> int:
        return list(OpKind).index(self)


N_OPS = len(OpKind)

# kernel geometry in (z, y, x); P3D lists the in-plane then through-plane factors
_KERNELS = {
    OpKind.CONV2D_K3: [(1, 3, 3)],
    OpKind.CONV2D_K5: [(1, 5, 5)],
    OpKind.CONV3D_K3: [(3, 3, 3)],
    OpKind.CONV3D_K5: [(5, 5, 5)],
    OpKind.P3D_K3: [(1, 3, 3), (3, 1, 1)],
    OpKind.P3D_K5: [(1, 5, 5), (5, 1, 1)],
}


class CompositeOp(nn.Module):
    """Batch norm, ReLU, then a same-padded convolution."""

    def __init__(self, in_channels: int, out_channels: int, kernel):
        super().__init__()
        self.norm = nn.BatchNorm3d(in_channels)
        self.conv = nn.Conv3d(
            in_channels,
            out_channels,
            kernel_size=kernel,
            padding=tuple(k // 2 for k in kernel),
        )

    def forward(self, x):
        return self.conv(F.relu(self.norm(x)))


def make_op(kind: OpKind, in_channels: int, out_channels: int) -> nn.Module:
    """One candidate op; P3D kinds chain two composites, channels in->out->out."""
    factors = _KERNELS[kind]
    if len(factors) == 1:
        return CompositeOp(in_channels, out_channels, factors[0])
    return nn.Sequential(
        CompositeOp(in_channels, out_channels, factors[0]),
        CompositeOp(out_channels, out_channels, factors[1]),
    )


class MixedBlock(nn.Module):
    """All six candidates in parallel, combined by softmax(alpha) weights."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.ops = nn.ModuleList(
            make_op(kind, in_channels, out_channels) for kind in OpKind
        )
        self.alpha = nn.Parameter(torch.zeros(N_OPS))

    def forward(self, x, gamma_override=None):
        if gamma_override is None:
            gamma = torch.softmax(self.alpha, dim=0)
        else:
            gamma = torch.as_tensor(gamma_override, dtype=x.dtype, device=x.device)
        out = None
        for k, op in enumerate(self.ops):
            if gamma_override is not None and float(gamma[k]) == 0.0:
                continue
            term = gamma[k] * op(x)
            out = term if out is None else out + term
        return out


def softmax_weights(alpha) -> np.ndarray:
    """gamma_k = exp(alpha_k) / sum_m exp(alpha_m), with max-subtraction."""
    a = np.asarray(alpha, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError("alpha logits must be finite")
    e = np.exp(a - a.max())
    return e / e.sum()


@dataclass(frozen=True)
class ArchParams:
    """Per-block logits over the op set."""

    alpha: dict[str, np.ndarray]

    def gamma(self, block_id: str) -> np.ndarray:
        return softmax_weights(self.alpha[block_id])

    @staticmethod
    def from_model(model: "NasUNet") -> "ArchParams":
        return ArchParams(
            {
                bid: block.alpha.detach().cpu().numpy().copy()
                for bid, block in model.searchable_blocks()
            }
        )


@dataclass(frozen=True)
class DerivedArch:
    """The argmax-selected op per block (ties break to the lowest index)."""

    chosen: dict[str, OpKind]


def derive_architecture(arch: ArchParams) -> DerivedArch:
    chosen = {}
    for block_id, alpha in arch.alpha.items():
        gamma = softmax_weights(alpha)
        chosen[block_id] = list(OpKind)[int(np.argmax(gamma))]
    return DerivedArch(chosen)


def arch_to_json(arch: ArchParams) -> dict:
    derived = derive_architecture(arch)
    return {
        block_id: {
            "alpha": [float(v) for v in alpha],
            "chosen": derived.chosen[block_id].value,
        }
        for block_id, alpha in sorted(arch.alpha.items())
    }


def arch_from_json(doc: dict) -> tuple[ArchParams, DerivedArch]:
    alpha = {bid: np.asarray(entry["alpha"], dtype=np.float64) for bid, entry in doc.items()}
    chosen = {bid: OpKind(entry["chosen"]) for bid, entry in doc.items()}
    return ArchParams(alpha), DerivedArch(chosen)


@dataclass(frozen=True)
class NasUNetConfig:
    levels: int = 3
    base_channels: int = 8
    in_channels: int = 1
    out_channels: int = 2
    head: str = "segmentation"  # or "regression"
    searchable: tuple[str, ...] | None = None  # None -> every conv block

    def __post_init__(self):
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if min(self.base_channels, self.in_channels, self.out_channels) < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.head not in ("segmentation", "regression"):
            raise ConfigError(f"unknown head {self.head!r}")

    def block_ids(self) -> list[str]:
        enc = [f"enc{l}" for l in range(self.levels - 1)]
        dec = [f"dec{l}" for l in reversed(range(self.levels - 1))]
        return enc + ["bottleneck"] + dec

    def to_json(self) -> dict:
        d = {
            "levels": self.levels,
            "base_channels": self.base_channels,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "head": self.head,
        }
        if self.searchable is not None:
            d["searchable"] = list(self.searchable)
        return d

    @staticmethod
    def from_json(d: dict) -> "NasUNetConfig":
        d = dict(d)
        if "searchable" in d:
            d["searchable"] = tuple(d["searchable"])
        return NasUNetConfig(**d)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class NasUNet(nn.Module):
    """Encoder-decoder with skip connections over searchable conv blocks.

    Downsampling is 2x max pooling, upsampling nearest-neighbor 2x
    followed by a 1x1x1 conv; inputs not divisible by 2^(levels-1) are
    zero-padded internally and cropped back.
    """

    def __init__(self, cfg: NasUNetConfig, arch: DerivedArch | str = "mixed"):
        super().__init__()
        self.cfg = cfg
        self.mixed = arch == "mixed"
        if not self.mixed:
            missing = set(self._searchable_ids(cfg)) - set(arch.chosen)
            if missing:
                raise ConfigError(f"arch missing blocks: {sorted(missing)}")

        L = cfg.levels
        chans = [cfg.base_channels * (2**l) for l in range(L)]
        self._blocks = nn.ModuleDict()
        searchable = set(self._searchable_ids(cfg))

        def block(bid, c_in, c_out):
            if bid in searchable and self.mixed:
                return MixedBlock(c_in, c_out)
            if bid in searchable:
                return make_op(arch.chosen[bid], c_in, c_out)
            return make_op(OpKind.CONV3D_K3, c_in, c_out)

        for l in range(L - 1):
            c_in = cfg.in_channels if l == 0 else chans[l - 1]
            self._blocks[f"enc{l}"] = block(f"enc{l}", c_in, chans[l])
        self._blocks["bottleneck"] = block("bottleneck", chans[L - 2], chans[L - 1])
        self.pool = nn.MaxPool3d(2)
        self._up_convs = nn.ModuleDict()
        for l in reversed(range(L - 1)):
            self._up_convs[f"dec{l}"] = nn.Conv3d(chans[l + 1], chans[l], 1)
            self._blocks[f"dec{l}"] = block(f"dec{l}", 2 * chans[l], chans[l])
        self.head_conv = nn.Conv3d(chans[0], cfg.out_channels, 1)

    @staticmethod
    def _searchable_ids(cfg: NasUNetConfig) -> list[str]:
        if cfg.searchable is None:
            return cfg.block_ids()
        unknown = set(cfg.searchable) - set(cfg.block_ids())
        if unknown:
            raise ConfigError(f"unknown searchable blocks: {sorted(unknown)}")
        return [b for b in cfg.block_ids() if b in cfg.searchable]

    def searchable_blocks(self):
        for bid in self._searchable_ids(self.cfg):
            blk = self._blocks[bid]
            if isinstance(blk, MixedBlock):
                yield bid, blk

    def alpha_parameters(self):
        return [blk.alpha for _, blk in self.searchable_blocks()]

    def weight_parameters(self):
        alphas = {id(a) for a in self.alpha_parameters()}
        return [p for p in self.parameters() if id(p) not in alphas]

    def forward(self, x):
        if x.dim() != 5:
            raise ShapeError(f"expected (batch, channel, z, y, x), got {tuple(x.shape)}")
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"expected {self.cfg.in_channels} input channels, got {x.shape[1]}"
            )
        multiple = 2 ** (self.cfg.levels - 1)
        spatial = x.shape[2:]
        pads = [(multiple - s % multiple) % multiple for s in spatial]
        if any(pads):
            # F.pad takes (x_lo, x_hi, y_lo, y_hi, z_lo, z_hi)
            x = F.pad(x, (0, pads[2], 0, pads[1], 0, pads[0]))

        skips = []
        for l in range(self.cfg.levels - 1):
            x = self._blocks[f"enc{l}"](x)
            skips.append(x)
            x = self.pool(x)
        x = self._blocks["bottleneck"](x)
        for l in reversed(range(self.cfg.levels - 1)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self._up_convs[f"dec{l}"](x)
            x = torch.cat([skips[l], x], dim=1)
            x = self._blocks[f"dec{l}"](x)
        x = self.head_conv(x)
        if any(pads):
            x = x[:, :, : spatial[0], : spatial[1], : spatial[2]]
        if self.cfg.head == "segmentation":
            return torch.softmax(x, dim=1)
        return x


def build_unet(cfg: NasUNetConfig, arch: DerivedArch | str = "mixed") -> NasUNet:
    if arch != "mixed" and not isinstance(arch, DerivedArch):
        raise ConfigError("arch must be DerivedArch or the string 'mixed'")
    return NasUNet(cfg, arch)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def segmentation_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Soft Dice over foreground classes plus cross-entropy, equally weighted."""
    eps = 1e-6
    n_classes = probs.shape[1]
    onehot = F.one_hot(target.long(), n_classes).permute(0, 4, 1, 2, 3).to(probs.dtype)
    dims = (0, 2, 3, 4)
    inter = (probs * onehot).sum(dim=dims)
    denom = probs.sum(dim=dims) + onehot.sum(dim=dims)
    dice = (2 * inter + eps) / (denom + eps)
    dice_loss = 1.0 - dice[1:].mean() if n_classes > 1 else 1.0 - dice.mean()
    ce = F.nll_loss(torch.log(probs.clamp_min(1e-7)), target.long())
    return dice_loss + ce


def heatmap_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(pred, target)


@dataclass
class SearchState:
    """Optimizer pair for alternating first-order architecture search."""

    opt_weights: torch.optim.Optimizer
    opt_alpha: torch.optim.Optimizer
    mode: str = "alternating"  # or "single_level"
    loss_fn: object = segmentation_loss
    step: int = 0


def make_search_state(
    model: NasUNet,
    lr_weights: float,
    lr_alpha: float,
    mode: str = "alternating",
    loss_fn=segmentation_loss,
) -> SearchState:
    if mode not in ("alternating", "single_level"):
        raise ConfigError(f"unknown search mode {mode!r}")
    alphas = model.alpha_parameters()
    if not alphas:
        raise ConfigError("model has no searchable blocks; build with arch='mixed'")
    return SearchState(
        opt_weights=torch.optim.Adam(model.weight_parameters(), lr=lr_weights),
        opt_alpha=torch.optim.Adam(alphas, lr=lr_alpha),
        mode=mode,
        loss_fn=loss_fn,
    )


def search_step(model: NasUNet, train_batch, val_batch, state: SearchState) -> SearchState:
    """One alternating update: op weights on the train batch, then the
    architecture logits on the validation batch (single-level mode
    updates both on the train batch)."""
    xt, yt = train_batch
    model.train()

    state.opt_weights.zero_grad(set_to_none=True)
    loss_t = state.loss_fn(model(xt), yt)
    loss_t.backward()
    state.opt_weights.step()

    if state.mode == "alternating":
        xv, yv = val_batch
    else:
        xv, yv = train_batch
    state.opt_alpha.zero_grad(set_to_none=True)
    loss_v = state.loss_fn(model(xv), yv)
    loss_v.backward()
    state.opt_alpha.step()

    state.step += 1
    return state


def save_checkpoint(
    out_dir: str | Path,
    model: NasUNet,
    arch: DerivedArch | str,
    epoch: int,
    extra_state: dict | None = None,
) -> None:
    """Opaque checkpoint file plus a model.json manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {"model": model.state_dict()}
        if extra_state:
            payload.update(extra_state)
        torch.save(payload, out_dir / "checkpoint.pt")
        arch_doc = (
            "mixed"
            if arch == "mixed"
            else {bid: kind.value for bid, kind in sorted(arch.chosen.items())}
        )
        manifest = {
            "config": model.cfg.to_json(),
            "config_hash": model.cfg.content_hash(),
            "arch": arch_doc,
            "arch_hash": hashlib.sha256(
                json.dumps(arch_doc, sort_keys=True).encode()
            ).hexdigest()[:16],
            "epoch": epoch,
        }
        (out_dir / "model.json").write_text(json.dumps(manifest, indent=1))
    except OSError as e:
        raise IoError(f"cannot write checkpoint under {out_dir}: {e}") from e


def load_checkpoint(out_dir: str | Path) -> tuple[NasUNet, dict, dict]:
    """Returns (model, manifest, raw checkpoint payload)."""
    out_dir = Path(out_dir)
    try:
        manifest = json.loads((out_dir / "model.json").read_text())
        payload = torch.load(out_dir / "checkpoint.pt", weights_only=False)
    except OSError as e:
        raise IoError(f"cannot read checkpoint under {out_dir}: {e}") from e
    cfg = NasUNetConfig.from_json(manifest["config"])
    if manifest["arch"] == "mixed":
        arch = "mixed"
    else:
        arch = DerivedArch({bid: OpKind(v) for bid, v in manifest["arch"].items()})
    model = NasUNet(cfg, arch)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, manifest, payload
