"""ABXI forward computation in PyTorch.

Row-vector convention throughout: activations are ``(..., T, d)`` and every
dense map is ``X @ W``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .alignment import ALIGNMENTS, Batch
from .errors import ConfigError

DLORA_MODES = ("lora", "none", "encoders", "projectors")
ILORA_MODES = ("lora", "none", "proj3", "proj2")
TAGS = ("X", "A", "B")
_MASK_FILL = -1e9


def round_to_multiple(x: float, k: int = 8) -> int:
    return max(k, int(round(x / k)) * k)


@dataclass(frozen=True)
class ModelConfig:
    n_items: int
    d: int = 256
    max_len: int = 50
    n_heads: int = 2
    n_layers: int = 1
    ffn_dim: int | None = None
    proj_dim: int | None = None
    r_d: int = 64
    r_i: int = 64
    dropout: float = 0.3
    swish_beta: float = 1.0
    tau: float = 0.75
    n_neg: int = 128
    alignment: str = "task"
    dlora: str = "lora"
    ilora: str = "lora"
    projectors: bool = True
    single_proj_dropout: bool = False
    ln_eps: float = 1e-8
    init_std: float = 0.02

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ConfigError("; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        if self.n_items < 1:
            out.append("n_items must be positive")
        if self.d < 1 or self.d % self.n_heads:
            out.append(f"d={self.d} must be divisible by n_heads={self.n_heads}")
        if self.max_len < 2:
            out.append("max_len must be >= 2")
        if self.n_layers < 1:
            out.append("n_layers must be >= 1")
        for name in ("r_d", "r_i"):
            r = getattr(self, name)
            if not (r == 0 or 0 < r < self.d):
                out.append(f"{name}={r} must be 0 or in (0, d={self.d})")
        if not 0 <= self.dropout < 1:
            out.append("dropout must be in [0, 1)")
        if self.tau <= 0:
            out.append("tau must be positive")
        if self.n_neg < 0:
            out.append("n_neg must be >= 0")
        if self.alignment not in ALIGNMENTS:
            out.append(f"alignment must be one of {ALIGNMENTS}")
        if self.dlora not in DLORA_MODES:
            out.append(f"dlora must be one of {DLORA_MODES}")
        if self.ilora not in ILORA_MODES:
            out.append(f"ilora must be one of {ILORA_MODES}")
        if self.ilora in ("proj3", "proj2") and not self.projectors:
            out.append("projector-based iLoRA replacement requires projectors")
        return out

    @property
    def ffn_inner(self) -> int:
        return self.ffn_dim or 4 * self.d

    @property
    def proj_inner(self) -> int:
        return self.proj_dim or round_to_multiple(8 * self.d / 3)

    @property
    def use_dlora(self) -> bool:
        return self.dlora == "lora" and self.r_d > 0

    @property
    def use_ilora(self) -> bool:
        return self.ilora == "lora" and self.r_i > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def dropout(x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout drawing from an explicit generator."""
    if not training or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


def swish(x: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    return x * torch.sigmoid(beta * x)


class _RngModule(nn.Module):
    """Base for modules that drop out through the owning model's generator."""

    def __init__(self):
        super().__init__()
        self._gen_box = [None]

    @property
    def generator(self):
        return self._gen_box[0]

    def share_generator(self, box: list) -> None:
        for m in self.modules():
            if isinstance(m, _RngModule):
                m._gen_box = box

    def drop(self, x, p):
        return dropout(x, p, self.training, self.generator)


class LoRA(nn.Module):
    """Low-rank residual map ``x -> x @ down.T @ up.T``; ``up`` starts at zero."""

    def __init__(self, d: int, r: int, init_std: float = 0.02):
        super().__init__()
        if not 0 < r < d:
            raise ConfigError(f"LoRA rank must satisfy 0 < r < d, got r={r}, d={d}")
        self.down = nn.Parameter(torch.randn(r, d) * init_std)
        self.up = nn.Parameter(torch.zeros(d, r))

    @property
    def rank(self) -> int:
        return self.down.shape[0]

    def forward(self, x):
        return lora_forward(self, x)


def lora_forward(unit: LoRA, x: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] != unit.down.shape[1]:
        raise ValueError(f"LoRA expects last dim {unit.down.shape[1]}, got {x.shape[-1]}")
    return x @ unit.down.T @ unit.up.T


class Projector(_RngModule):
    """SwishGLU MLP: ``Drop((swish(X W1) * X W2) W3)``."""

    def __init__(self, d: int, g: int, p: float, beta: float = 1.0, init_std: float = 0.02,
                 inner_dropout: bool = True):
        super().__init__()
        self.W1 = nn.Parameter(torch.randn(d, g) * init_std)
        self.W2 = nn.Parameter(torch.randn(d, g) * init_std)
        self.W3 = nn.Parameter(torch.randn(g, d) * init_std)
        self.p = p
        self.beta = beta
        self.inner_dropout = inner_dropout

    def forward(self, x):
        y = (swish(x @ self.W1, self.beta) * (x @ self.W2)) @ self.W3
        return self.drop(y, self.p) if self.inner_dropout else y


def swishglu(proj: Projector, x: torch.Tensor) -> torch.Tensor:
    return proj(x)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, key_pad: torch.Tensor) -> torch.Tensor:
        B, T, d = x.shape
        h = self.n_heads
        q = self.q(x).view(B, T, h, d // h).transpose(1, 2)
        k = self.k(x).view(B, T, h, d // h).transpose(1, 2)
        v = self.v(x).view(B, T, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)

        causal = torch.ones(T, T, dtype=torch.bool, device=x.device).tril()
        allowed = causal[None, None] & ~key_pad[:, None, None, :]
        scores = scores.masked_fill(~allowed, _MASK_FILL)
        # rows with no attendable key produce a zero vector
        weights = torch.softmax(scores, dim=-1) * allowed
        out = (weights @ v).transpose(1, 2).reshape(B, T, d)
        return self.o(out)


class EncoderLayer(_RngModule):
    """Self-attention block with per-tag adapters parallel to the FFN."""

    def __init__(self, cfg: ModelConfig, adapters: str):
        super().__init__()
        d = cfg.d
        self.p = cfg.dropout
        self.attn = MultiHeadAttention(d, cfg.n_heads)
        self.ffn_in = nn.Linear(d, cfg.ffn_inner)
        self.ffn_out = nn.Linear(cfg.ffn_inner, d)
        self.ln1 = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.ln2 = nn.LayerNorm(d, eps=cfg.ln_eps)
        if adapters == "lora":
            self.adapters = nn.ModuleDict({t: LoRA(d, cfg.r_d, cfg.init_std) for t in TAGS})
        elif adapters == "projectors":
            self.adapters = nn.ModuleDict({
                t: Projector(d, cfg.proj_inner, cfg.dropout, cfg.swish_beta, cfg.init_std,
                             inner_dropout=not cfg.single_proj_dropout)
                for t in TAGS
            })
        else:
            self.adapters = None

    def forward(self, x, key_pad, tag):
        h = self.ln1(x + self.drop(self.attn(x, key_pad), self.p))
        z = h + self.drop(self.ffn_out(F.gelu(self.ffn_in(h))), self.p)
        if self.adapters is not None:
            z = z + self.drop(self.adapters[tag](h), self.p)
        return self.ln2(z)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig, adapters: str):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(cfg, adapters) for _ in range(cfg.n_layers))

    def forward(self, x, key_pad, tag):
        for layer in self.layers:
            x = layer(x, key_pad, tag)
        return x


class ABXI(_RngModule):
    """Shared encoder with domain LoRAs, projectors with invariant LoRAs.

    Submodules that a variant removes are simply absent, so the parameter
    count reflects the variant's wiring.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self._build(cfg)
        self.generator = torch.Generator().manual_seed(seed)

    def _build(self, cfg: ModelConfig):
        d, g, p = cfg.d, cfg.proj_inner, cfg.dropout

        self.item_emb = nn.Embedding(cfg.n_items + 1, d)
        self.pos_emb = nn.Embedding(cfg.max_len + 1, d)

        if cfg.dlora == "encoders":
            self.encoders = nn.ModuleDict({t: Encoder(cfg, "none") for t in TAGS})
        else:
            mode = "lora" if cfg.use_dlora else ("projectors" if cfg.dlora == "projectors" else "none")
            self.encoder = Encoder(cfg, mode)

        def proj():
            return Projector(d, g, p, cfg.swish_beta, cfg.init_std, inner_dropout=not cfg.single_proj_dropout)

        if cfg.projectors:
            self.proj_A = proj()
            self.proj_B = proj()
            if cfg.ilora != "proj2":
                self.proj_i = proj()
        if cfg.use_ilora:
            self.ilora = nn.ModuleDict({t: LoRA(d, cfg.r_i, cfg.init_std) for t in ("A", "B")})
        elif cfg.ilora in ("proj3", "proj2"):
            self.ilora = nn.ModuleDict({t: proj() for t in ("A", "B")})
        else:
            self.ilora = None

        self.ln_A = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.ln_B = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.ln_i2A = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.ln_i2B = nn.LayerNorm(d, eps=cfg.ln_eps)

        self._init_weights()

    @property
    def generator(self):
        return self._gen_box[0]

    @generator.setter
    def generator(self, gen):
        box = [gen]
        self.share_generator(box)

    def _init_weights(self):
        std = self.cfg.init_std
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.normal_(m.weight, std=std)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Embedding):
                nn.init.normal_(m.weight, std=std)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    # pieces ----------------------------------------------------------------

    def embed(self, items: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        n_rows = self.item_emb.num_embeddings
        if items.numel() and (items.min() < 0 or items.max() >= n_rows):
            raise IndexError(f"item index out of range [0, {n_rows})")
        if positions.numel() and (positions.min() < 0 or positions.max() > self.cfg.max_len):
            raise IndexError(f"position index out of range [0, {self.cfg.max_len}]")
        return self.drop(self.item_emb(items) + self.pos_emb(positions), self.cfg.dropout)

    def encode(self, emb: torch.Tensor, key_pad: torch.Tensor, tag: str) -> torch.Tensor:
        if tag not in TAGS:
            raise ValueError(f"unknown domain tag {tag!r}")
        if self.cfg.dlora == "encoders":
            return self.encoders[tag](emb, key_pad, tag)
        return self.encoder(emb, key_pad, tag)

    def project_specific(self, h_enc: torch.Tensor, domain: str) -> torch.Tensor:
        ln = self.ln_A if domain == "A" else self.ln_B
        if not self.cfg.projectors:
            return ln(h_enc)
        proj = self.proj_A if domain == "A" else self.proj_B
        return ln(h_enc + self.drop(proj(h_enc), self.cfg.dropout))

    def project_invariant(self, h_x: torch.Tensor, target: str) -> torch.Tensor:
        p = self.cfg.dropout
        z = h_x
        if self.cfg.projectors and self.cfg.ilora != "proj2":
            z = z + self.drop(self.proj_i(h_x), p)
        if self.ilora is not None:
            z = z + self.drop(self.ilora[target](h_x), p)
        return (self.ln_i2A if target == "A" else self.ln_i2B)(z)

    @staticmethod
    def fuse(h_p: torch.Tensor, h_i2d: torch.Tensor) -> torch.Tensor:
        if h_p.shape != h_i2d.shape:
            raise ValueError(f"shape mismatch {tuple(h_p.shape)} vs {tuple(h_i2d.shape)}")
        return h_p + h_i2d

    # full pass -------------------------------------------------------------

    def forward(self, items_X, items_A, items_B, pos_X, pos_A, pos_B):
        h = {}
        for tag, items, pos in (("X", items_X, pos_X), ("A", items_A, pos_A), ("B", items_B, pos_B)):
            h[tag] = self.encode(self.embed(items, pos), items == 0, tag)
        rec_A = self.fuse(self.project_specific(h["A"], "A"), self.project_invariant(h["X"], "A"))
        rec_B = self.fuse(self.project_specific(h["B"], "B"), self.project_invariant(h["X"], "B"))
        return rec_A, rec_B

    def forward_batch(self, batch: Batch):
        t = batch_tensors(batch)
        return self(t["items_X"], t["items_A"], t["items_B"], t["pos_X"], t["pos_A"], t["pos_B"])


def batch_tensors(batch: Batch) -> dict[str, torch.Tensor]:
    return {
        "items_X": torch.from_numpy(batch.items_X),
        "items_A": torch.from_numpy(batch.items_A),
        "items_B": torch.from_numpy(batch.items_B),
        "pos_X": torch.from_numpy(batch.pos_X),
        "pos_A": torch.from_numpy(batch.pos_A),
        "pos_B": torch.from_numpy(batch.pos_B),
        "targets": torch.from_numpy(batch.targets),
        "loss_mask_A": torch.from_numpy(batch.loss_mask_A),
        "loss_mask_B": torch.from_numpy(batch.loss_mask_B),
    }


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def forward_flops(cfg: ModelConfig, T: int | None = None) -> dict[str, int]:
    """Multiply-add counts of one encoder pass over a length-``T`` sequence."""
    T = cfg.max_len if T is None else T
    d, j = cfg.d, cfg.ffn_inner
    per_layer = {
        "attention_scores": 2 * T * T * d,  # QK^T and weights @ V
        "attention_proj": 4 * T * d * d,
        "ffn": 2 * T * d * j,
    }
    out = {k: v * cfg.n_layers for k, v in per_layer.items()}
    out["total"] = sum(out.values())
    return out


def state_hash(model: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return h.hexdigest()
