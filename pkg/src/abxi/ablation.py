"""Named architecture variants and LoRA rank sweeps, expressed as config edits."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .model import ModelConfig


@dataclass(frozen=True)
class VariantSpec:
    name: str
    alignment: str = "task"
    dlora: str = "lora"
    ilora: str = "lora"
    projectors: bool = True
    r_d: int | None = None
    r_i: int | None = None


VARIANTS = {
    "ABXI": VariantSpec("ABXI"),
    "V_ts": VariantSpec("V_ts", alignment="timestamp"),
    "V1": VariantSpec("V1", dlora="none"),
    "V2": VariantSpec("V2", projectors=False),
    "V3": VariantSpec("V3", ilora="none"),
    "V4": VariantSpec("V4", dlora="none", ilora="none", projectors=False),
    "V_e3": VariantSpec("V_e3", dlora="encoders"),
    "V_dp3": VariantSpec("V_dp3", dlora="projectors"),
    "V_ip3": VariantSpec("V_ip3", ilora="proj3"),
    "V_ip2": VariantSpec("V_ip2", ilora="proj2"),
}

SWEEP_RANKS = (0, 4, 8, 16, 32, 64, 128, "proj")


def build_variant(spec, base: ModelConfig) -> ModelConfig:
    """Apply a variant (name or spec) to ``base``; every other field is kept."""
    if isinstance(spec, str):
        try:
            spec = VARIANTS[spec]
        except KeyError:
            raise ConfigError(f"unknown variant {spec!r}; choose from {sorted(VARIANTS)}") from None
    changes = dict(alignment=spec.alignment, dlora=spec.dlora, ilora=spec.ilora, projectors=spec.projectors)
    if spec.r_d is not None:
        changes["r_d"] = spec.r_d
    if spec.r_i is not None:
        changes["r_i"] = spec.r_i
    return base.replace(**changes)


def parse_ranks(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append("proj" if tok == "proj" else int(tok))
    return out


def rank_sweep(base: ModelConfig, target: str, ranks) -> list[tuple[str, ModelConfig]]:
    """One config per rank for dLoRA (``target='d'``) or iLoRA (``target='i'``).

    Rank 0 removes the adapter and ``'proj'`` swaps it for dense projectors;
    both leave the other rank untouched.
    """
    if target not in ("d", "i"):
        raise ConfigError("target must be 'd' or 'i'")
    field_name = "r_d" if target == "d" else "r_i"
    mode_field = "dlora" if target == "d" else "ilora"
    out = []
    for r in ranks:
        if r == "proj":
            cfg = base.replace(**{mode_field: "projectors" if target == "d" else "proj3"})
            label = "V_dp3" if target == "d" else "V_ip3"
        elif isinstance(r, int) and r >= 0:
            if r >= base.d:
                raise ConfigError(f"rank {r} must be < d={base.d}")
            if r == 0:
                cfg = base.replace(**{mode_field: "none"})
                label = "V1" if target == "d" else "V3"
            else:
                cfg = base.replace(**{field_name: r, mode_field: "lora"})
                label = f"{field_name}={r}"
        else:
            raise ConfigError(f"invalid rank {r!r}; allowed: {SWEEP_RANKS}")
        out.append((label, cfg))
    return out
