"""Training loop: AdamW, linear warmup, plateau decay, early stopping, checkpoints."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .alignment import Tokens, build_bundle, collate
from .corpus import Split
from .errors import ConfigError, NumericalError
from .evaluator import EvalReport, _user_key, aggregate_reports, eval_negatives, evaluate
from .model import ABXI, ModelConfig, batch_tensors, count_parameters, state_hash
from .objective import sample_position_candidates, total_loss

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (3407, 0, 1, 2, 3)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    max_epochs: int = 500
    warmup_epochs: int = 5
    lr_decay_factor: float = 0.3162
    plateau_epochs: int = 30
    early_stop_patience: int = 60
    batch_size: int = 128
    eval_negatives: int = 999
    eval_every: int = 1
    threads: int = 1

    def __post_init__(self):
        errors = []
        if self.lr <= 0:
            errors.append("lr must be positive")
        if self.weight_decay < 0:
            errors.append("weight_decay must be >= 0")
        if self.max_epochs < 1:
            errors.append("max_epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.max_epochs:
            errors.append("warmup_epochs must be in [0, max_epochs)")
        if not 0 < self.lr_decay_factor < 1:
            errors.append("lr_decay_factor must be in (0, 1)")
        if self.plateau_epochs < 1 or self.early_stop_patience < 1:
            errors.append("plateau_epochs and early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.eval_every < 1 or self.threads < 1:
            errors.append("batch_size, eval_every and threads must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


class PlateauSchedule:
    """Per-epoch learning rate with linear warmup and decay on stalled validation.

    Non-improving epochs are counted once; every ``plateau_epochs`` of them the
    base rate is multiplied by ``factor`` and training stops at ``patience``.
    """

    def __init__(self, lr, warmup_epochs=5, factor=0.3162, plateau_epochs=30, patience=60):
        self.base_lr = lr
        self.warmup_epochs = warmup_epochs
        self.factor = factor
        self.plateau_epochs = plateau_epochs
        self.patience = patience
        self.best = -math.inf
        self.since_improvement = 0
        self.n_decays = 0

    def lr(self, epoch: int) -> float:
        scale = min(1.0, (epoch + 1) / self.warmup_epochs) if self.warmup_epochs else 1.0
        return self.base_lr * scale

    def update(self, metric: float) -> bool:
        """Record a validation value; returns True if it is a new best."""
        if metric > self.best:
            self.best = metric
            self.since_improvement = 0
            return True
        self.since_improvement += 1
        if self.since_improvement % self.plateau_epochs == 0:
            self.base_lr *= self.factor
            self.n_decays += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_improvement >= self.patience


@dataclass
class TrainResult:
    model: ABXI
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = -math.inf
    seed: int = 0
    checkpoint: Path | None = None


def _train_bundles(split: Split, cfg: ModelConfig):
    out = []
    for i, u in enumerate(split.train):
        if len(u) < 2:
            continue
        b = build_bundle(Tokens(u.items, u.domains), cfg.max_len, cfg.alignment)
        if b.loss_mask_A.any() or b.loss_mask_B.any():
            out.append((i, b))
    return out


def _user_pools(split: Split) -> list[dict]:
    corpus = split.corpus
    dom_items = {"A": corpus.domain_items("A"), "B": corpus.domain_items("B")}
    return [
        {name: np.setdiff1d(items, hist) for name, items in dom_items.items()}
        for hist in split.histories
    ]


def train(split: Split, model_cfg: ModelConfig, train_cfg: TrainConfig | None = None, seed: int = 3407,
          workdir=None, run_name: str | None = None, extra_manifest: dict | None = None) -> TrainResult:
    """Fit a model; the returned model holds the best-validation parameters."""
    train_cfg = train_cfg or TrainConfig()
    torch.set_num_threads(train_cfg.threads)
    if model_cfg.n_items != split.corpus.n_items:
        raise ConfigError(f"model n_items={model_cfg.n_items} but corpus has {split.corpus.n_items}")

    model = ABXI(model_cfg, seed=seed)
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    sched = PlateauSchedule(train_cfg.lr, train_cfg.warmup_epochs, train_cfg.lr_decay_factor,
                            train_cfg.plateau_epochs, train_cfg.early_stop_patience)

    bundles = _train_bundles(split, model_cfg)
    pools = _user_pools(split)
    keys = [_user_key(u.user_id) for u in split.train]
    val_negs = eval_negatives(split, "val", seed, train_cfg.eval_negatives)

    result = TrainResult(model=model, seed=seed)
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(train_cfg.max_epochs):
        lr = sched.lr(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = np.random.default_rng([seed, epoch]).permutation(len(bundles))
        losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            chunk = [bundles[k] for k in order[start:start + train_cfg.batch_size]]
            loss = _batch_loss(model, chunk, pools, keys, seed, epoch)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {start // train_cfg.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())

        record = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else 0.0, "lr": lr}
        if (epoch + 1) % train_cfg.eval_every == 0 or epoch == train_cfg.max_epochs - 1:
            rep = evaluate(model, split, "val", seed, negatives=val_negs)
            record["val_mrr"] = {d: (m["MRR"] if m else None) for d, m in rep.metrics.items()}
            if sched.update(rep.mrr_sum()):
                result.best_epoch, result.best_val = epoch, sched.best
                best_state = copy.deepcopy(model.state_dict())
        result.history.append(record)
        log.info("epoch %d loss %.4f lr %.2e val %s", epoch, record["loss"], lr, record.get("val_mrr"))
        if sched.should_stop:
            break

    model.load_state_dict(best_state)
    if workdir is not None:
        name = run_name or f"seed{seed}"
        result.checkpoint = save_checkpoint(
            model, Path(workdir) / "checkpoints" / name, seed=seed, epoch=result.best_epoch,
            val_mrr=result.best_val, train_cfg=train_cfg, extra=extra_manifest,
        )
        log_path = Path(workdir) / "logs" / f"{name}.jsonl"
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in result.history))
    return result


def _batch_loss(model: ABXI, chunk, pools, keys, seed: int, epoch: int) -> torch.Tensor:
    cfg = model.cfg
    batch = collate([b for _, b in chunk], cfg.max_len)
    T = batch.targets.shape[1]
    cands = {"A": np.zeros((len(chunk), T, 1 + cfg.n_neg), dtype=np.int64)}
    cands["B"] = cands["A"].copy()
    for row, (i, b) in enumerate(chunk):
        rng = np.random.default_rng([seed, keys[i], epoch])
        per = sample_position_candidates(b.gt_X.items, {"A": b.loss_mask_A, "B": b.loss_mask_B},
                                         pools[i], cfg.n_neg, rng)
        for name in ("A", "B"):
            cands[name][row, T - len(b):] = per[name]
    t = batch_tensors(batch)
    rec_A, rec_B = model(t["items_X"], t["items_A"], t["items_B"], t["pos_X"], t["pos_A"], t["pos_B"])
    return total_loss(rec_A, rec_B, t["loss_mask_A"], t["loss_mask_B"],
                      torch.from_numpy(cands["A"]), torch.from_numpy(cands["B"]),
                      model.item_emb.weight, cfg.tau)


# checkpoints ---------------------------------------------------------------


def save_checkpoint(model: ABXI, directory, seed=None, epoch=None, val_mrr=None,
                    train_cfg: TrainConfig | None = None, extra: dict | None = None) -> Path:
    from safetensors.torch import save_file

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().contiguous() for k, v in model.state_dict().items()}
    save_file(state, str(directory / "model.safetensors"))
    manifest = {
        "model_config": model.cfg.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "parameter_shapes": {k: list(v.shape) for k, v in state.items()},
        "n_parameters": count_parameters(model),
        "seed": seed,
        "epoch": epoch,
        "val_mrr": val_mrr if val_mrr is None or math.isfinite(val_mrr) else None,
        "params_sha256": state_hash(model),
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[ABXI, dict]:
    from safetensors.torch import load_file

    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    manifest = json.loads((directory / "manifest.json").read_text())
    model = ABXI(ModelConfig.from_dict(manifest["model_config"]), seed=manifest.get("seed") or 0)
    model.load_state_dict(load_file(str(directory / "model.safetensors")))
    model.eval()
    return model, manifest


def run_seed_sweep(split: Split, model_cfg: ModelConfig, train_cfg: TrainConfig | None = None,
                   seeds=DEFAULT_SEEDS, mode: str = "test", workdir=None, prefix: str = "ABXI"):
    """Train once per seed; returns the aggregated report and the per-seed reports."""
    if not seeds:
        raise ConfigError("at least one seed is required")
    train_cfg = train_cfg or TrainConfig()
    reports = []
    for seed in seeds:
        res = train(split, model_cfg, train_cfg, seed, workdir=workdir, run_name=f"{prefix}_seed{seed}")
        rep = evaluate(res.model, split, mode, seed, train_cfg.eval_negatives)
        rep.config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "seed": seed}
        reports.append(rep)
    agg = aggregate_reports(reports)
    agg.config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "seeds": list(seeds)}
    return agg, reports
