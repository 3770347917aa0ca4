"""Command-line entry point: ``abxi <command> [--options]``.

Artifacts live under a work directory (``--workdir``, else ``$ABXI_WORKDIR``,
else ``./abxi-work``) with fixed subdirectories ``corpus/``, ``checkpoints/``,
``reports/`` and ``logs/``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .ablation import VARIANTS, build_variant, parse_ranks, rank_sweep
from .alignment import Tokens, build_bundle
from .corpus import Corpus, load_interactions, preprocess, split_leave_one_out, write_interactions
from .errors import AbxiError, ConfigError, DataError
from .evaluator import evaluate, format_table
from .model import ModelConfig
from .synthetic import PROFILES, generate_synthetic
from .trainer import DEFAULT_SEEDS, TrainConfig, load_checkpoint, run_seed_sweep

log = logging.getLogger("abxi")

WORKDIR_ENV = "ABXI_WORKDIR"
SUBDIRS = ("corpus", "checkpoints", "reports", "logs")
CORPUS_FILE = "corpus.json"


@dataclass
class RunConfig:
    """Everything a train/ablate/sweep run needs except the corpus itself.

    ``model`` holds ModelConfig fields other than ``n_items``, which is taken
    from the corpus at run time.
    """

    input: str | None = None
    workdir: str | None = None
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    domain_map: dict | None = None
    variant: str = "ABXI"
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    min_item_count: int = 5
    max_len: int = 50
    min_len: int = 3

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["train"] = self.train.to_dict()
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        data = dict(data)
        if "train" in data:
            data["train"] = TrainConfig.from_dict(data["train"])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc

    def model_config(self, n_items: int) -> ModelConfig:
        if "n_items" in self.model:
            raise ConfigError("model.n_items is derived from the corpus; remove it from the config")
        return build_variant(self.variant, ModelConfig.from_dict({**self.model, "n_items": n_items}))

    def problems(self) -> list[str]:
        """All validation failures at once, checked before any work starts."""
        out = []
        if self.input is not None and not Path(self.input).exists():
            out.append(f"input not found: {self.input}")
        if self.variant not in VARIANTS:
            out.append(f"unknown variant {self.variant!r}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            out.append("seeds must be a non-empty list of non-negative integers")
        unknown = set(self.model) - {f.name for f in fields(ModelConfig)}
        if unknown:
            out.append(f"unknown model keys: {sorted(unknown)}")
        elif "n_items" in self.model:
            out.append("model.n_items is derived from the corpus")
        else:
            try:
                ModelConfig(n_items=1, **self.model)
            except ConfigError as exc:
                out.append(str(exc))
        if self.domain_map is not None and not set(self.domain_map.values()) <= {"A", "B"}:
            out.append("domain_map values must be 'A' or 'B'")
        return out

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        return self


# work directory ------------------------------------------------------------


def resolve_workdir(arg: str | None) -> Path:
    root = Path(arg or os.environ.get(WORKDIR_ENV) or "abxi-work")
    for sub in SUBDIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)
    return root


def _load_split(workdir: Path, cfg: RunConfig | None = None):
    path = workdir / "corpus" / CORPUS_FILE
    if not path.exists():
        if cfg is None or cfg.input is None:
            raise DataError(f"no corpus at {path}; run `preprocess` first or set `input` in the config")
        corpus = _preprocess_file(cfg.input, cfg.domain_map, cfg.min_item_count, cfg.max_len, cfg.min_len)
        _write_corpus(workdir, corpus, {"input": cfg.input})
    else:
        corpus = Corpus.load(path)
    return split_leave_one_out(corpus)


def _preprocess_file(path, domain_map, min_item_count, max_len, min_len) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input not found: {path}")
    with path.open("rb") as fp:
        log_ = load_interactions(fp, domain_map)
    return preprocess(log_, min_item_count=min_item_count, max_len=max_len, min_len=min_len)


def _write_corpus(workdir: Path, corpus: Corpus, provenance: dict) -> dict:
    manifest = {**provenance, "stats": corpus.stats()}
    corpus.save(workdir / "corpus" / CORPUS_FILE)
    (workdir / "corpus" / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _write_report(workdir: Path, name: str, report, label: str | None = None) -> Path:
    out = workdir / "reports" / f"{name}.json"
    out.write_text(report.to_json() + "\n")
    (workdir / "reports" / f"{name}.txt").write_text(report.to_table(label or name) + "\n")
    return out


def _parse_domain_map(text: str | None) -> dict | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        name, _, dom = part.partition("=")
        if not name or dom not in ("A", "B"):
            raise ConfigError(f"bad --domain-map entry {part!r}; expected NAME=A or NAME=B")
        out[name.strip()] = dom
    return out


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None):
        cfg.seeds = list(args.seed)
    if getattr(args, "max_epochs", None):
        cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), "max_epochs": args.max_epochs})
    return cfg.validate()


# commands ------------------------------------------------------------------


def cmd_generate_synthetic(args) -> int:
    data = generate_synthetic(args.profile, args.n_users, args.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fmt = "csv" if out.suffix == ".csv" else "jsonl"
    with out.open("w", newline="") as fp:
        write_interactions(data, fp, fmt)
    print(f"wrote {len(data)} interactions to {out}")
    return 0


def cmd_preprocess(args) -> int:
    domain_map = _parse_domain_map(args.domain_map)
    corpus = _preprocess_file(args.input, domain_map, args.min_item_count, args.max_len, args.min_len)
    workdir = resolve_workdir(args.workdir)
    manifest = _write_corpus(workdir, corpus, {
        "input": str(args.input), "min_item_count": args.min_item_count,
        "max_len": args.max_len, "min_len": args.min_len, "domain_map": domain_map,
    })
    print(json.dumps(manifest["stats"], indent=2))
    return 0


def _sweep(workdir, split, model_cfg, cfg: RunConfig, name: str):
    agg, reports = run_seed_sweep(split, model_cfg, cfg.train, seeds=cfg.seeds, workdir=workdir, prefix=name)
    agg.config = {"run": cfg.to_dict(), "model": model_cfg.to_dict(), "train": cfg.train.to_dict(),
                  "seeds": list(cfg.seeds)}
    for seed, rep in zip(cfg.seeds, reports):
        _write_report(workdir, f"{name}_seed{seed}", rep, name)
    _write_report(workdir, name, agg)
    return agg


def cmd_train(args) -> int:
    cfg = _run_config(args)
    workdir = resolve_workdir(args.workdir or cfg.workdir)
    split = _load_split(workdir, cfg)
    model_cfg = cfg.model_config(split.corpus.n_items)
    agg = _sweep(workdir, split, model_cfg, cfg, args.name or cfg.variant)
    print(agg.to_table(args.name or cfg.variant))
    return 0


def cmd_evaluate(args) -> int:
    workdir = resolve_workdir(args.workdir)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, manifest = load_checkpoint(ckpt)
    split = _load_split(workdir)
    if model.cfg.n_items != split.corpus.n_items:
        raise ConfigError(f"checkpoint has n_items={model.cfg.n_items}, corpus has {split.corpus.n_items}")
    seed = args.seed if args.seed is not None else (manifest.get("seed") or 0)
    n_neg = args.negatives or (manifest.get("train_config") or {}).get("eval_negatives", 999)
    report = evaluate(model, split, args.split, seed, n_neg)
    report.config = {"checkpoint": str(ckpt), "model": model.cfg.to_dict(), "seed": seed, "negatives": n_neg}
    name = f"eval_{ckpt.resolve().name if ckpt.is_dir() else ckpt.resolve().parent.name}_{args.split}"
    path = _write_report(workdir, name, report, ckpt.name)
    print(report.to_table(ckpt.name))
    print(f"report: {path}")
    return 0


def _compare(workdir, split, cfg: RunConfig, named_cfgs, table_name: str) -> int:
    rows = []
    for label, model_cfg in named_cfgs:
        rows.append((label, _sweep(workdir, split, model_cfg, cfg, label)))
    table = format_table(rows)
    (workdir / "reports" / f"{table_name}.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    names = sorted(VARIANTS) if args.variant == ["all"] else args.variant
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}; choose from {sorted(VARIANTS)}")
    workdir = resolve_workdir(args.workdir or cfg.workdir)
    split = _load_split(workdir, cfg)
    base = ModelConfig.from_dict({**cfg.model, "n_items": split.corpus.n_items})
    named = [(n, build_variant(n, base)) for n in names]
    return _compare(workdir, split, cfg, named, "ablation")


def cmd_sweep_rank(args) -> int:
    cfg = _run_config(args)
    try:
        ranks = parse_ranks(args.ranks)
    except ValueError as exc:
        raise ConfigError(f"bad --ranks: {exc}") from exc
    workdir = resolve_workdir(args.workdir or cfg.workdir)
    split = _load_split(workdir, cfg)
    base = ModelConfig.from_dict({**cfg.model, "n_items": split.corpus.n_items})
    named = rank_sweep(base, args.target, ranks)
    return _compare(workdir, split, cfg, named, f"sweep_rank_{args.target}")


def cmd_inspect_alignment(args) -> int:
    workdir = resolve_workdir(args.workdir)
    split = _load_split(workdir)
    users = {u.user_id: u for u in split.train}
    if args.user not in users:
        raise DataError(f"unknown user {args.user!r}")
    u = users[args.user]
    bundle = build_bundle(Tokens(u.items, u.domains), args.max_len, args.alignment)
    print(json.dumps(bundle.to_dict(), indent=2))
    return 0


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abxi", description="Cross-domain sequential recommendation toolkit.")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    def with_workdir(sp):
        sp.add_argument("--workdir", help=f"work directory (default ${WORKDIR_ENV} or ./abxi-work)")
        return sp

    def with_run(sp):
        with_workdir(sp)
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides the config")
        sp.add_argument("--max-epochs", type=int)
        return sp

    g = sub.add_parser("generate-synthetic", help="write a synthetic interaction log")
    g.add_argument("--profile", required=True, choices=PROFILES)
    g.add_argument("--n-users", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", required=True, help="*.jsonl or *.csv")
    g.set_defaults(func=cmd_generate_synthetic)

    pp = with_workdir(sub.add_parser("preprocess", help="filter a raw log into the work directory corpus"))
    pp.add_argument("--input", required=True)
    pp.add_argument("--min-item-count", type=int, default=5)
    pp.add_argument("--max-len", type=int, default=50)
    pp.add_argument("--min-len", type=int, default=3)
    pp.add_argument("--domain-map", help="raw domain names to A/B, e.g. Food=A,Kitchen=B")
    pp.set_defaults(func=cmd_preprocess)

    t = with_run(sub.add_parser("train", help="train one config over its seeds and report test metrics"))
    t.add_argument("--name", help="run name (default: the variant name)")
    t.set_defaults(func=cmd_train)

    e = with_workdir(sub.add_parser("evaluate", help="evaluate a checkpoint"))
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=["val", "test"])
    e.add_argument("--seed", type=int)
    e.add_argument("--negatives", type=int)
    e.set_defaults(func=cmd_evaluate)

    a = with_run(sub.add_parser("ablate", help="train and compare architecture variants"))
    a.add_argument("--variant", action="append", required=True, help="variant name (repeatable) or 'all'")
    a.set_defaults(func=cmd_ablate)

    s = with_run(sub.add_parser("sweep-rank", help="sweep dLoRA or iLoRA rank"))
    s.add_argument("--target", required=True, choices=["d", "i"])
    s.add_argument("--ranks", required=True, help="comma list, e.g. 0,4,8,16,proj")
    s.set_defaults(func=cmd_sweep_rank)

    i = with_workdir(sub.add_parser("inspect-alignment", help="dump one user's training bundle as JSON"))
    i.add_argument("--user", required=True)
    i.add_argument("--max-len", type=int, default=50)
    i.add_argument("--alignment", default="task", choices=["task", "timestamp"])
    i.set_defaults(func=cmd_inspect_alignment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AbxiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
