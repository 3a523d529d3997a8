"""Command-line entry point wiring all pipeline stages.

Subcommands: synth, ingest, build-memory, make-prompts, train-title,
train-id, recommend, evaluate. Every stage reads one JSON config file
(missing fields fall back to defaults mirroring the published
hyperparameters) and writes its artifacts plus a manifest under the
artifacts directory, so expensive stages can be cached and re-ranked
offline.

Exit codes: 0 success, 1 config/IO error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, corpus, evalkit, id_embedder, memory, promptgen, retrieval
from . import generator as gen_mod
from . import title_embedder
from .generator import GenerationParams, build_curriculum

ENDPOINT_ENV = "FASHIONREC_ENDPOINT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data paths
    catalog_path: str = "catalog.jsonl"
    interactions_path: str = "interactions.jsonl"
    querylog_path: str = "querylog.jsonl"
    artifacts_dir: str = "artifacts"
    category: str = "default"
    # prompt template
    template_path: str | None = None
    max_prompt_tokens: int = 1024
    # memory lookup (stored queries matched / products per match)
    memory_q: int = 3
    memory_v: int = 5
    # retrieval mixup and metric cutoff
    mixup_n: int = 1
    mixup_k: int = 10
    metric_n: int = 10
    # generation parameters
    max_new_tokens: int = 64
    temperature: float = 0.05
    top_p: float = 0.95
    # generator selection: "oracle", "noisy", or an http(s) endpoint
    generator: str = "oracle"
    noisy_corrupt_prob: float = 0.5
    # perplexity curriculum
    curriculum_fraction: float = 0.2
    curriculum_high_epochs: int = 3
    curriculum_base_epochs: int = 1
    # embedder training
    title_train: title_embedder.TrainConfig = field(default_factory=title_embedder.TrainConfig)
    id_train: id_embedder.IdTrainConfig = field(default_factory=id_embedder.IdTrainConfig)
    # ablation toggles (Table-style variants)
    no_attributes: bool = False
    no_memory: bool = False
    no_title_emb: bool = False
    no_id_emb: bool = False
    # zero-shot target category paths
    zs_catalog_path: str | None = None
    zs_interactions_path: str | None = None
    zs_category: str = "target"
    # misc
    low_resource_ratio: float = 0.5
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.no_title_emb and self.no_id_emb:
            raise ConfigError("no_title_emb and no_id_emb cannot both be set")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "title_train" in raw:
            raw["title_train"] = title_embedder.TrainConfig(**raw["title_train"])
        if "id_train" in raw:
            raw["id_train"] = id_embedder.IdTrainConfig(**raw["id_train"])
        return RunConfig(**raw)

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return RunConfig.from_dict(json.load(f))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None

    def effective_mixup(self) -> retrieval.MixupParams:
        """Ablations map onto mixup boundaries: no_title_emb means N=K
        (id-only) and no_id_emb means N=0 (title-only)."""
        n = self.mixup_n
        if self.no_title_emb:
            n = self.mixup_k
        if self.no_id_emb:
            n = 0
        return retrieval.MixupParams(n_head=n, k_total=self.mixup_k)

    def generation_params(self) -> GenerationParams:
        return GenerationParams(
            max_new_tokens=self.max_new_tokens,
            temperature=self.temperature,
            top_p=self.top_p,
        )


def _template(cfg: RunConfig) -> promptgen.PromptTemplate:
    if cfg.template_path:
        template = promptgen.load_template(cfg.template_path)
    else:
        template = promptgen.default_template(max_tokens=cfg.max_prompt_tokens)
    if cfg.no_attributes:
        template = dataclasses.replace(template, attribute_keys=("title",))
    return template


def _artifacts(cfg: RunConfig) -> Path:
    path = Path(cfg.artifacts_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(cfg: RunConfig, stage: str, notes: dict | None = None) -> dict:
    manifest = {
        "stage": stage,
        "config": cfg.to_dict(),
        "config_hash": evalkit.config_hash(cfg.to_dict()),
        "seed": cfg.seed,
        "versions": {
            "fashionrec": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "notes": notes or {},
    }
    with open(_artifacts(cfg) / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


def _load_corpus(cfg: RunConfig):
    catalog = corpus.load_catalog(cfg.catalog_path)
    seqs = corpus.load_interactions(cfg.interactions_path, catalog)
    return catalog, seqs


def _training_prompts(split, catalog, mem, mem_encoder, template, cfg):
    """One training prompt per train sequence: its last purchase becomes the
    response, everything before it the history."""
    prompts = []
    for seq in split.train:
        last = None
        for i, ev in enumerate(seq.events):
            if ev.action is corpus.Action.PURCHASE:
                last = i
        if last is None or last == 0:
            continue
        prompts.append(
            promptgen.build_prompt(
                seq.events[:last],
                catalog,
                mem,
                template,
                params=memory.MemoryLookupParams(cfg.memory_q, cfg.memory_v),
                for_training=True,
                truth=catalog[seq.events[last].payload],
                encoder=mem_encoder,
                prompt_id=seq.user_id,
            )
        )
    return prompts


def _endpoint(cfg: RunConfig) -> str:
    return os.environ.get(ENDPOINT_ENV, "").strip() or (
        cfg.generator if cfg.generator.startswith(("http://", "https://")) else ""
    )


def _build_generator(cfg: RunConfig, split, catalog):
    endpoint = _endpoint(cfg)
    if endpoint:
        return gen_mod.RemoteGenerator(endpoint)
    truths = {p.user_id: catalog[p.truth] for p in split.test}
    if cfg.generator == "oracle":
        return gen_mod.OracleMock(truths)
    if cfg.generator == "noisy":
        return gen_mod.NoisyMock(truths, corrupt_prob=cfg.noisy_corrupt_prob, seed=cfg.seed)
    raise ConfigError(f"unknown generator {cfg.generator!r} (oracle, noisy, or an endpoint URL)")


def _build_pipeline(cfg: RunConfig, catalog, split, artifacts: Path) -> retrieval.Pipeline:
    title_model = _load_or_train_title(cfg, catalog, artifacts, seqs=split.train)
    title_index = retrieval.build_title_index(catalog, title_model)
    id_table = None
    if not cfg.no_id_emb:
        id_table = _load_or_train_id(cfg, catalog, split, artifacts)
    mem = mem_encoder = None
    if not cfg.no_memory:
        mem_encoder = memory.BaselineEncoder()
        mem_path = artifacts / "memory.bin"
        if mem_path.exists():
            mem = memory.load_memory(mem_path)
        else:
            records = corpus.load_querylog(cfg.querylog_path, catalog)
            mem = memory.build_memory(records, catalog, mem_encoder)
            memory.save_memory(mem, mem_path)
    return retrieval.Pipeline(
        catalog=catalog,
        template=_template(cfg),
        generator=_build_generator(cfg, split, catalog),
        title_model=title_model,
        title_index=title_index,
        id_table=id_table,
        mem=mem,
        mem_encoder=mem_encoder,
        mem_params=memory.MemoryLookupParams(cfg.memory_q, cfg.memory_v),
        gen_params=cfg.generation_params(),
        mixup=cfg.effective_mixup(),
    )


def _title_pairs(seqs):
    """(query, purchased title) pairs: each purchase pairs with the most
    recent preceding search in its sequence."""
    pairs = []
    for seq in seqs:
        current_query = None
        for ev in seq.events:
            if ev.is_search:
                current_query = ev.payload
            elif ev.action is corpus.Action.PURCHASE and current_query:
                pairs.append((current_query, ev.payload))
    return pairs


def _load_or_train_title(cfg: RunConfig, catalog, artifacts: Path, seqs=None):
    model_path = artifacts / "title_model"
    if (artifacts / "title_model.npz").exists():
        return title_embedder.load_model(model_path)
    if seqs is None:
        seqs = corpus.load_interactions(cfg.interactions_path, catalog)
    raw_pairs = _title_pairs(seqs)
    pairs = [(q, catalog[i].title) for q, i in raw_pairs]
    tcfg = dataclasses.replace(cfg.title_train, seed=cfg.seed)
    model, trace = title_embedder.train(pairs, tcfg)
    title_embedder.save_model(model, model_path)
    title_embedder.save_loss_trace(trace, artifacts / "title_loss.csv")
    return model


def _load_or_train_id(cfg: RunConfig, catalog, split, artifacts: Path):
    table_path = artifacts / "id_table.bin"
    if table_path.exists():
        return id_embedder.load_table(table_path)
    icfg = dataclasses.replace(cfg.id_train, seed=cfg.seed)
    table, trace = id_embedder.train_id_model(split.train, catalog, icfg)
    id_embedder.save_table(table, table_path)
    with open(artifacts / "id_loss.csv", "w", encoding="utf-8") as f:
        f.write("epoch,loss\n")
        for i, loss in enumerate(trace, start=1):
            f.write(f"{i},{loss:.10g}\n")
    return table


def _split_for(cfg: RunConfig, setting: str, seqs):
    split = corpus.leave_one_out_split(seqs)
    if setting == "cold-start":
        split = corpus.cold_start_filter(split)
    elif setting == "low-resource":
        split = corpus.low_resource_sample(split, cfg.low_resource_ratio, cfg.seed)
    elif setting not in ("leave-one-out", "zero-shot"):
        raise ConfigError(f"unknown setting {setting!r}")
    return split


# ---------------------------------------------------------------------------
# Stage commands


def cmd_synth(args) -> int:
    spec = corpus.SynthSpec(
        num_items=args.items, num_users=args.users, num_families=args.families
    )
    catalog, seqs = corpus.synth_corpus(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_catalog(catalog, out / "catalog.jsonl")
    corpus.write_interactions(seqs, out / "interactions.jsonl")
    corpus.write_querylog(corpus.synth_querylog(catalog), out / "querylog.jsonl")
    print(f"wrote synthetic corpus ({catalog.num_items} items, {len(seqs)} users) to {out}")
    return 0


def cmd_ingest(cfg: RunConfig) -> int:
    catalog, seqs = _load_corpus(cfg)
    split = corpus.leave_one_out_split(seqs)
    stats = {
        "num_items": catalog.num_items,
        "num_users": len(seqs),
        "num_events": sum(len(s) for s in seqs),
        "avg_seq_len": sum(len(s) for s in seqs) / max(1, len(seqs)),
        "test_pairs": len(split.test),
        "dropped": split.meta.drop_count,
    }
    write_manifest(cfg, "ingest", notes=stats)
    print(json.dumps(stats, indent=2))
    return 0


def cmd_build_memory(cfg: RunConfig) -> int:
    catalog, _ = _load_corpus(cfg)
    records = corpus.load_querylog(cfg.querylog_path, catalog)
    enc = memory.BaselineEncoder()
    mem = memory.build_memory(records, catalog, enc)
    memory.save_memory(mem, _artifacts(cfg) / "memory.bin")
    write_manifest(cfg, "build-memory", notes={"queries": len(mem.values)})
    print(f"memory built over {len(mem.values)} distinct queries")
    return 0


def cmd_make_prompts(cfg: RunConfig) -> int:
    catalog, seqs = _load_corpus(cfg)
    split = corpus.leave_one_out_split(seqs)
    mem = mem_encoder = None
    if not cfg.no_memory:
        mem_encoder = memory.BaselineEncoder()
        records = corpus.load_querylog(cfg.querylog_path, catalog)
        mem = memory.build_memory(records, catalog, mem_encoder)
    prompts = _training_prompts(split, catalog, mem, mem_encoder, _template(cfg), cfg)
    artifacts = _artifacts(cfg)
    promptgen.export_prompts(prompts, artifacts / "prompts.jsonl")

    endpoint = _endpoint(cfg)
    ppl = gen_mod.RemoteGenerator(endpoint) if endpoint else gen_mod.UnigramPerplexity()
    schedule = build_curriculum(
        prompts,
        ppl,
        fraction=cfg.curriculum_fraction,
        high_epochs=cfg.curriculum_high_epochs,
        base_epochs=cfg.curriculum_base_epochs,
    )
    with open(artifacts / "schedule.json", "w", encoding="utf-8") as f:
        json.dump(
            {
                "threshold_fraction": schedule.threshold_fraction,
                "entries": [[pid, ep] for pid, ep in schedule.entries],
            },
            f,
            sort_keys=True,
            indent=2,
        )
    write_manifest(cfg, "make-prompts", notes={"prompts": len(prompts)})
    print(f"exported {len(prompts)} training prompts and curriculum schedule")
    return 0


def cmd_train_title(cfg: RunConfig) -> int:
    catalog, _ = _load_corpus(cfg)
    model = _load_or_train_title(cfg, catalog, _artifacts(cfg))
    write_manifest(cfg, "train-title", notes={"vocab": model.vocab.size})
    print(f"title model ready (vocab {model.vocab.size})")
    return 0


def cmd_train_id(cfg: RunConfig) -> int:
    catalog, seqs = _load_corpus(cfg)
    split = corpus.leave_one_out_split(seqs)
    table = _load_or_train_id(cfg, catalog, split, _artifacts(cfg))
    write_manifest(cfg, "train-id", notes={"items": len(table.item_ids)})
    print(f"id table ready ({len(table.item_ids)} items)")
    return 0


def cmd_recommend(cfg: RunConfig, setting: str) -> int:
    catalog, seqs = _load_corpus(cfg)
    split = _split_for(cfg, setting, seqs)
    artifacts = _artifacts(cfg)
    pipeline = _build_pipeline(cfg, catalog, split, artifacts)
    records = evalkit.run_pipeline(pipeline, split, jobs=cfg.jobs)
    retrieval.write_run_records(records, artifacts / "run_records.jsonl")
    write_manifest(cfg, "recommend", notes={"pairs": len(records), "setting": setting})
    print(f"wrote {len(records)} run records")
    return 0


def cmd_evaluate(cfg: RunConfig, setting: str) -> int:
    catalog, seqs = _load_corpus(cfg)
    artifacts = _artifacts(cfg)
    if setting == "zero-shot":
        if not cfg.zs_catalog_path or not cfg.zs_interactions_path:
            raise ConfigError("zero-shot needs zs_catalog_path and zs_interactions_path")
        # title encoder comes from the source category's artifacts
        title_model = _load_or_train_title(cfg, catalog, artifacts)
        zs_catalog = corpus.load_catalog(cfg.zs_catalog_path)
        zs_seqs = corpus.load_interactions(cfg.zs_interactions_path, zs_catalog)
        split = corpus.leave_one_out_split(zs_seqs)
        pipeline = retrieval.Pipeline(
            catalog=zs_catalog,
            template=_template(cfg),
            generator=_build_generator(cfg, split, zs_catalog),
            title_model=title_model,
            title_index=retrieval.build_title_index(zs_catalog, title_model),
            id_table=None,
            gen_params=cfg.generation_params(),
            mixup=retrieval.MixupParams(n_head=0, k_total=cfg.mixup_k),
        )
        result, records = evalkit.zero_shot_eval(
            pipeline, split, cfg.category, cfg.zs_category, n=cfg.metric_n, jobs=cfg.jobs
        )
        category = f"{cfg.category}->{cfg.zs_category}"
    else:
        split = _split_for(cfg, setting, seqs)
        pipeline = _build_pipeline(cfg, catalog, split, artifacts)
        result, records = evalkit.evaluate_setting(
            pipeline, split, n=cfg.metric_n, jobs=cfg.jobs
        )
        category = cfg.category
    retrieval.write_run_records(records, artifacts / "run_records.jsonl")
    report = evalkit.make_report(setting, category, result, evalkit.config_hash(cfg.to_dict()))
    evalkit.write_report(report, artifacts / "report.json")
    ablations = {
        k: getattr(cfg, k)
        for k in ("no_attributes", "no_memory", "no_title_emb", "no_id_emb")
        if getattr(cfg, k)
    }
    write_manifest(
        cfg,
        "evaluate",
        notes={"setting": setting, "ablations": ablations, "mixup_n": pipeline.mixup.n_head},
    )
    print(evalkit.format_report_table(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fashionrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--items", type=int, default=250)
    p_synth.add_argument("--users", type=int, default=50)
    p_synth.add_argument("--families", type=int, default=50)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", default="data")

    for name in (
        "ingest",
        "build-memory",
        "make-prompts",
        "train-title",
        "train-id",
        "recommend",
        "evaluate",
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        if name in ("recommend", "evaluate"):
            p.add_argument(
                "--setting",
                default="leave-one-out",
                choices=["leave-one-out", "cold-start", "zero-shot", "low-resource"],
            )
            p.add_argument("--ratio", type=float, default=None, help="low-resource train ratio")
            p.add_argument(
                "--ablation",
                action="append",
                default=[],
                choices=["no_attributes", "no_memory", "no_title_emb", "no_id_emb"],
            )
            p.add_argument("--jobs", type=int, default=None)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "ratio", None) is not None:
        updates["low_resource_ratio"] = args.ratio
    if getattr(args, "jobs", None) is not None:
        updates["jobs"] = args.jobs
    for name in getattr(args, "ablation", []) or []:
        updates[name] = True
    return dataclasses.replace(cfg, **updates) if updates else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = _apply_overrides(RunConfig.load(args.config), args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "build-memory":
            return cmd_build_memory(cfg)
        if args.command == "make-prompts":
            return cmd_make_prompts(cfg)
        if args.command == "train-title":
            return cmd_train_title(cfg)
        if args.command == "train-id":
            return cmd_train_id(cfg)
        if args.command == "recommend":
            return cmd_recommend(cfg, args.setting)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.setting)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (corpus.CorpusError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
