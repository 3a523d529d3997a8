#!/usr/bin/env python3
"""Ablation sweep on a synthetic corpus with a noisy mock generator:
full pipeline vs w/o attributes, w/o memory, w/o title embedding (id-only),
and w/o id embedding (title-only).

    python3 scripts/run_ablations.py --seed 11
"""

import argparse
import dataclasses

from fashionrec.corpus import SynthSpec, leave_one_out_split, synth_corpus
from fashionrec.evalkit import evaluate_setting
from fashionrec.generator import NoisyMock
from fashionrec.promptgen import default_template
from fashionrec.retrieval import MixupParams

from run_synth_experiment import build_pipeline


ABLATIONS = {
    "full": {},
    "no_attributes": {"attribute_keys": ("title",)},
    "no_memory": {"mem": None, "mem_encoder": None},
    "no_title_emb": {"mixup": MixupParams(n_head=10, k_total=10)},
    "no_id_emb": {"mixup": MixupParams(n_head=0, k_total=10)},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--items", type=int, default=250)
    ap.add_argument("--users", type=int, default=150)
    ap.add_argument("--corrupt", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    spec = SynthSpec(num_items=args.items, num_users=args.users, num_families=50)
    catalog, seqs = synth_corpus(spec, seed=args.seed)
    split = leave_one_out_split(seqs)
    base = build_pipeline(
        catalog, split,
        lambda t: NoisyMock(t, corrupt_prob=args.corrupt, seed=args.seed),
        args.seed,
    )

    print(f"{'variant':<16} {'Recall@10':>10} {'NDCG@10':>10} {'MRR':>10}")
    for name, overrides in ABLATIONS.items():
        pipeline = base
        if "attribute_keys" in overrides:
            template = dataclasses.replace(
                default_template(), attribute_keys=overrides.pop("attribute_keys")
            )
            pipeline = dataclasses.replace(pipeline, template=template)
        if overrides:
            pipeline = dataclasses.replace(pipeline, **overrides)
        result, _ = evaluate_setting(pipeline, split, n=10)
        print(
            f"{name:<16} {result.recall_at_n:>10.4f} {result.ndcg_at_n:>10.4f} "
            f"{result.mrr:>10.4f}"
        )


if __name__ == "__main__":
    main()
