#!/usr/bin/env python3
"""End-to-end demo: corpus -> keys -> transform -> federated query -> reports.

Drives the isovec CLI exactly as an operator would, on a corpus small enough
to finish in about a minute. All artifacts land in --workdir.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from isovec.cli import main as isovec


def run(argv: list[str]) -> None:
    print("+ isovec " + " ".join(argv), flush=True)
    rc = isovec(argv)
    if rc != 0:
        sys.exit(f"step failed with exit code {rc}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="pipeline_out")
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--topics", type=int, default=10)
    ap.add_argument("--per-topic", type=int, default=100)
    ap.add_argument("--orgs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("-k", type=int, default=10)
    args = ap.parse_args()

    wd = args.workdir
    os.makedirs(wd, exist_ok=True)
    corpus = os.path.join(wd, "corpus")

    run([
        "gen-data", "--out-dir", corpus, "--dim", str(args.dim),
        "--topics", str(args.topics), "--per-topic", str(args.per_topic),
        "--queries-per-topic", "3", "--seed", str(args.seed),
        "--orgs", str(args.orgs), "--partition-seed", str(args.seed),
    ])

    trans_dir = os.path.join(wd, "shards_trans")
    os.makedirs(trans_dir, exist_ok=True)
    entries = []
    naive_entries = []
    for i in range(args.orgs):
        key_path = os.path.join(wd, f"org{i:02d}.key")
        raw = os.path.join(corpus, "shards_orig", f"org{i:02d}.trv1")
        trans = os.path.join(trans_dir, f"org{i:02d}.trv1")
        run(["keygen", "--out", key_path, "--seed", str(1000 + i)])
        run(["transform", "--key", key_path, "--in", raw, "--out", trans])
        entries.append({
            "org_id": i, "key_path": key_path,
            "store_path": trans, "raw_store_path": raw,
        })
        naive_entries.append({"org_id": i, "store_path": raw})

    manifest = os.path.join(wd, "manifest.json")
    naive_manifest = os.path.join(wd, "manifest_naive.json")
    policy = os.path.join(wd, "policy.json")
    with open(manifest, "w") as fh:
        json.dump({"orgs": entries}, fh, indent=2)
    with open(naive_manifest, "w") as fh:
        json.dump({"orgs": naive_entries}, fh, indent=2)
    with open(policy, "w") as fh:
        json.dump({"authorized": list(range(args.orgs))}, fh)

    queries = os.path.join(corpus, "queries.trv1")
    qrels = os.path.join(corpus, "qrels.tsv")
    run_naive = os.path.join(wd, "run_naive.jsonl")
    run_trans = os.path.join(wd, "run_trans.jsonl")
    run(["fedquery", "--manifest", naive_manifest, "--queries", queries,
         "--policy", policy, "-k", str(args.k), "--out", run_naive])
    run(["fedquery", "--manifest", manifest, "--queries", queries,
         "--policy", policy, "-k", str(args.k), "--out", run_trans])

    retrieval = os.path.join(wd, "retrieval.json")
    security = os.path.join(wd, "security.json")
    probing = os.path.join(wd, "probing.json")
    ablation = os.path.join(wd, "ablation.json")
    report = os.path.join(wd, "report.json")
    run(["eval-retrieval", "--naive", run_naive, "--candidate", run_trans,
         "--qrels", qrels, "-k", str(args.k), "--out", retrieval])
    run(["eval-security", "--manifest", manifest,
         "--orig", os.path.join(corpus, "shards_orig"), "--trans", trans_dir,
         "--sample", "5000", "--out", security])
    run(["attack", "--manifest", manifest, "--queries", queries,
         "--qrels", qrels, "-k", str(args.k), "--out", probing])
    run(["ablate", "--manifest", manifest, "--queries", queries,
         "--qrels", qrels, "-k", str(args.k), "--out", ablation])
    run(["report", "--inputs", retrieval, security, probing, ablation,
         "--out", report])

    with open(report) as fh:
        merged = json.load(fh)
    summary = merged["sections"]["retrieval"]["summary"]
    sec = merged["sections"]["security"]["report"]
    print("\n== pipeline summary ==")
    print(f"overlap vs naive:     {summary['mean_overlap']:.3f}")
    print(f"spearman vs naive:    {summary['mean_spearman']:.3f}")
    print(f"ndcg naive/candidate: {summary['ndcg_naive']:.3f} / {summary['ndcg_candidate']:.3f}")
    cross = [row[j] for i, row in enumerate(sec["isolation"])
             for j in range(len(row)) if i != j and row[j] is not None]
    print(f"isolation (min cross-org pair): {min(cross):.4f}")
    print(f"report: {report}")


if __name__ == "__main__":
    main()
