"""Command-line interface: one binary exposing every workflow.

Exit codes: 0 success, 2 usage errors (argparse), 3 data/format errors,
4 invariant violations detected under ``--check``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time
from typing import Optional

import numpy as np

from . import __version__
from .federation import (
    AccessPolicy,
    Organization,
    federated_query,
    partition_stratified,
    transform_query,
)
from .keys import OrgKey, TransformConfig, generate_key, read_key_file, write_key_file
from .ranking_metrics import evaluate_run, read_qrels, write_qrels
from .sealed import SealedStoreError, aead_query, seal
from .security import compute_security_report, probing_attack
from .store import (
    EmbeddingMatrix,
    StoreError,
    load,
    make_matrix,
    query_topk,
    save,
)
from .synth import SynthSpec, generate
from .transform import TransformPlan, derive_plan, transform, transform_batch

__all__ = ["main", "REPORT_SCHEMA"]

THREADS_ENV = "ISOVEC_THREADS"

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "isovec consolidated report",
    "type": "object",
    "required": ["sections", "manifest"],
    "additionalProperties": False,
    "properties": {
        "manifest": {
            "type": "object",
            "required": ["tool", "version", "command", "inputs"],
            "properties": {
                "tool": {"const": "isovec"},
                "version": {"type": "string"},
                "command": {"type": "string"},
                "inputs": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
        "sections": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["kind"],
                "properties": {"kind": {"type": "string"}},
            },
        },
    },
}


class InvariantViolation(Exception):
    """A ``--check`` verification failed; mapped to exit code 4."""


def _workers() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        return None
    return n if n > 0 else None


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command: str, inputs: dict, params: dict, timestamp: bool = True) -> dict:
    out = {
        "tool": "isovec",
        "version": __version__,
        "command": command,
        "inputs": {name: _file_digest(path) for name, path in inputs.items()},
        "params": params,
    }
    if timestamp:
        out["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return out


def _write_json(path: Optional[str], payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_vector(path: str) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim == 2 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 1:
        raise ValueError(f"{path}: expected a single query vector")
    return np.asarray(arr, dtype=np.float64)


def _check_store(matrix: EmbeddingMatrix, name: str) -> None:
    if matrix.unit_norm and matrix.count:
        norms = np.linalg.norm(matrix.rows.astype(np.float64), axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > 1e-3:
            raise InvariantViolation(f"{name}: unit-norm flag violated (deviation {worst:.2e})")
    if matrix.transformed and matrix.config_digest == b"\x00" * 32:
        raise InvariantViolation(f"{name}: transformed store carries no config digest")


def _config_from_args(args: argparse.Namespace, dim: int) -> TransformConfig:
    return TransformConfig(
        dim=dim,
        stages=args.stages,
        beta=args.beta,
        alpha=args.alpha,
        enable_blinding=not args.no_blinding,
        enable_permutation=not args.no_permutation,
        offset_sigma=args.offset_sigma,
    )


def _add_transform_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--offset-sigma", type=float, default=0.1)
    p.add_argument("--no-blinding", action="store_true")
    p.add_argument("--no-permutation", action="store_true")


def _write_plan_sidecar(store_path: str, plan: TransformPlan) -> None:
    meta = {
        "config": plan.config.canonical_dict(),
        "key_fingerprint": plan.key_fingerprint.hex(),
        "digest": plan.digest().hex(),
    }
    _write_json(store_path + ".meta.json", meta)


def _plan_for_store(store_path: str, key: OrgKey) -> TransformPlan:
    """Rebuild the plan from the store's sidecar config and verify the digest."""
    meta_path = store_path + ".meta.json"
    if not os.path.exists(meta_path):
        raise ValueError(f"missing transform sidecar: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = meta["config"]
    config = TransformConfig(
        dim=int(cfg["dim"]),
        stages=int(cfg["stages"]),
        beta=float(cfg["beta"]),
        alpha=float(cfg["alpha"]),
        enable_blinding=bool(cfg["enable_blinding"]),
        enable_permutation=bool(cfg["enable_permutation"]),
        offset_sigma=float(cfg["offset_sigma"]),
    )
    plan = derive_plan(key, config)
    if plan.digest().hex() != meta["digest"]:
        raise ValueError(f"{store_path}: key does not match store transform digest")
    return plan


def _load_consortium(manifest_path: str, need_keys: bool, raw_stores: bool = False):
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    orgs = []
    for entry in manifest["orgs"]:
        org_id = int(entry["org_id"])
        store_key = "raw_store_path" if raw_stores else "store_path"
        if store_key not in entry:
            raise ValueError(f"manifest entry for org {org_id} lacks {store_key}")
        store = load(entry[store_key])
        key = None
        plan = None
        if entry.get("key_path"):
            key = read_key_file(entry["key_path"])
            if store.transformed:
                plan = _plan_for_store(entry[store_key], key)
        elif need_keys and store.transformed:
            raise ValueError(f"org {org_id}: transformed store requires key_path")
        orgs.append(Organization(org_id=org_id, store=store, key=key, plan=plan))
    return orgs


def _read_run_jsonl(path: str) -> dict[int, list[int]]:
    run: dict[int, list[int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            run[int(rec["query_id"])] = [int(h["doc_id"]) for h in rec["hits"]]
    return run


# --------------------------------------------------------------------------
# subcommands


def cmd_keygen(args) -> int:
    key = generate_key(seed=args.seed)
    if key.is_all_zero():
        print("warning: generated key is all zeros", file=sys.stderr)
    path = args.out
    if args.bin and not path.endswith(".bin"):
        path += ".bin"
    write_key_file(path, key)
    print(path)
    return 0


def cmd_gen_data(args) -> int:
    spec = SynthSpec(
        dim=args.dim,
        topics=args.topics,
        per_topic=args.per_topic,
        noise_sigma=args.noise,
        queries_per_topic=args.queries_per_topic,
        seed=args.seed,
    )
    corpus = generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    docs_path = os.path.join(args.out_dir, "docs.trv1")
    queries_path = os.path.join(args.out_dir, "queries.trv1")
    qrels_path = os.path.join(args.out_dir, "qrels.tsv")
    save(corpus.docs, docs_path)
    save(corpus.queries, queries_path)
    write_qrels(corpus.qrels, qrels_path)
    meta: dict = {
        "kind": "corpus-meta",
        "spec": {
            "dim": spec.dim,
            "topics": spec.topics,
            "per_topic": spec.per_topic,
            "noise_sigma": spec.noise_sigma,
            "queries_per_topic": spec.queries_per_topic,
            "seed": spec.seed,
        },
    }
    if args.orgs:
        shards = partition_stratified(corpus.docs, args.orgs, args.partition_seed)
        shard_dir = os.path.join(args.out_dir, "shards_orig")
        os.makedirs(shard_dir, exist_ok=True)
        entries = []
        for i, shard in enumerate(shards):
            path = os.path.join(shard_dir, f"org{i:02d}.trv1")
            save(shard, path)
            entries.append({"org_id": i, "raw_store_path": path})
        meta["partition"] = {"orgs": entries, "partition_seed": args.partition_seed}
        _write_json(os.path.join(args.out_dir, "partition.json"), meta["partition"])
    meta["manifest"] = _manifest(
        "gen-data", {}, {"seed": spec.seed, "out_dir": args.out_dir}
    )
    _write_json(os.path.join(args.out_dir, "corpus.json"), meta)
    return 0


def cmd_build(args) -> int:
    rows = np.load(args.vectors)
    if rows.ndim != 2:
        raise ValueError("--vectors must be a 2-D array")
    ids = np.load(args.ids) if args.ids else None
    labels = np.load(args.labels) if args.labels else None
    rows = np.asarray(rows, dtype=np.float64)
    if args.normalize:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize zero rows")
        rows = rows / norms
        unit = True
    else:
        norms = np.linalg.norm(rows, axis=1)
        unit = bool(rows.shape[0] == 0 or np.all(np.abs(norms - 1.0) <= 1e-3))
    matrix = make_matrix(rows, ids=ids, labels=labels, unit_norm=unit)
    save(matrix, args.out)
    print(args.out)
    return 0


def cmd_transform(args) -> int:
    key = read_key_file(args.key)
    store = load(args.infile)
    if args.check:
        _check_store(store, args.infile)
    if store.transformed:
        raise ValueError(f"{args.infile}: store is already transformed")
    config = _config_from_args(args, store.dim)
    plan = derive_plan(key, config)
    out_rows = transform_batch(
        store.rows.astype(np.float64), plan, workers=args.workers or _workers()
    )
    result = make_matrix(
        out_rows,
        ids=store.ids,
        labels=store.labels,
        unit_norm=True,
        transformed=True,
        config_digest=plan.digest(),
    )
    save(result, args.out)
    _write_plan_sidecar(args.out, plan)
    print(args.out)
    return 0


def cmd_query(args) -> int:
    store = load(args.store)
    if args.check:
        _check_store(store, args.store)
    q = _load_vector(args.query_vec)
    if store.transformed:
        if not args.key:
            raise ValueError("transformed store: --key is required to transform the query")
        key = read_key_file(args.key)
        plan = _plan_for_store(args.store, key)
        q = transform(q, plan)
    else:
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise ValueError("degenerate vector: zero norm query")
        q = q / norm
    hits = query_topk(store, q, args.k, org_id=args.org_id)
    if args.format == "tsv":
        for h in hits:
            sys.stdout.write(f"{h.rank}\t{h.doc_id}\t{h.org_id}\t{h.score:.9f}\n")
    else:
        payload = {
            "k": args.k,
            "hits": [h.to_dict() for h in hits],
            "manifest": _manifest(
                "query", {"store": args.store, "query_vec": args.query_vec}, {"k": args.k}
            ),
        }
        _write_json(args.out, payload)
    return 0


def cmd_fedquery(args) -> int:
    consortium = _load_consortium(args.manifest, need_keys=True)
    if args.check:
        for org in consortium:
            _check_store(org.store, f"org {org.org_id}")
    with open(args.policy, "r", encoding="utf-8") as fh:
        policy = AccessPolicy.allow(json.load(fh)["authorized"])
    queries = load(args.queries)
    workers = args.workers or _workers()
    lines = []
    for i in range(queries.count):
        ctx = federated_query(
            consortium,
            queries.rows[i].astype(np.float64),
            args.k,
            policy,
            query_id=int(queries.ids[i]),
            workers=workers,
        )
        lines.append(ctx)
    if args.format == "tsv":
        out = sys.stdout if not args.out or args.out == "-" else open(args.out, "w")
        try:
            for ctx in lines:
                for h in ctx.hits:
                    out.write(
                        f"{ctx.query_id}\t{h.rank}\t{h.doc_id}\t{h.org_id}"
                        f"\t{h.score:.9f}\t{h.normalized_score:.9f}\n"
                    )
        finally:
            if out is not sys.stdout:
                out.close()
    else:
        text = "".join(
            json.dumps(ctx.to_dict(), sort_keys=True) + "\n" for ctx in lines
        )
        if not args.out or args.out == "-":
            sys.stdout.write(text)
        else:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
    return 0


def cmd_eval_retrieval(args) -> int:
    naive = _read_run_jsonl(args.naive)
    candidate = _read_run_jsonl(args.candidate)
    qrels = read_qrels(args.qrels)
    cmp = evaluate_run(naive, candidate, qrels, args.k, keep_per_query=True)
    payload = {
        "kind": "retrieval",
        "summary": cmp.to_dict(),
        "per_query": {str(q): v for q, v in cmp.per_query.items()},
        "manifest": _manifest(
            "eval-retrieval",
            {"naive": args.naive, "candidate": args.candidate, "qrels": args.qrels},
            {"k": args.k},
        ),
    }
    _write_json(args.out, payload)
    return 0


def cmd_eval_security(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    org_ids = [int(e["org_id"]) for e in manifest["orgs"]]
    orig_stores = [load(os.path.join(args.orig, f"org{i:02d}.trv1")) for i in org_ids]
    trans_stores = [load(os.path.join(args.trans, f"org{i:02d}.trv1")) for i in org_ids]
    report = compute_security_report(
        org_ids,
        orig_stores,
        trans_stores,
        tau=args.tau,
        knn_k=args.k,
        sample=args.sample,
        seed=args.seed,
        mi_knn=args.mi_knn,
    )
    payload = {
        "kind": "security",
        "report": report.to_dict(),
        "manifest": _manifest(
            "eval-security",
            {"manifest": args.manifest},
            {"tau": args.tau, "k": args.k, "sample": args.sample, "seed": args.seed},
        ),
    }
    _write_json(args.out, payload)
    return 0


def cmd_attack(args) -> int:
    consortium = _load_consortium(args.manifest, need_keys=True)
    queries = load(args.queries)
    qrels = read_qrels(args.qrels)
    result = probing_attack(consortium, queries, qrels, k=args.k)
    payload = {
        "kind": "probing",
        "result": result.to_dict(),
        "manifest": _manifest(
            "attack",
            {"manifest": args.manifest, "queries": args.queries, "qrels": args.qrels},
            {"k": args.k},
        ),
    }
    _write_json(args.out, payload)
    return 0


def _bench_rows(stream_seed: int, n: int, dim: int) -> np.ndarray:
    from .keys import PrngStream

    stream = PrngStream(hashlib.sha256(b"bench" + stream_seed.to_bytes(8, "little")).digest())
    rows = stream.gaussians(n * dim).reshape(n, dim)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes:
        raise ValueError("--sizes must name at least one store size")
    rows_out = []
    for n in sizes:
        data = _bench_rows(args.seed, n, args.dim)
        queries = _bench_rows(args.seed + 1, args.queries, args.dim)
        raw = make_matrix(data, unit_norm=True)

        t0 = time.perf_counter()
        if args.mode == "aead":
            key = generate_key(seed=args.seed + 2).key
            sealed = seal(raw, key)
        elif args.mode == "transform":
            okey = generate_key(seed=args.seed + 3)
            plan = derive_plan(okey, TransformConfig(dim=args.dim))
            trans = make_matrix(
                transform_batch(data, plan),
                unit_norm=True,
                transformed=True,
                config_digest=plan.digest(),
            )
        processing_ms = (time.perf_counter() - t0) * 1e3

        naive_lat = []
        for q in queries:
            t0 = time.perf_counter()
            query_topk(raw, q, args.k)
            naive_lat.append((time.perf_counter() - t0) * 1e3)
        naive_ms = statistics.median(naive_lat)

        exposed = 0
        if args.mode == "naive":
            mode_ms = naive_ms
        elif args.mode == "aead":
            lat = []
            for q in queries:
                t0 = time.perf_counter()
                _, exposed = aead_query(sealed, key, q, args.k)
                lat.append((time.perf_counter() - t0) * 1e3)
            mode_ms = statistics.median(lat)
        else:
            lat = []
            for q in queries:
                t0 = time.perf_counter()
                tq = transform(q, plan)
                query_topk(trans, tq, args.k)
                lat.append((time.perf_counter() - t0) * 1e3)
            mode_ms = statistics.median(lat)

        rows_out.append(
            {
                "mode": args.mode,
                "n_rows": n,
                "dim": args.dim,
                "data_processing_ms": round(processing_ms, 3),
                "query_ms_median": round(mode_ms, 3),
                "naive_query_ms_median": round(naive_ms, 3),
                "query_overhead_ms": round(mode_ms - naive_ms, 3),
                "exposed_rows_per_query": exposed,
            }
        )
    fieldnames = list(rows_out[0].keys())
    out = sys.stdout if not args.out or args.out == "-" else open(args.out, "w", newline="")
    try:
        writer = csv.DictWriter(out, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows_out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


_ABLATION_CONFIGS = {
    "complete": {"enable_blinding": True, "enable_permutation": True},
    "no_blinding": {"enable_blinding": False, "enable_permutation": True},
    "no_permutation": {"enable_blinding": True, "enable_permutation": False},
    "no_both": {"enable_blinding": False, "enable_permutation": False},
}


def cmd_ablate(args) -> int:
    raw_orgs = _load_consortium(args.manifest, need_keys=True, raw_stores=True)
    queries = load(args.queries)
    qrels = read_qrels(args.qrels)
    workers = args.workers or _workers()
    policy = AccessPolicy.allow([org.org_id for org in raw_orgs])
    qrows = queries.rows.astype(np.float64)
    qids = [int(q) for q in queries.ids]

    def run_config(flavor: Optional[str]) -> dict[int, list[int]]:
        consortium = []
        for org in raw_orgs:
            if flavor is None:
                consortium.append(Organization(org_id=org.org_id, store=org.store))
                continue
            if org.key is None:
                raise ValueError(f"org {org.org_id}: ablation requires key material")
            config = TransformConfig(dim=org.store.dim, **_ABLATION_CONFIGS[flavor])
            plan = derive_plan(org.key, config)
            trans = make_matrix(
                transform_batch(org.store.rows.astype(np.float64), plan, workers=workers),
                ids=org.store.ids,
                labels=org.store.labels,
                unit_norm=True,
                transformed=True,
                config_digest=plan.digest(),
            )
            consortium.append(
                Organization(org_id=org.org_id, store=trans, key=org.key, plan=plan)
            )
        run: dict[int, list[int]] = {}
        for i, qid in enumerate(qids):
            ctx = federated_query(consortium, qrows[i], args.k, policy, query_id=qid)
            run[qid] = ctx.doc_ids()
        return run

    naive_run = run_config(None)
    rows = {}
    for flavor in [*_ABLATION_CONFIGS, "naive"]:
        candidate = naive_run if flavor == "naive" else run_config(flavor)
        cmp = evaluate_run(naive_run, candidate, qrels, args.k)
        rows[flavor] = cmp.to_dict()
    payload = {
        "kind": "ablation",
        "k": args.k,
        "rows": rows,
        "manifest": _manifest(
            "ablate",
            {"manifest": args.manifest, "queries": args.queries, "qrels": args.qrels},
            {"k": args.k},
        ),
    }
    _write_json(args.out, payload)
    return 0


def cmd_report(args) -> int:
    sections: dict[str, dict] = {}
    inputs: dict[str, str] = {}
    for path in args.inputs:
        inputs[os.path.basename(path)] = _file_digest(path)
        if path.endswith(".csv"):
            with open(path, "r", encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
            content: dict = {"kind": "bench", "rows": rows}
        else:
            with open(path, "r", encoding="utf-8") as fh:
                content = json.load(fh)
            if "kind" not in content:
                raise ValueError(f"{path}: input lacks a 'kind' tag")
        kind = content["kind"]
        if kind in sections:
            raise ValueError(f"duplicate section kind: {kind}")
        sections[kind] = content
    payload = {
        "sections": sections,
        # no timestamp: the merged report must be byte-stable given its inputs
        "manifest": {
            "tool": "isovec",
            "version": __version__,
            "command": "report",
            "inputs": inputs,
        },
    }
    _write_json(args.out, payload)
    return 0


# --------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isovec",
        description="Key-isolated vector spaces for federated embedding retrieval",
    )
    parser.add_argument("--version", action="version", version=f"isovec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file supplying flag defaults")
    common.add_argument(
        "--check", action="store_true", help="verify store invariants (exit 4 on violation)"
    )

    p = sub.add_parser("keygen", parents=[common], help="generate an organization key")
    p.add_argument("--out", required=True)
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--hex", action="store_true", default=True)
    grp.add_argument("--bin", action="store_true", default=False)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--per-topic", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.35)
    p.add_argument("--queries-per-topic", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--orgs", type=int, default=0)
    p.add_argument("--partition-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build", parents=[common], help="ingest raw vectors into a store")
    p.add_argument("--vectors", required=True)
    p.add_argument("--ids")
    p.add_argument("--labels")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("transform", parents=[common], help="transform a store under a key")
    p.add_argument("--key", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    _add_transform_flags(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("query", parents=[common], help="query one store")
    p.add_argument("--store", required=True)
    p.add_argument("--query-vec", required=True)
    p.add_argument("--key", help="key file (required for transformed stores)")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--org-id", type=int, default=0)
    p.add_argument("--format", choices=["json", "tsv"], default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("fedquery", parents=[common], help="federated query across orgs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--format", choices=["json", "tsv"], default="json")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_fedquery)

    p = sub.add_parser("eval-retrieval", parents=[common], help="compare two runs")
    p.add_argument("--naive", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-security", parents=[common], help="cross-org security metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--orig", required=True, help="directory of raw per-org stores")
    p.add_argument("--trans", required=True, help="directory of transformed per-org stores")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("-k", type=int, default=20)
    p.add_argument("--sample", type=int, default=10**5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mi-knn", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_security)

    p = sub.add_parser("attack", parents=[common], help="cross-key probing attack matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", parents=[common], help="latency scaling benchmark")
    p.add_argument("--mode", choices=["naive", "aead", "transform"], required=True)
    p.add_argument("--sizes", default="1000,10000,100000")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", parents=[common], help="run the feature-ablation table")
    p.add_argument("--manifest", required=True, help="manifest with raw_store_path entries")
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", parents=[common], help="merge evaluation outputs")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args, remaining = parser.parse_known_args(argv)
    if remaining:
        parser.error(f"unrecognized arguments: {' '.join(remaining)}")
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config file: {exc}", file=sys.stderr)
            return 3
        # config supplies defaults; explicit flags already won at parse time,
        # so re-parse with config values injected as defaults
        sub_argv = list(argv) if argv is not None else sys.argv[1:]
        parser = _build_parser()
        for action in parser._subparsers._group_actions:  # type: ignore[union-attr]
            choice = action.choices.get(args.command)  # type: ignore[union-attr]
            if choice is not None:
                known = {a.dest for a in choice._actions}
                unknown = set(defaults) - known
                if unknown:
                    print(
                        f"error: config file sets unknown options: {sorted(unknown)}",
                        file=sys.stderr,
                    )
                    return 2
                choice.set_defaults(**defaults)
        args = parser.parse_args(sub_argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    except (
        StoreError,
        SealedStoreError,
        ValueError,
        KeyError,
        OSError,
        ArithmeticError,
        json.JSONDecodeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
