"""Experiment orchestration: corpora on disk, phased runs, reports.

Artifacts live under a data root (L3_DATA_DIR or ./l3-data): corpora
are JSONL task files keyed by content hash, runs are directories with a
config echo, a parameter checkpoint, hypothesis logs, and a report.
Every phase is restartable; (config, seed) determines all bytes except
wall-clock fields, and hash checks turn silent corpus/checkpoint drift
into StalenessError.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, compare, evaluate_baseline
from .config import ExperimentConfig
from .errors import ConfigError, ContractError, StalenessError
from .nav.model import (CurvePoint, NavAdapter, estimate_reward,
                        finetune_policy_gradient, nav_pretrain)
from .nav.world import (OFFSETS, expert_action, parse_instruction,
                        run_episode, sample_start, task_from_record,
                        task_to_record)
from .params import load_params, save_params
from .protocol import (LANG, SPLITS, TEST, VAL, ModelBundle, ParameterStore,
                       TaskDataset, concept_learn, language_learn,
                       oracle_hypothesis)
from .seeding import derive_rng
from .shapes.scenes import (build_shape_corpus, concept_from_record,
                            concept_to_record, eval_concept,
                            scene_from_record, scene_to_record)
from .strings.corpus import (build_string_corpus, augment, identity_fraction,
                             load_bundled_wordlist)
from .strings.model import engine_metric
from .strings.transducer import apply_transducer, parse_formal_tokens

__all__ = ["data_root", "gen_data", "load_corpus", "audit_corpus",
           "pretrain", "concept_phase", "eval_phase", "run", "run_dir",
           "corpus_dir", "report_table", "write_table_csv",
           "aggregate_curves", "load_report"]

DATA_ENV = "L3_DATA_DIR"


def data_root(explicit: str | Path | None = None) -> Path:
    return Path(explicit or os.environ.get(DATA_ENV) or "l3-data")


def _json_dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")


def _hash8(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]


def _content_hash(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# corpus serialization


def task_to_json(domain: str, task: TaskDataset) -> dict:
    ann = task.oracle_annotation()
    if domain == "strings":
        return {"task_id": task.task_id, "split": task.split,
                "pairs": [[x, y] for x, y in task.examples],
                "query_in": task.info["query_in"],
                "query_out": task.info["query_out"],
                "rule": task.info["rule"],
                "annotation_tokens": list(ann),
                "style": list(task.info.get("style", (0, 0, 0))),
                "novel_rule": bool(task.info.get("novel_rule", False))}
    if domain == "shapes":
        return {"task_id": task.task_id, "split": task.split,
                "caption": list(ann),
                "scenes": [scene_to_record(s) for s in task.examples],
                "query": scene_to_record(task.info["query"]),
                "label": int(task.info["label"]),
                "concept": task.info["concept"],
                "novel_concept": bool(task.info.get("novel_concept", False))}
    return task_to_record(task)


def task_from_json(domain: str, rec: dict) -> TaskDataset:
    if domain == "strings":
        return TaskDataset(
            rec["task_id"], [tuple(p) for p in rec["pairs"]], rec["split"],
            annotation=list(rec["annotation_tokens"]),
            info={"rule": rec["rule"], "style": tuple(rec.get("style", ())),
                  "novel_rule": rec.get("novel_rule", False),
                  "query_in": rec["query_in"], "query_out": rec["query_out"]})
    if domain == "shapes":
        return TaskDataset(
            rec["task_id"], [scene_from_record(s) for s in rec["scenes"]],
            rec["split"], annotation=list(rec["caption"]),
            info={"query": scene_from_record(rec["query"]),
                  "label": int(rec["label"]), "concept": rec["concept"],
                  "novel_concept": rec.get("novel_concept", False)})
    return task_from_record(rec)


def build_corpus(cfg: ExperimentConfig) -> list[TaskDataset]:
    """All splits in memory; deterministic in (corpus config, seed)."""
    if cfg.domain == "shapes":
        return build_shape_corpus(cfg.seed, cfg.corpus_config())
    if cfg.domain == "strings":
        words = load_bundled_wordlist()
        tasks = build_string_corpus(cfg.seed, words, cfg.corpus_config())
        if cfg.augment_factor > 1:
            lang = [t for t in tasks if t.split == LANG]
            rest = [t for t in tasks if t.split != LANG]
            tasks = augment(lang, cfg.augment_factor, cfg.seed, words,
                            cfg.annotation_mode) + rest
        return tasks
    from .nav.world import build_nav_corpus
    return build_nav_corpus(cfg.seed, cfg.corpus_config())


def _corpus_key(cfg: ExperimentConfig) -> str:
    ident = {"domain": cfg.domain, "corpus": asdict(cfg.corpus_config()),
             "augment_factor": cfg.augment_factor, "wordlist": "bundled"}
    return _hash8(json.dumps(ident, sort_keys=True))


def corpus_dir(cfg: ExperimentConfig, root: str | Path | None = None) -> Path:
    return data_root(root) / "corpora" / \
        f"{cfg.domain}-seed{cfg.seed}-{_corpus_key(cfg)}"


def gen_data(cfg: ExperimentConfig, root: str | Path | None = None) -> Path:
    """Write tasks.jsonl + manifest.json for the config's corpus.

    Deterministic per seed: regenerating reproduces the same bytes. The
    manifest records the content hash, per-split counts, generator audit
    results, and (strings) the measured identity fraction.
    """
    cfg = cfg.resolve()
    out = corpus_dir(cfg, root)
    tasks = build_corpus(cfg)
    lines = [json.dumps(task_to_json(cfg.domain, t), sort_keys=True)
             for t in tasks]
    payload = "\n".join(lines) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "tasks.jsonl"
    try:
        path.write_text(payload, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write corpus to {path}: {e}") from e
    audits = audit_corpus(cfg.domain, tasks, seed=cfg.seed)
    counts: dict[str, int] = {}
    for t in tasks:
        counts[t.split] = counts.get(t.split, 0) + 1
    manifest = {"domain": cfg.domain, "seed": cfg.seed,
                "key": _corpus_key(cfg),
                "content_hash": _content_hash(payload),
                "counts": counts, "audits": audits}
    if cfg.domain == "strings":
        manifest["identity_fraction"] = {
            s: identity_fraction(tasks, s) for s in SPLITS if counts.get(s)}
    _json_dump(out / "manifest.json", manifest)
    return out


def load_corpus(cfg: ExperimentConfig,
                root: str | Path | None = None) -> tuple[list[TaskDataset], dict]:
    cfg = cfg.resolve()
    out = corpus_dir(cfg, root)
    path = out / "tasks.jsonl"
    if not path.exists():
        raise ConfigError(f"corpus {path} does not exist; run gen-data first")
    payload = path.read_text(encoding="utf-8")
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    got = _content_hash(payload)
    if got != manifest["content_hash"]:
        raise StalenessError(
            f"{path}: content hash {got} != manifest {manifest['content_hash']}")
    tasks = [task_from_json(cfg.domain, json.loads(line))
             for line in payload.splitlines() if line]
    return tasks, manifest


# ---------------------------------------------------------------------------
# generator audits


def audit_corpus(domain: str, tasks: list[TaskDataset], seed: int = 0,
                 maps_per_task: int = 2) -> dict:
    """Re-validate every task against the symbolic ground truth.

    Raises ContractError on the first violation; returns check counts
    for the manifest when everything holds.
    """
    if domain == "shapes":
        pos = 0
        for t in tasks:
            concept = concept_from_record(t.info["concept"])
            for s in t.examples:
                if not eval_concept(concept, s):
                    raise ContractError(f"{t.task_id}: positive scene fails "
                                        "its concept")
                pos += 1
            if eval_concept(concept, t.info["query"]) != bool(t.info["label"]):
                raise ContractError(f"{t.task_id}: query label mismatch")
        balance = {}
        for split in SPLITS:
            labels = [t.info["label"] for t in tasks if t.split == split]
            # exact 50/50 per split; an odd count leaves one extra negative
            if labels and abs(sum(labels) * 2 - len(labels)) > len(labels) % 2:
                raise ContractError(f"{split}: label balance "
                                    f"{sum(labels)}/{len(labels)} not 50/50")
            balance[split] = f"{sum(labels)}/{len(labels)}"
        return {"positives_checked": pos, "queries_checked": len(tasks),
                "label_balance": balance}
    if domain == "strings":
        pairs = 0
        for t in tasks:
            rule = parse_formal_tokens(t.info["rule"].split())
            for x, y in list(t.examples) + [(t.info["query_in"],
                                             t.info["query_out"])]:
                if apply_transducer(rule, x) != y:
                    raise ContractError(f"{t.task_id}: pair {x!r}->{y!r} "
                                        "inconsistent with its rule")
                pairs += 1
        return {"pairs_checked": pairs}
    maps = 0
    for i, t in enumerate(tasks):
        nav_task = t.examples.task
        if parse_instruction(nav_task.instruction) != (nav_task.landmark,
                                                       nav_task.offset):
            raise ContractError(f"{t.task_id}: instruction does not parse "
                                "back to its task")
        rng = derive_rng(seed, "audit", i)
        for _ in range(maps_per_task):
            grid = t.examples.sample(rng)  # constructor enforces solvability
            lm = [(r, c) for k, r, c in grid.landmarks
                  if k == nav_task.landmark]
            if len(lm) != 1:
                raise ContractError(f"{t.task_id}: target landmark count "
                                    f"{len(lm)} != 1")
            want = (lm[0][0] + nav_task.offset[0],
                    lm[0][1] + nav_task.offset[1])
            if grid.treasure != want:
                raise ContractError(f"{t.task_id}: treasure {grid.treasure} "
                                    f"not at landmark+offset {want}")
            maps += 1
    return {"maps_checked": maps, "instructions_checked": len(tasks)}


# ---------------------------------------------------------------------------
# run directories and checkpoints


def run_dir(cfg: ExperimentConfig, root: str | Path | None = None) -> Path:
    cfg = cfg.resolve()
    key = _hash8(cfg.to_text())
    return data_root(root) / "runs" / \
        f"{cfg.domain}-{cfg.method}-seed{cfg.seed}-{key}"


def _save_stores(path: Path, stores: dict[str, ParameterStore]) -> None:
    flat = {f"{prefix}/{name}": arr
            for prefix, store in stores.items()
            for name, arr in store.arrays.items()}
    save_params(path, flat)


def _load_stores(path: Path) -> dict[str, ParameterStore]:
    flat = load_params(path)
    stores: dict[str, ParameterStore] = {}
    for key, arr in flat.items():
        prefix, _, name = key.partition("/")
        stores.setdefault(prefix, ParameterStore()).arrays[name] = arr
    return stores


def _needs_pretrain(method: str) -> bool:
    return method not in ("identity", "rl-scratch")


def pretrain(cfg: ExperimentConfig, root: str | Path | None = None) -> Path:
    """Train (or reuse) the method's parameters; write the checkpoint.

    A checkpoint is reused only when its recorded corpus hash matches
    the corpus on disk; a mismatch raises StalenessError rather than
    silently mixing stale parameters with fresh data.
    """
    cfg = cfg.resolve()
    rd = run_dir(cfg, root)
    rd.mkdir(parents=True, exist_ok=True)
    (rd / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    tasks, manifest = load_corpus(cfg, root)
    ck = rd / "checkpoint.l3ck"
    meta_path = rd / "manifest.json"
    if ck.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta["corpus_hash"] != manifest["content_hash"]:
            raise StalenessError(
                f"{ck}: checkpoint was trained on corpus "
                f"{meta['corpus_hash']}, found {manifest['content_hash']}")
        return rd
    meta = {"seed": cfg.seed, "domain": cfg.domain, "method": cfg.method,
            "phase": "pretrain", "corpus_hash": manifest["content_hash"],
            "budgets": asdict(cfg.train_config()),
            "checkpoints": {"main": ck.name}}
    if not _needs_pretrain(cfg.method):
        meta["checkpoints"] = {}
        _json_dump(meta_path, meta)
        return rd
    lang = [t for t in tasks if t.split == LANG]
    val = [t for t in tasks if t.split == VAL]
    adapter = cfg.adapter()
    tc = cfg.train_config()
    if cfg.method in ("l3", "l3-oracle-descriptions", "l3-oracle-engine"):
        if cfg.domain == "nav":
            bundle = nav_pretrain(lang, adapter, tc, cfg.seed)
        else:
            bundle = language_learn(lang, adapter, tc, cfg.seed,
                                    val_tasks=val or None)
            meta["grid_choice"] = bundle.info
        _save_stores(ck, {"interp": bundle.interp,
                          "proposal": bundle.proposal})
    elif cfg.method == "multitask":
        from .protocol import multitask_fit
        model = multitask_fit(lang, adapter, tc, cfg.seed, adapter.hidden)
        _save_stores(ck, {"interp": model.store})
        meta["task_index"] = dict(model.task_index)
        meta["emb_dim"] = model.emb_dim
    elif cfg.method in ("meta", "meta-joint"):
        from .protocol import meta_joint_pretrain
        weight = cfg.aux_weight if cfg.method == "meta-joint" else 0.0
        store = meta_joint_pretrain(lang, adapter, tc, cfg.seed,
                                    aux_weight=weight)
        _save_stores(ck, {"interp": store})
    elif cfg.method == "rl-multitask":
        from .nav.model import dagger_pretrain
        store = dagger_pretrain(lang, adapter, tc, cfg.seed,
                                use_embeddings=True)
        _save_stores(ck, {"interp": store})
    else:
        raise ConfigError(f"no pretraining for method {cfg.method!r}")
    _json_dump(meta_path, meta)
    return rd


def _load_bundle(cfg: ExperimentConfig, rd: Path,
                 manifest: dict) -> ModelBundle:
    meta = json.loads((rd / "manifest.json").read_text(encoding="utf-8"))
    if meta["corpus_hash"] != manifest["content_hash"]:
        raise StalenessError(f"{rd}: checkpoint corpus {meta['corpus_hash']} "
                             f"!= corpus {manifest['content_hash']}")
    stores = _load_stores(rd / "checkpoint.l3ck")
    return ModelBundle(f"{cfg.domain}-{cfg.method}-{cfg.seed}",
                       stores["interp"], stores.get("proposal"))


# ---------------------------------------------------------------------------
# concept phase


def _eval_tasks_of(cfg: ExperimentConfig,
                   tasks: list[TaskDataset]) -> dict[str, list[TaskDataset]]:
    splits = (TEST,) if cfg.domain == "nav" else (VAL, TEST)
    return {s: [t for t in tasks if t.split == s] for s in splits}


def concept_phase(cfg: ExperimentConfig,
                  root: str | Path | None = None) -> Path:
    """Sample/score/select per evaluation task; log every candidate.

    Applies to hypothesis-selection methods; baselines have no concept
    artifacts and pass straight to eval.
    """
    cfg = cfg.resolve()
    if cfg.method not in ("l3", "l3-oracle-descriptions"):
        return run_dir(cfg, root)
    rd = pretrain(cfg, root)
    if (rd / "selections.json").exists():
        return rd
    tasks, manifest = load_corpus(cfg, root)
    adapter = cfg.adapter()
    bundle = _load_bundle(cfg, rd, manifest)
    selections: dict[str, list[dict]] = {}
    with open(rd / "hypotheses.jsonl", "w", encoding="utf-8") as log:
        for split, split_tasks in _eval_tasks_of(cfg, tasks).items():
            rows = []
            for i, task in enumerate(split_tasks):
                rng = derive_rng(cfg.seed, "concept", i)
                if cfg.method == "l3-oracle-descriptions":
                    hyp = oracle_hypothesis(task, bundle, adapter, rng)
                else:
                    hyp = concept_learn(task.examples, bundle, adapter,
                                        cfg.k, rng, cfg.temperature)
                for cand in hyp.candidates:
                    log.write(json.dumps(
                        {"task_id": task.task_id, "split": split, **cand},
                        sort_keys=True) + "\n")
                row = {"task_id": task.task_id, "tokens": list(hyp.tokens),
                       "loss": hyp.loss,
                       "proposal_logprob": hyp.proposal_logprob,
                       "fallback": hyp.fallback}
                if cfg.domain == "nav":
                    curve = _nav_concept_curve(adapter)
                    row["concept_curve"] = [asdict(p) for p in curve]
                rows.append(row)
            selections[split] = rows
    _json_dump(rd / "selections.json", selections)
    return rd


def _nav_concept_curve(adapter: NavAdapter) -> list[CurvePoint]:
    from .nav.model import _ci95
    curve, consumed = [], 0
    for b, est in enumerate(adapter.last_estimates):
        consumed += len(est["rewards"])
        lo, hi = _ci95(est["rewards"])
        curve.append(CurvePoint("concept-learning", b, consumed,
                                float(est["rewards"].mean()), lo, hi))
    return curve


# ---------------------------------------------------------------------------
# evaluation phase


def eval_phase(cfg: ExperimentConfig, root: str | Path | None = None) -> dict:
    """Metrics for the selected hypotheses (or the baseline), one report.

    Reuses selections.json when the concept phase already ran; the
    derived-stream seeding makes recompute and reuse byte-identical.
    """
    cfg = cfg.resolve()
    t0 = time.perf_counter()
    tasks, manifest = load_corpus(cfg, root)
    rd = pretrain(cfg, root)
    report = {"config": asdict(cfg),
              "domain": cfg.domain, "method": cfg.method, "kind": cfg.method,
              "seed": cfg.seed, "corpus_hash": manifest["content_hash"],
              "audits": {"corpus": manifest["audits"], "hash_verified": True},
              "splits": {}, "per_task": {}, "task_ids": {},
              "budgets": asdict(cfg.train_config()),
              "hypothesis_log": None, "curve_csv": None}
    if cfg.domain == "nav":
        report["budgets"]["episode_budget"] = cfg.episode_budget

    if cfg.method in ("multitask", "meta", "meta-joint", "identity",
                      "rl-multitask", "rl-scratch"):
        pretrained: dict = {}
        if _needs_pretrain(cfg.method):
            meta = json.loads(
                (rd / "manifest.json").read_text(encoding="utf-8"))
            stores = _load_stores(rd / "checkpoint.l3ck")
            pretrained = {"store": stores["interp"]}
            if cfg.method == "multitask":
                pretrained["task_index"] = meta["task_index"]
                pretrained["emb_dim"] = meta["emb_dim"]
        rec = evaluate_baseline(
            cfg.domain, BaselineConfig(cfg.method, aux_weight=cfg.aux_weight),
            tasks, cfg.seed, pretrained, adapter=cfg.adapter(),
            train_cfg=cfg.train_config(),
            nav_finetune=cfg.finetune_config() if cfg.domain == "nav" else None)
        for key in ("splits", "per_task", "task_ids"):
            report[key] = rec[key]
        if cfg.domain == "nav":
            report["per_task_boundary"] = rec["per_task_boundary"]
            report["curves"] = rec["curves"]
            report["curve_csv"] = str(rd / "curve.csv")
            _write_run_curve(
                rd / "curve.csv", list(rec["curves"].values()),
                cfg.episode_budget,
                boundary=0 if cfg.method == "rl-scratch"
                else cfg.episode_budget)
        _finish_report(rd, report, t0)
        return report

    adapter = cfg.adapter()
    bundle = _load_bundle(cfg, rd, manifest)
    report["hypothesis_log"] = str(rd / "hypotheses.jsonl")

    if cfg.method == "l3-oracle-engine":
        with open(rd / "hypotheses.jsonl", "w", encoding="utf-8") as fh:
            for split, split_tasks in _eval_tasks_of(cfg, tasks).items():
                log: list[dict] = []
                scores = engine_metric(bundle, adapter, split_tasks, cfg.k,
                                       cfg.seed, cfg.temperature,
                                       cfg.annotation_mode, log=log)
                for row in log:
                    for cand in row["candidates"]:
                        fh.write(json.dumps(
                            {"task_id": row["task_id"], "split": split,
                             **cand}, sort_keys=True) + "\n")
                report["splits"][split] = {"accuracy": float(scores.mean())}
                report["per_task"][split] = [float(s) for s in scores]
                report["task_ids"][split] = [t.task_id for t in split_tasks]
        _finish_report(rd, report, t0)
        return report

    concept_phase(cfg, root)
    selections = json.loads((rd / "selections.json").read_text("utf-8"))
    if cfg.domain == "nav":
        _eval_nav(cfg, rd, report, tasks, selections, adapter, bundle)
    else:
        for split, split_tasks in _eval_tasks_of(cfg, tasks).items():
            rows = selections[split]
            scores = []
            for i, (task, row) in enumerate(zip(split_tasks, rows)):
                if row["task_id"] != task.task_id:
                    raise StalenessError(
                        f"selections.json row {row['task_id']} does not "
                        f"match corpus task {task.task_id}")
                scores.append(adapter.task_metric(
                    bundle.interp, task, tuple(row["tokens"]),
                    derive_rng(cfg.seed, "metric", i)))
            report["splits"][split] = {"accuracy": float(np.mean(scores))}
            report["per_task"][split] = [float(s) for s in scores]
            report["task_ids"][split] = [t.task_id for t in split_tasks]
    _finish_report(rd, report, t0)
    return report


def _eval_nav(cfg, rd, report, tasks, selections, adapter: NavAdapter,
              bundle: ModelBundle) -> None:
    """Boundary metric, fine-tuning, final metric, and the curve CSV."""
    ft = cfg.finetune_config()
    split_tasks = _eval_tasks_of(cfg, tasks)[TEST]
    rows = selections[TEST]
    boundary, final, curves = [], [], []
    for i, (task, row) in enumerate(zip(split_tasks, rows)):
        if row["task_id"] != task.task_id:
            raise StalenessError(f"selections.json row {row['task_id']} "
                                 f"does not match task {task.task_id}")
        tokens = tuple(row["tokens"])
        curve = [CurvePoint(**p) for p in row.get("concept_curve", [])]
        consumed = curve[-1].episodes_consumed if curve else 0
        sel = adapter.task_metric(bundle.interp, task, tokens,
                                  derive_rng(cfg.seed, "metric", i))
        fin = sel
        if ft.batches > 0:
            store, ft_curve = finetune_policy_gradient(
                bundle.interp, adapter, tokens, task.examples, ft,
                derive_rng(cfg.seed, "finetune", i),
                episodes_offset=consumed)
            curve.extend(ft_curve)
            fin = estimate_reward(
                store.arrays, adapter,
                adapter.encode_instruction_np(store, tokens), task.examples,
                adapter.metric_episodes, derive_rng(cfg.seed, "metric-ft", i))
        boundary.append(float(sel))
        final.append(float(fin))
        curves.append(curve)
    report["splits"][TEST] = {"mean_reward": float(np.mean(final))}
    report["per_task"][TEST] = final
    report["per_task_boundary"] = {TEST: boundary}
    report["task_ids"][TEST] = [t.task_id for t in split_tasks]
    report["curves"] = {t.task_id: [asdict(p) for p in c]
                        for t, c in zip(split_tasks, curves)}
    report["curve_csv"] = str(rd / "curve.csv")
    _write_run_curve(rd / "curve.csv",
                     [[asdict(p) for p in c] for c in curves],
                     cfg.episode_budget)


def _finish_report(rd: Path, report: dict, t0: float) -> None:
    report["wall_clock_s"] = time.perf_counter() - t0
    _json_dump(rd / "report.json", report)


def run(cfg: ExperimentConfig, root: str | Path | None = None) -> dict:
    """gen-data (if missing) -> pretrain -> concept-learn -> eval."""
    cfg = cfg.resolve()
    if not (corpus_dir(cfg, root) / "tasks.jsonl").exists():
        gen_data(cfg, root)
    pretrain(cfg, root)
    concept_phase(cfg, root)
    return eval_phase(cfg, root)


def load_report(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return json.loads(p.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# curves and tables


CURVE_COLUMNS = ("phase", "batch", "episodes_consumed", "mean_reward",
                 "ci95_low", "ci95_high")


def aggregate_curves(curves: list[list[dict]], grid_step: int,
                     boundary: int) -> list[dict]:
    """Across-task mean reward on a fixed episode grid.

    Each task's curve is a step function of episodes consumed; at every
    grid point the latest batch mean per task enters an across-task mean
    with a normal-approximation 95% interval. Tasks whose first batch
    ends past a grid point simply do not contribute there yet.
    """
    ends = [c[-1]["episodes_consumed"] for c in curves if c]
    if not ends:
        return []
    rows = []
    grid = range(grid_step, max(ends) + 1, grid_step)
    for b, g in enumerate(grid):
        vals = []
        for c in curves:
            past = [p for p in c if p["episodes_consumed"] <= g]
            if past:
                vals.append(past[-1]["mean_reward"])
        if not vals:
            continue
        arr = np.asarray(vals)
        half = 0.0 if len(arr) < 2 else \
            float(1.96 * arr.std(ddof=1) / np.sqrt(len(arr)))
        rows.append({"phase": "concept-learning" if g <= boundary
                     else "fine-tuning",
                     "batch": b, "episodes_consumed": g,
                     "mean_reward": float(arr.mean()),
                     "ci95_low": float(arr.mean()) - half,
                     "ci95_high": float(arr.mean()) + half})
    return rows


def _write_run_curve(path: Path, curves: list[list[dict]],
                     episode_budget: int, boundary: int | None = None) -> None:
    rows = aggregate_curves(curves, max(1, episode_budget // 10),
                            episode_budget if boundary is None else boundary)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        w.writerows(rows)


TABLE_COLUMNS = ("domain", "method", "seed", "split", "metric", "value",
                 "n_tasks")


def report_table(reports: list[dict]) -> tuple[list[dict], list[dict]]:
    """Rows for the results table plus ordering verdicts.

    Shapes tables carry an exact-chance "random" row at 0.5. Orderings
    come from paired bootstrap comparisons within groups of reports that
    share a corpus; incomparable groups are skipped, not fatal.
    """
    if not reports:
        raise ConfigError("report_table needs at least one report")
    rows = []
    for rep in reports:
        for split, metrics in rep["splits"].items():
            for metric, value in metrics.items():
                rows.append({"domain": rep["domain"], "method": rep["method"],
                             "seed": rep["seed"], "split": split,
                             "metric": metric, "value": value,
                             "n_tasks": len(rep["per_task"][split])})
    if any(r["domain"] == "shapes" for r in rows):
        for split in sorted({r["split"] for r in rows
                             if r["domain"] == "shapes"}):
            rows.append({"domain": "shapes", "method": "random", "seed": "-",
                         "split": split, "metric": "accuracy", "value": 0.5,
                         "n_tasks": 0})
    orderings = []
    groups: dict[tuple, list[dict]] = {}
    for rep in reports:
        groups.setdefault((rep["domain"], rep["corpus_hash"]), []).append(rep)
    for (domain, _), group in groups.items():
        if len({r["method"] for r in group}) < 2:
            continue
        split = TEST
        try:
            table = compare(group, split=split)
        except Exception as e:  # incomparable seed sets stay informative
            orderings.append({"domain": domain, "error": str(e)})
            continue
        for pair in table["pairs"]:
            orderings.append({"domain": domain, "split": split, **pair})
    return rows, orderings


def write_table_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        w.writerows(rows)
