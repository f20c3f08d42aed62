"""Run orchestration: data preparation, training, persistence, reports.

Each run owns one output directory containing:

* ``config.txt``     — echo of the fully resolved configuration;
* ``rounds.jsonl``   — one meta header line, then one JSON object per round
                       (stable keys, no volatile fields, byte-reproducible);
* ``summary.csv``    — one row per round, for plotting;
* ``timings.csv``    — wall-clock seconds per round (volatile, kept apart);
* ``partition.tsv``  — client/user manifest for federated runs;
* ``params.npz``     — final parameters;
* ``checkpoint.npz`` — latest resumable state while incomplete;
* ``DONE``           — completion marker; a completed directory is immutable.

Interrupted runs resume from ``checkpoint.npz`` and reproduce the exact
trajectory an uninterrupted run would have produced.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import checkpoint, data as data_mod, metrics
from .config import (
    ExperimentConfig,
    config_hash,
    config_to_text,
    read_config_file,
    resolve,
    to_federation_config,
)
from .federation import make_trainer


class _StopSession(Exception):
    """Internal: simulates an interruption for resume testing."""


def load_full_matrix(cfg: ExperimentConfig) -> data_mod.RatingMatrix:
    if cfg.dataset == "ml1m":
        matrix = data_mod.load_movielens(cfg.data_path)
    elif cfg.dataset == "anime":
        matrix = data_mod.load_anime(cfg.data_path)
    else:
        matrix = data_mod.gen_synthetic(
            num_users=cfg.synth_users,
            num_items=cfg.synth_items,
            sparsity=cfg.synth_sparsity,
            rank=cfg.synth_rank,
            noise=cfg.synth_noise,
            seed=cfg.seed,
            rating_max=cfg.synth_rating_max,
            popularity_skew=cfg.synth_popularity,
            min_ratings_per_user=cfg.synth_min_ratings,
        )
    if cfg.feedback == "implicit":
        matrix = data_mod.binarize(matrix, cfg.binarize_threshold)
    return matrix


def prepare_data(cfg: ExperimentConfig):
    matrix = load_full_matrix(cfg)
    return data_mod.split(matrix, data_mod.SplitSpec(cfg.train_fraction, cfg.seed))


def _meta_line(cfg: ExperimentConfig) -> str:
    import json

    return json.dumps(
        {"config_hash": config_hash(cfg), "seed": cfg.seed, "algorithm": cfg.algorithm},
        separators=(",", ":"),
    )


def run(cfg: ExperimentConfig, _stop_after: int | None = None) -> Path:
    """Execute one run to completion (or resume one), returning its directory."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if (out / "DONE").exists():
        raise RuntimeError(f"{out} is a completed run directory (immutable)")

    (out / "config.txt").write_text(config_to_text(cfg), encoding="utf-8")
    train, test = prepare_data(cfg)
    trainer = make_trainer(train, test, to_federation_config(cfg))

    rounds_path = out / "rounds.jsonl"
    ckpt_path = out / "checkpoint.npz"
    header = _meta_line(cfg)
    if ckpt_path.exists():
        state = checkpoint.load_state(str(ckpt_path))
        if state.get("__config_hash__") != config_hash(cfg):
            raise RuntimeError(
                f"{ckpt_path} belongs to a different configuration; "
                "refusing to resume into it"
            )
        trainer.load_state_dict(state["trainer"])
        kept = [header]
        if rounds_path.exists():
            lines = rounds_path.read_text(encoding="utf-8").splitlines()
            kept += lines[1 : 1 + trainer.round]
        rounds_path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")
    else:
        rounds_path.write_text(header + "\n", encoding="utf-8")
        (out / "timings.csv").unlink(missing_ok=True)

    if cfg.algorithm != "joint":
        data_mod.export_partition_manifest(trainer.partition, train, str(out / "partition.tsv"))

    timings: list[tuple[int, float]] = []

    def save_checkpoint(tr):
        checkpoint.save_state(
            str(ckpt_path),
            {"__config_hash__": config_hash(cfg), "trainer": tr.state_dict()},
        )

    def on_round(tr):
        report = tr.reports[-1]
        with open(rounds_path, "a", encoding="utf-8") as handle:
            handle.write(report.to_json() + "\n")
        timings.append((report.round, report.wall_seconds))
        if tr.round % cfg.checkpoint_every == 0 or tr.round == cfg.T:
            save_checkpoint(tr)
        if _stop_after is not None and tr.round >= _stop_after:
            raise _StopSession

    try:
        result = trainer.run(on_round=on_round)
    except _StopSession:
        save_checkpoint(trainer)
        _write_timings(out, timings)
        return out

    _finalize(out, cfg, result, timings)
    return out


def _write_timings(out: Path, timings) -> None:
    # appended across resumed sessions; a fresh run removed any stale file
    path = out / "timings.csv"
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8") as handle:
        if new_file:
            handle.write("round,wall_seconds\n")
        for round_idx, wall in timings:
            handle.write(f"{round_idx},{wall:.6f}\n")


def _finalize(out: Path, cfg: ExperimentConfig, result, timings) -> None:
    groups: dict[str, list] = {}
    if result.model is not None:
        groups["encoder"] = result.model.encoder
        groups["decoder"] = result.model.decoder
    if result.decoder is not None:
        groups["decoder"] = result.decoder
    if result.encoders is not None:
        for m, enc in enumerate(result.encoders):
            groups[f"client{m}.encoder"] = enc
    checkpoint.save_params(
        str(out / "params.npz"),
        groups,
        meta={"config_hash": config_hash(cfg), "seed": cfg.seed, "round": cfg.T},
    )
    _write_summary(out / "summary.csv", cfg, _read_reports(out))
    _write_timings(out, timings)
    (out / "DONE").write_text(f"{config_hash(cfg)} seed={cfg.seed}\n", encoding="utf-8")


_SUMMARY_COLUMNS = (
    "round",
    "train_loss",
    "test_rmse",
    "test_ndcg",
    "params_down",
    "params_up",
    "bytes_down",
    "bytes_up",
    "flops",
    "cum_bytes_down",
    "cum_bytes_up",
    "cum_flops",
)


def _write_summary(path: Path, cfg: ExperimentConfig, reports) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# config_hash={config_hash(cfg)} seed={cfg.seed}\n")
        handle.write(",".join(_SUMMARY_COLUMNS) + "\n")
        for report in reports:
            row = [getattr(report, col) for col in _SUMMARY_COLUMNS]
            handle.write(",".join("" if v is None else repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _read_reports(run_dir: Path) -> list[metrics.RoundReport]:
    lines = (run_dir / "rounds.jsonl").read_text(encoding="utf-8").splitlines()
    return [metrics.RoundReport.from_json(line) for line in lines[1:]]


def dry_run(cfg: ExperimentConfig) -> dict:
    """Resolve the config and predict total communication without training."""
    train, _ = prepare_data(cfg)
    if cfg.algorithm == "joint":
        cost = metrics.CommCost()
        client_sizes = [train.num_users]
        index_sizes = [train.num_items]
    else:
        part = data_mod.partition(train, cfg.M, cfg.seed)
        index_sizes = [len(s) for s in part.item_index_sets]
        client_sizes = [len(m) for m in part.members]
        cost = metrics.comm_cost(
            cfg.algorithm, cfg.M, cfg.C, train.num_items, index_sizes, cfg.T,
            pc_enabled=cfg.pc_enabled, seed=cfg.seed,
        )
    flops = metrics.compute_cost(
        cfg.algorithm, train.num_items, client_sizes, index_sizes,
        cfg.K, cfg.T, pc_enabled=cfg.pc_enabled, participation=cfg.C, seed=cfg.seed,
    )
    return {
        "config_text": config_to_text(cfg),
        "config_hash": config_hash(cfg),
        "params_down": cost.params_down,
        "params_up": cost.params_up,
        "indices_up": cost.indices_up,
        "bytes_down": cost.bytes_down,
        "bytes_up": cost.bytes_up,
        "total_bytes": cost.total_bytes,
        "flops": flops,
    }


# ---------------------------------------------------------------------------
# Reporting over completed runs
# ---------------------------------------------------------------------------

# Keys that define the underlying task; runs being compared must agree on all
# of them.  Training knobs (algorithm, M, optimizer, ...) may differ and key
# the comparison table instead.
_DATASET_KEYS = (
    "dataset", "feedback", "train_fraction", "binarize_threshold",
    "synth_users", "synth_items", "synth_sparsity", "synth_rank",
    "synth_noise", "synth_rating_max", "synth_popularity", "synth_min_ratings",
)
_GROUP_KEYS = (
    "algorithm", "M", "C", "B", "K", "T", "pc_enabled", "optimizer",
    "learning_rate", "momentum", "weight_decay", "dtype",
)


def _load_run(run_dir: str) -> dict:
    run_dir = Path(run_dir)
    if not (run_dir / "DONE").exists():
        raise ValueError(f"{run_dir} is not a completed run")
    cfg_values = read_config_file(str(run_dir / "config.txt"))
    hash_value = config_hash(resolve(ExperimentConfig(**cfg_values)))
    return {
        "dir": run_dir,
        "config": cfg_values,
        "hash": hash_value,
        "reports": _read_reports(run_dir),
    }


def _final_metric(reports) -> tuple[str, float]:
    for report in reversed(reports):
        if report.test_rmse is not None:
            return "rmse", report.test_rmse
        if report.test_ndcg is not None:
            return "ndcg", report.test_ndcg
    raise ValueError("run has no evaluated round")


def emit_report(run_dirs, out_dir) -> dict[str, Path]:
    """Join completed runs into comparison and learning-curve tables.

    Runs must share the dataset-defining keys; seeds within a matching
    training configuration are aggregated as mean and sample standard
    deviation (4 decimal places).  When the same client count was run with
    both federated algorithms, a compression table reports the transmitted
    bytes and FLOP ratios of the whole-model baseline over the partially
    federated run.
    """
    runs = [_load_run(d) for d in run_dirs]
    if not runs:
        raise ValueError("no runs given")
    base = runs[0]["config"]
    for other in runs[1:]:
        differing = [
            key for key in _DATASET_KEYS
            if other["config"].get(key) != base.get(key)
        ]
        if differing:
            raise ValueError(
                "runs are not comparable; differing keys: " + ", ".join(differing)
            )

    groups: dict[tuple, list[dict]] = {}
    for run_info in runs:
        key = tuple(run_info["config"].get(k) for k in _GROUP_KEYS)
        groups.setdefault(key, []).append(run_info)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = ",".join(
        f"{r['hash']}:seed={r['config'].get('seed')}" for r in runs
    )

    comparison = out_dir / "comparison.csv"
    with open(comparison, "w", encoding="utf-8") as handle:
        handle.write(f"# source_runs={sources}\n")
        handle.write("algorithm,M,pc_enabled,optimizer,seeds,metric,mean,std\n")
        for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
            group_runs = groups[key]
            cfg = group_runs[0]["config"]
            finals = [_final_metric(r["reports"]) for r in group_runs]
            metric_name = finals[0][0]
            values = np.array([v for _, v in finals])
            std = f"{values.std(ddof=1):.4f}" if len(values) > 1 else ""
            handle.write(
                f"{cfg.get('algorithm')},{cfg.get('M')},{cfg.get('pc_enabled')},"
                f"{cfg.get('optimizer')},{len(values)},{metric_name},"
                f"{values.mean():.4f},{std}\n"
            )

    curves = out_dir / "learning_curves.csv"
    with open(curves, "w", encoding="utf-8") as handle:
        handle.write(f"# source_runs={sources}\n")
        handle.write("algorithm,M,pc_enabled,round,metric,mean\n")
        for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
            group_runs = groups[key]
            cfg = group_runs[0]["config"]
            by_round: dict[int, list[float]] = {}
            metric_name = "rmse"
            for run_info in group_runs:
                for report in run_info["reports"]:
                    value = report.test_rmse
                    if value is None:
                        value = report.test_ndcg
                        if value is not None:
                            metric_name = "ndcg"
                    if value is not None:
                        by_round.setdefault(report.round, []).append(value)
            for round_idx in sorted(by_round):
                mean = float(np.mean(by_round[round_idx]))
                handle.write(
                    f"{cfg.get('algorithm')},{cfg.get('M')},{cfg.get('pc_enabled')},"
                    f"{round_idx},{metric_name},{mean:.6f}\n"
                )

    compression = out_dir / "compression.csv"
    by_m: dict[int, dict[str, list[dict]]] = {}
    for run_info in runs:
        cfg = run_info["config"]
        algorithm = cfg.get("algorithm")
        if algorithm in ("fedavg", "personalfr"):
            by_m.setdefault(cfg.get("M"), {}).setdefault(algorithm, []).append(run_info)
    with open(compression, "w", encoding="utf-8") as handle:
        handle.write(f"# source_runs={sources}\n")
        handle.write("M,comm_ratio,compute_ratio\n")
        for m_value in sorted(by_m, key=lambda v: int(v)):
            pair = by_m[m_value]
            if "fedavg" not in pair or "personalfr" not in pair:
                continue

            def totals(run_list):
                last = [r["reports"][-1] for r in run_list]
                bytes_total = float(np.mean([r.cum_bytes_down + r.cum_bytes_up for r in last]))
                flops_total = float(np.mean([r.cum_flops for r in last]))
                return bytes_total, flops_total

            fa_bytes, fa_flops = totals(pair["fedavg"])
            po_bytes, po_flops = totals(pair["personalfr"])
            handle.write(
                f"{m_value},{fa_bytes / po_bytes:.4f},{fa_flops / po_flops:.4f}\n"
            )

    return {"comparison": comparison, "learning_curves": curves, "compression": compression}
