"""Experiment runner and metrics.

One experiment advances the scene epoch by epoch; every radar observes,
preprocesses, exchanges messages according to the configured mode, computes
its posterior and extracts target estimates. In federation mode the runner
can additionally maintain a pooled-cloud reference posterior per radar to
sample divergences against; those reference computations never touch the
sidelink accounting.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import ExperimentConfig, with_mode
from .fusion import (
    GLOBAL_KIND,
    LOCAL_KIND,
    Posterior,
    ReconstructedScene,
    alpha_weights,
    bayes_product,
    extract_targets,
    federated_posterior,
    grid_support,
    likelihood_from_cloud,
    motion_prior,
    pooled_likelihood,
    reconstruct_scene,
    refit_posterior_mixture,
)
from .mixture import DensityGrid, eval_on_grid, grid_to_csv, kl_divergence
from .scene import advance_scene, initial_scene
from .sensor import dbscan, observe, preprocess
from .sidelink import (
    LinkStats,
    OutboxHistory,
    account,
    account_delivery,
    decode_coop,
    decode_fed,
    deliver,
    encode_coop,
    encode_fed,
    write_replay,
)

log = logging.getLogger(__name__)

DECILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class EpochRecord:
    """Everything measured at one epoch, per radar."""

    epoch: int
    truth: dict[int, tuple[float, float]]  # target id -> true center
    target_landmark: dict[int, str]  # target id -> nearest route waypoint
    estimates: dict[int, np.ndarray]  # radar -> (m, 2) estimated positions
    matched: dict[int, dict[int, tuple[float, float] | None]]  # radar -> target -> estimate
    resolved: dict[int, bool]
    tx_bits: dict[int, int]
    cloud_points: dict[int, int]
    kl_fed: dict[int, float] = field(default_factory=dict)  # reference || federated
    kl_local: dict[int, float] = field(default_factory=dict)  # reference || local


@dataclass
class MetricsRecord:
    """Per-run summary: accuracy, resolution, overhead and divergences."""

    mode: str
    n_epochs: int
    ego_radar: int
    mae_x: float | None
    mae_y: float | None
    mae_n: int
    mae_by_landmark: dict[str, tuple[float, float, int]]
    p_u: float | None
    p_u_by_radar: dict[int, float]
    tx_bits: dict[int, int]
    tx_rate_bits_per_s: dict[int, float]
    cloud_mean: dict[int, float]
    kl_fed_median: float | None
    kl_fed_median_by_radar: dict[int, float]
    kl_local_median_by_radar: dict[int, float]
    kl_fed_deciles: tuple[float, ...] | None


def _union_points(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    return np.unique(np.concatenate([a, b]), axis=0)


def _associate(
    truth: dict[int, np.ndarray], positions: np.ndarray
) -> dict[int, tuple[float, float] | None]:
    """Optimal assignment of estimates to true centers (minimum total distance)."""
    tids = sorted(truth)
    matched: dict[int, tuple[float, float] | None] = {t: None for t in tids}
    if len(positions) == 0 or not tids:
        return matched
    centers = np.array([truth[t] for t in tids])
    cost = np.linalg.norm(centers[:, None, :] - positions[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    for i, j in zip(rows, cols):
        matched[tids[i]] = (float(positions[j, 0]), float(positions[j, 1]))
    return matched


def _nearest_waypoint(cfg: ExperimentConfig, spec, center: np.ndarray) -> str:
    dists = [(float(np.linalg.norm(center - cfg.landmarks[w])), w) for w in spec.waypoints]
    return min(dists)[1]


def run_experiment(
    cfg: ExperimentConfig,
    *,
    message_log: Path | str | None = None,
    grid_dump_dir: Path | str | None = None,
    grid_dump_every: int = 0,
) -> tuple[list[EpochRecord], MetricsRecord]:
    """Run one experiment; fully determined by (config, seed)."""
    cfg.validate()
    radar_ids = [r.id for r in cfg.radars]
    setups = {r.id: r for r in cfg.radars}
    seq = np.random.SeedSequence(cfg.seed)
    children = seq.spawn(2 + len(radar_ids))
    scene_rng = np.random.default_rng(children[0])
    link_rng = np.random.default_rng(children[1])
    obs_rngs = {k: np.random.default_rng(children[2 + i]) for i, k in enumerate(radar_ids)}

    scene = initial_scene(cfg.targets, cfg.landmarks, scene_rng)
    stats = LinkStats(update_period=cfg.update_period)
    history = OutboxHistory()
    prev_scene: dict[int, ReconstructedScene | None] = {k: None for k in radar_ids}
    ref_prev_scene: dict[int, ReconstructedScene | None] = {k: None for k in radar_ids}
    records: list[EpochRecord] = []

    log_fh = open(message_log, "w") if message_log else None
    dump_dir = Path(grid_dump_dir) if grid_dump_dir else None
    if dump_dir:
        dump_dir.mkdir(parents=True, exist_ok=True)

    try:
        for epoch in range(1, cfg.n_epochs + 1):
            scene = advance_scene(scene, cfg.targets, cfg.landmarks, cfg.dt, scene_rng)

            clouds, clusters = {}, {}
            for k in radar_ids:
                raw = observe(scene, setups[k].pose, setups[k].model, obs_rngs[k], radar_id=k)
                clouds[k], clusters[k] = preprocess(raw, setups[k].pose, cfg.dbscan_eps, cfg.dbscan_min_pts)

            likelihoods = {
                k: likelihood_from_cloud(clouds[k], clusters[k], cfg.grid, cfg.fit)
                for k in radar_ids
            }
            priors = {
                k: motion_prior(prev_scene[k], cfg.prior_speed, cfg.dt, cfg.grid)
                for k in radar_ids
            }

            tx_bits = {k: 0 for k in radar_ids}
            kl_fed: dict[int, float] = {}
            kl_local: dict[int, float] = {}
            posteriors: dict[int, Posterior] = {}
            # Support of the evidence that feeds the next prior alongside the
            # posterior support; without it one sub-threshold epoch would
            # remove a target from the recursion permanently.
            fresh_support: dict[int, np.ndarray] = {}

            if cfg.mode == "isolated":
                for k in radar_ids:
                    lik_grid, mixture = likelihoods[k]
                    posteriors[k] = Posterior(
                        bayes_product(lik_grid, priors[k]), mixture, epoch, LOCAL_KIND
                    )
                    fresh_support[k] = grid_support(lik_grid, cfg.tau)

            elif cfg.mode == "cooperation":
                outbox = {k: encode_coop(clouds[k]) for k in radar_ids}
                inboxes = _exchange(cfg, history, epoch, outbox, stats, tx_bits, link_rng, log_fh)
                pool_cache: dict[tuple, tuple] = {}
                member_cache: dict[tuple[int, int], tuple] = {}
                for k in radar_ids:
                    members = {(k, epoch): (clouds[k], clusters[k])}
                    for msg in inboxes[k]:
                        key = (msg.sender, msg.epoch)
                        if cfg.clock.jitter_std == 0 and key in member_cache:
                            members[key] = member_cache[key]
                            continue
                        cloud = decode_coop(msg)
                        pair = (cloud, dbscan(cloud, cfg.dbscan_eps, cfg.dbscan_min_pts))
                        members[key] = pair
                        if cfg.clock.jitter_std == 0:
                            member_cache[key] = pair
                    pool_key = tuple(sorted(members))
                    if pool_key not in pool_cache:
                        ensemble = [members[key] for key in sorted(members)]
                        pool_cache[pool_key] = pooled_likelihood(ensemble, cfg.grid, cfg.fit)
                    lik_grid, mixture = pool_cache[pool_key]
                    posteriors[k] = Posterior(
                        bayes_product(lik_grid, priors[k]), mixture, epoch, GLOBAL_KIND
                    )
                    fresh_support[k] = grid_support(lik_grid, cfg.tau)

            else:  # federation
                locals_ = {}
                for k in radar_ids:
                    lik_grid, lik_mix = likelihoods[k]
                    pk = refit_posterior_mixture(clouds[k], lik_mix, priors[k], cfg.fit)
                    locals_[k] = Posterior(
                        bayes_product(lik_grid, priors[k]), pk, epoch, LOCAL_KIND
                    )
                    fresh_support[k] = grid_support(lik_grid, cfg.tau)
                outbox = {k: encode_fed(locals_[k].mixture, k, epoch) for k in radar_ids}
                inboxes = _exchange(cfg, history, epoch, outbox, stats, tx_bits, link_rng, log_fh)
                for k in radar_ids:
                    received = [decode_fed(m) for m in inboxes[k]]
                    counts = [locals_[k].mixture.total_points] + [m.total_points for m in received]
                    weights = alpha_weights(counts)
                    posteriors[k] = federated_posterior(
                        locals_[k].mixture, received, weights, cfg.grid, epoch
                    )

                if cfg.kl_reference:
                    # Divergences compare the mixture representations of the
                    # three posteriors, so a lone radar's federated, local
                    # and reference posteriors coincide exactly.
                    lik_cache: dict[tuple, tuple] = {}
                    ref_cache: dict[tuple, DensityGrid] = {}
                    for k in radar_ids:
                        ids = tuple(sorted({k, *cfg.topology.neighbors(k)}))
                        if ids not in lik_cache:
                            ensemble = [(clouds[i], clusters[i]) for i in ids]
                            lik_cache[ids] = pooled_likelihood(ensemble, cfg.grid, cfg.fit)
                        lik_grid, lik_mix = lik_cache[ids]
                        prev = ref_prev_scene[k]
                        key = (ids, None if prev is None else prev.points.tobytes())
                        if key not in ref_cache:
                            ref_prior = motion_prior(prev, cfg.prior_speed, cfg.dt, cfg.grid)
                            member_pts = [clouds[i].points for i in ids if len(clouds[i])]
                            pool = np.concatenate(member_pts) if member_pts else np.empty((0, 3))
                            pool_cloud = replace(clouds[k], points=pool, truth_outlier=None)
                            ref_mix = refit_posterior_mixture(pool_cloud, lik_mix, ref_prior, cfg.fit)
                            ref_cache[key] = eval_on_grid(ref_mix, cfg.grid)
                        ref_grid = ref_cache[key]
                        kl_fed[k] = kl_divergence(ref_grid, posteriors[k].grid)
                        kl_local[k] = kl_divergence(
                            ref_grid, eval_on_grid(locals_[k].mixture, cfg.grid)
                        )
                        ref_prev_scene[k] = ReconstructedScene(
                            _union_points(grid_support(ref_grid, cfg.tau), grid_support(lik_grid, cfg.tau)),
                            cfg.tau,
                            epoch,
                        )

            estimates: dict[int, np.ndarray] = {}
            matched: dict[int, dict[int, tuple[float, float] | None]] = {}
            resolved: dict[int, bool] = {}
            for k in radar_ids:
                recon = reconstruct_scene(posteriors[k], cfg.tau)
                prev_scene[k] = ReconstructedScene(
                    _union_points(recon.points, fresh_support[k]), cfg.tau, epoch
                )
                est = extract_targets(posteriors[k], cfg.tau, cfg.min_separation)
                estimates[k] = est.positions
                matched[k] = _associate(scene.centers, est.positions)
                resolved[k] = len(est.positions) >= len(scene.centers)

            if dump_dir and grid_dump_every > 0 and epoch % grid_dump_every == 0:
                for k in radar_ids:
                    grid_to_csv(posteriors[k].grid, dump_dir / f"epoch{epoch:05d}_radar{k}.csv")

            records.append(
                EpochRecord(
                    epoch=epoch,
                    truth={t: (float(c[0]), float(c[1])) for t, c in scene.centers.items()},
                    target_landmark={
                        spec.id: _nearest_waypoint(cfg, spec, scene.centers[spec.id])
                        for spec in cfg.targets
                    },
                    estimates=estimates,
                    matched=matched,
                    resolved=resolved,
                    tx_bits=tx_bits,
                    cloud_points={k: len(clouds[k]) for k in radar_ids},
                    kl_fed=kl_fed,
                    kl_local=kl_local,
                )
            )
    finally:
        if log_fh:
            log_fh.close()

    stats.epochs = cfg.n_epochs
    return records, summarize(records, cfg, stats)


def _exchange(cfg, history, epoch, outbox, stats, tx_bits, link_rng, log_fh):
    """Push, account and deliver one epoch's outbox."""
    history.push(epoch, outbox)
    for k in sorted(outbox):
        account(stats, outbox[k])
        tx_bits[k] = outbox[k].payload_bits
    if log_fh:
        write_replay((outbox[k] for k in sorted(outbox)), log_fh)
    inboxes = deliver(
        cfg.topology, history, epoch, cfg.clock, cfg.dt,
        rng=link_rng, motion_speed=cfg.prior_speed,
    )
    for k, msgs in inboxes.items():
        for msg in msgs:
            account_delivery(stats, msg, k)
    return inboxes


def compute_mae(
    records: Sequence[EpochRecord], radar: int
) -> tuple[tuple[float, float, int] | None, dict[str, tuple[float, float, int]]]:
    """Mean absolute error per axis over resolved epochs, after assignment.

    Returns the aggregate (mae_x, mae_y, n_samples) and a per-waypoint
    breakdown keyed by the target's nearest route landmark. Absent when no
    epoch was resolved.
    """
    err_x: list[float] = []
    err_y: list[float] = []
    by_label: dict[str, list[tuple[float, float]]] = {}
    for rec in records:
        if not rec.resolved.get(radar, False):
            continue
        for tid, true in rec.truth.items():
            est = rec.matched[radar].get(tid)
            if est is None:
                continue
            ex, ey = abs(est[0] - true[0]), abs(est[1] - true[1])
            err_x.append(ex)
            err_y.append(ey)
            by_label.setdefault(rec.target_landmark[tid], []).append((ex, ey))
    if not err_x:
        return None, {}
    overall = (float(np.mean(err_x)), float(np.mean(err_y)), len(err_x))
    breakdown = {
        label: (float(np.mean([e[0] for e in errs])), float(np.mean([e[1] for e in errs])), len(errs))
        for label, errs in sorted(by_label.items())
    }
    return overall, breakdown


def unresolved_probability(records: Sequence[EpochRecord], radar: int) -> float:
    """Fraction of epochs where fewer maxima than live targets were found."""
    if not records:
        raise ValueError("need at least one epoch")
    unresolved = sum(1 for rec in records if not rec.resolved.get(radar, False))
    return unresolved / len(records)


def _distribution(samples: Sequence[float]) -> dict[str, float | tuple[float, ...]]:
    arr = np.asarray(samples, dtype=float)
    return {
        "median": float(np.median(arr)),
        "deciles": tuple(float(v) for v in np.quantile(arr, DECILES)),
    }


def kl_study(records: Sequence[EpochRecord]) -> dict:
    """Distributions of the divergence samples, pooled and per radar."""
    radars = sorted({k for rec in records for k in rec.kl_fed})
    fed_pooled = [rec.kl_fed[k] for rec in records for k in rec.kl_fed]
    out = {
        "fed_pooled": _distribution(fed_pooled) if fed_pooled else None,
        "fed": {},
        "local": {},
    }
    for k in radars:
        fed_k = [rec.kl_fed[k] for rec in records if k in rec.kl_fed]
        loc_k = [rec.kl_local[k] for rec in records if k in rec.kl_local]
        if fed_k:
            out["fed"][k] = _distribution(fed_k)
        if loc_k:
            out["local"][k] = _distribution(loc_k)
    return out


def summarize(records: Sequence[EpochRecord], cfg: ExperimentConfig, stats: LinkStats) -> MetricsRecord:
    radar_ids = [r.id for r in cfg.radars]
    overall, by_label = compute_mae(records, cfg.ego_radar) if records else (None, {})
    study = kl_study(records)
    cloud_mean = {
        k: float(np.mean([rec.cloud_points[k] for rec in records])) if records else 0.0
        for k in radar_ids
    }
    return MetricsRecord(
        mode=cfg.mode,
        n_epochs=len(records),
        ego_radar=cfg.ego_radar,
        mae_x=overall[0] if overall else None,
        mae_y=overall[1] if overall else None,
        mae_n=overall[2] if overall else 0,
        mae_by_landmark=by_label,
        p_u=unresolved_probability(records, cfg.ego_radar) if records else None,
        p_u_by_radar={k: unresolved_probability(records, k) for k in radar_ids} if records else {},
        tx_bits={k: stats.tx_bits.get(k, 0) for k in radar_ids},
        tx_rate_bits_per_s={k: float(stats.tx_rate(k)) for k in radar_ids},
        cloud_mean=cloud_mean,
        kl_fed_median=study["fed_pooled"]["median"] if study["fed_pooled"] else None,
        kl_fed_median_by_radar={k: d["median"] for k, d in study["fed"].items()},
        kl_local_median_by_radar={k: d["median"] for k, d in study["local"].items()},
        kl_fed_deciles=study["fed_pooled"]["deciles"] if study["fed_pooled"] else None,
    )


EPOCH_BASE_COLUMNS = ["epoch", "radar", "cloud_points", "tx_bits", "resolved", "n_estimates"]


def _epoch_columns(target_ids: Sequence[int]) -> list[str]:
    cols = list(EPOCH_BASE_COLUMNS)
    for tid in target_ids:
        cols += [f"true_x_{tid}", f"true_y_{tid}", f"landmark_{tid}", f"est_x_{tid}", f"est_y_{tid}"]
    cols += ["kl_global_fed", "kl_global_local"]
    return cols


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_csv(
    records: Sequence[EpochRecord],
    metrics: MetricsRecord,
    out_dir: Path | str,
    cfg: ExperimentConfig,
) -> dict[str, Path]:
    """Write the epoch-level and summary CSV files.

    Column order is fixed; floats are written in their shortest
    round-tripping form so re-reading reproduces the values exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target_ids = sorted(spec.id for spec in cfg.targets)
    radar_ids = [r.id for r in cfg.radars]

    epochs_path = out / "epochs.csv"
    with open(epochs_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_epoch_columns(target_ids))
        for rec in records:
            for k in radar_ids:
                row = [
                    rec.epoch,
                    k,
                    rec.cloud_points[k],
                    rec.tx_bits[k],
                    _fmt(rec.resolved[k]),
                    len(rec.estimates[k]),
                ]
                for tid in target_ids:
                    true = rec.truth[tid]
                    est = rec.matched[k].get(tid)
                    row += [
                        _fmt(true[0]),
                        _fmt(true[1]),
                        rec.target_landmark[tid],
                        _fmt(est[0] if est is not None else None),
                        _fmt(est[1] if est is not None else None),
                    ]
                row += [_fmt(rec.kl_fed.get(k)), _fmt(rec.kl_local.get(k))]
                writer.writerow(row)

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "radar", "label", "value"])
        for row in metrics_to_rows(metrics):
            writer.writerow([_fmt(v) for v in row])
    return {"epochs": epochs_path, "summary": summary_path}


def metrics_to_rows(m: MetricsRecord) -> list[tuple]:
    rows: list[tuple] = [
        ("mode", "", "", m.mode),
        ("epochs", "", "", m.n_epochs),
        ("ego_radar", "", "", m.ego_radar),
        ("mae_n", "", "overall", m.mae_n),
    ]
    if m.mae_x is not None:
        rows += [("mae_x", "", "overall", m.mae_x), ("mae_y", "", "overall", m.mae_y)]
    for label, (mx, my, n) in m.mae_by_landmark.items():
        rows += [("mae_x", "", label, mx), ("mae_y", "", label, my), ("mae_n", "", label, n)]
    if m.p_u is not None:
        rows.append(("p_u", "", "", m.p_u))
    for k in sorted(m.p_u_by_radar):
        rows.append(("p_u", k, "", m.p_u_by_radar[k]))
    for k in sorted(m.tx_bits):
        rows.append(("tx_bits", k, "", m.tx_bits[k]))
    for k in sorted(m.tx_rate_bits_per_s):
        rows.append(("tx_rate_bits_per_s", k, "", m.tx_rate_bits_per_s[k]))
    for k in sorted(m.cloud_mean):
        rows.append(("cloud_mean", k, "", m.cloud_mean[k]))
    if m.kl_fed_median is not None:
        rows.append(("kl_fed_median", "", "pooled", m.kl_fed_median))
    for k in sorted(m.kl_fed_median_by_radar):
        rows.append(("kl_fed_median", k, "", m.kl_fed_median_by_radar[k]))
    for k in sorted(m.kl_local_median_by_radar):
        rows.append(("kl_local_median", k, "", m.kl_local_median_by_radar[k]))
    if m.kl_fed_deciles is not None:
        for q, v in zip(DECILES, m.kl_fed_deciles):
            rows.append(("kl_fed_decile", "", f"d{int(q * 100)}", v))
    return rows


def metrics_from_csv(path: Path | str) -> MetricsRecord:
    """Rebuild a MetricsRecord from a summary file (exact float round-trip)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    get = lambda metric: [r for r in rows if r[0] == metric]

    def _one(metric, label=""):
        found = [r for r in get(metric) if r[1] == "" and r[2] == label]
        return found[0][3] if found else None

    mae_labels = sorted({r[2] for r in get("mae_x") if r[2] != "overall"})
    mae_by_landmark = {}
    for label in mae_labels:
        mx = float(_one("mae_x", label))
        my = float(_one("mae_y", label))
        n = int(_one("mae_n", label))
        mae_by_landmark[label] = (mx, my, n)

    def _per_radar(metric, cast=float):
        return {int(r[1]): cast(r[3]) for r in get(metric) if r[1] != ""}

    deciles = [r for r in get("kl_fed_decile")]
    deciles_val = tuple(float(r[3]) for r in sorted(deciles, key=lambda r: int(r[2][1:]))) or None

    mae_x = _one("mae_x", "overall")
    p_u = _one("p_u")
    kl_fed_median = _one("kl_fed_median", "pooled")
    return MetricsRecord(
        mode=_one("mode"),
        n_epochs=int(_one("epochs")),
        ego_radar=int(_one("ego_radar")),
        mae_x=float(mae_x) if mae_x is not None else None,
        mae_y=float(_one("mae_y", "overall")) if mae_x is not None else None,
        mae_n=int(_one("mae_n", "overall")),
        mae_by_landmark=mae_by_landmark,
        p_u=float(p_u) if p_u is not None else None,
        p_u_by_radar=_per_radar("p_u"),
        tx_bits=_per_radar("tx_bits", int),
        tx_rate_bits_per_s=_per_radar("tx_rate_bits_per_s"),
        cloud_mean=_per_radar("cloud_mean"),
        kl_fed_median=float(kl_fed_median) if kl_fed_median is not None else None,
        kl_fed_median_by_radar=_per_radar("kl_fed_median"),
        kl_local_median_by_radar=_per_radar("kl_local_median"),
        kl_fed_deciles=deciles_val,
    )


def _sweep_one(cfg: ExperimentConfig) -> dict:
    _, metrics = run_experiment(cfg)
    return {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "mae_x": metrics.mae_x,
        "mae_y": metrics.mae_y,
        "mae_n": metrics.mae_n,
        "p_u": metrics.p_u,
        "tx_rate_ego": metrics.tx_rate_bits_per_s.get(cfg.ego_radar, 0.0),
    }


def run_sweep(
    cfg: ExperimentConfig,
    seeds: Iterable[int],
    modes: Sequence[str],
    kl_reference: bool = False,
    workers: int = 1,
) -> list[dict]:
    """Monte Carlo sweep: one run per (mode, seed), summarized as flat rows.

    Runs are independent, so they may execute in parallel; each run is still
    fully determined by its (config, seed).
    """
    configs = [
        replace(with_mode(replace(cfg, kl_reference=kl_reference), mode), seed=int(seed))
        for mode in modes
        for seed in seeds
    ]
    if workers > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            return pool.map(_sweep_one, configs)
    return [_sweep_one(c) for c in configs]


def aggregate_sweep(rows: Sequence[dict]) -> list[dict]:
    """Per-mode means and medians over a sweep's rows."""
    out = []
    for mode in sorted({r["mode"] for r in rows}):
        sub = [r for r in rows if r["mode"] == mode]
        agg = {"mode": mode, "runs": len(sub)}
        for key in ("mae_x", "mae_y", "p_u", "tx_rate_ego"):
            vals = [r[key] for r in sub if r[key] is not None]
            agg[f"{key}_mean"] = float(np.mean(vals)) if vals else None
            agg[f"{key}_median"] = float(np.median(vals)) if vals else None
        out.append(agg)
    return out
