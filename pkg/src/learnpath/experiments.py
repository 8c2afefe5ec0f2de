"""Experiment drivers behind the CLI subcommands.

Each run_* function takes a validated ExperimentConfig plus an output
directory, writes CSV artifacts and a summary.txt, and returns a list
of (name, passed, detail) checks. Checks are informational for most
commands; ntk-verify turns failed checks into a non-zero exit.

Determinism contract: given the same config (including master seed),
every artifact is byte-identical across re-runs and across --jobs
settings. That means fixed float formatting (%.17g), run collation in
descriptor order rather than completion order, and no timestamps or
absolute paths inside outputs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from learnpath.config import ExperimentConfig
from learnpath.metrics import (accuracy, ece, mean_gap, spearman,
                               spearman_perm_pvalue, xi_bounds)
from learnpath.ntkcheck import (decompose_pair, similarity_trace_study,
                                trace_evolution)
from learnpath.numerics import init_mlp, predict_proba
from learnpath.pathtrace import (barycentric_project, base_difficulty,
                                 ema_filter_path, recovery_fraction,
                                 zigzag_score)
from learnpath.rngstreams import derive_seed, stream
from learnpath.supervision import (DivergenceError, TargetTable,
                                   extract_eskd_targets, extract_kd_targets,
                                   make_gt_targets, make_ls_targets,
                                   make_onehot_targets, train_model,
                                   train_teacher_filterkd_multi)
from learnpath.toygauss import (ToyDataset, flip_labels, perturb_target,
                                sample_dataset, save_dataset, split_dataset)

__all__ = [
    "run_gen_data", "run_correlate", "run_paths", "run_distance_gap",
    "run_recovery", "run_distill", "run_ntk_verify", "run_zigzag",
    "read_csv", "RUNNERS",
]


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header_lines, columns, rows) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def read_csv(path):
    """(columns, rows-as-string-lists), skipping '#' header lines."""
    columns, rows = None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#") or not line:
                continue
            parts = line.split(",")
            if columns is None:
                columns = parts
            else:
                rows.append(parts)
    return columns, rows


def _write_summary(out_dir, cfg, lines, checks) -> None:
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        for line in cfg.echo_lines():
            fh.write(line + "\n")
        for line in lines:
            fh.write(line + "\n")
        for name, ok, detail in checks:
            fh.write(f"check {name}: {'pass' if ok else 'FAIL'} ({detail})\n")


def _build_dataset(cfg: ExperimentConfig) -> ToyDataset:
    ds = sample_dataset(cfg.gaussian_spec(), cfg.n_samples)
    return split_dataset(ds, cfg.ratios)


def _test_metrics(model, ds):
    idx = ds.test_indices
    probs = predict_proba(model, ds.x[idx])
    return accuracy(probs, ds.y[idx]), ece(probs, ds.y[idx])


# ---------------------------------------------------------------- gen-data

def run_gen_data(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = _build_dataset(cfg)
    if cfg.flip_ratio > 0:
        ds = flip_labels(ds, cfg.flip_ratio, seed=cfg.seed)
    save_dataset(ds, os.path.join(out_dir, "dataset.csv"))
    lines = [
        f"n_samples = {ds.n}",
        f"n_train = {len(ds.train_indices)}",
        f"n_valid = {len(ds.valid_indices)}",
        f"n_test = {len(ds.test_indices)}",
        f"n_flipped = {len(ds.flipped_indices)}",
    ]
    _write_summary(out_dir, cfg, lines, [])
    return []


# --------------------------------------------------------------- correlate

# worker-global dataset, set once per pool worker to avoid re-pickling
_POOL_DS = None


def _pool_init(ds):
    global _POOL_DS
    _POOL_DS = ds


def _dispatch(worker, ds, tasks, jobs: int):
    """Run worker(ds, task) for every task, preserving task order."""
    if jobs <= 1:
        return [worker(ds, t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_pool_init,
                             initargs=(ds,)) as pool:
        futures = [pool.submit(_pool_entry, worker, t) for t in tasks]
        return [f.result() for f in futures]


def _pool_entry(worker, task):
    return worker(_POOL_DS, task)


def _student_row(ds, targets, tconfig, loss_bound):
    """Train one student and measure it; None on divergence."""
    try:
        result = train_model(ds, targets, tconfig)
    except DivergenceError as err:
        return {"error": str(err)}
    ti = ds.train_indices
    rows = targets.rows if isinstance(targets, TargetTable) else targets
    bounds = xi_bounds(rows[ti], ds.p_star[ti], loss_bound=loss_bound)
    acc, cal = _test_metrics(result.best_model, ds)
    out = {
        "l2_gap": mean_gap(rows[ti], ds.p_star[ti], "l2"),
        "l1_gap": mean_gap(rows[ti], ds.p_star[ti], "l1"),
        "test_acc": acc,
        "test_ece": cal,
        "epochs_run": result.epochs_run,
    }
    out.update(bounds.as_dict())
    return out


_BASELINE_ORDER = ("oht", "ls", "gt", "kd", "eskd")


def _correlate_group(ds, task):
    """One unit of correlate work: a baseline seed or one noisy run."""
    cfg = task["cfg"]
    loss_bound = cfg.loss_bound
    if task["what"] == "baselines":
        s = task["seed_index"]
        seed = derive_seed(cfg.seed, 1, s)
        tconfig = cfg.train_config(seed=seed)
        teacher_cfg = cfg.train_config(seed=seed, patience=None,
                                       stop_at_train_acc=1.0)
        teacher = train_model(ds, make_onehot_targets(ds), teacher_cfg)
        tables = {
            "oht": make_onehot_targets(ds),
            "ls": make_ls_targets(ds, cfg.ls_epsilon),
            "gt": make_gt_targets(ds),
            "kd": extract_kd_targets(teacher, ds),
            "eskd": extract_eskd_targets(teacher, ds),
        }
        rows = []
        for kind in _BASELINE_ORDER:
            row = _student_row(ds, tables[kind], tconfig, loss_bound)
            row.update({"supervision": kind, "noise_scale": math.nan, "seed": s})
            rows.append(row)
        return rows
    j, r = task["noise_index"], task["repeat"]
    noise = cfg.noise_grid[j]
    rng = stream(cfg.seed, "perturb", j, r)
    rows_t = np.vstack([perturb_target(ds.p_star[i], noise, rng)
                        for i in range(ds.n)])
    targets = TargetTable(rows_t, "custom")
    tconfig = cfg.train_config(seed=derive_seed(cfg.seed, 2, r))
    row = _student_row(ds, targets, tconfig, loss_bound)
    row.update({"supervision": "noisy_gt", "noise_scale": noise, "seed": r})
    return [row]


_XI_COLS = ("xi_l2", "xi_l1", "xi_kl_fwd_sq", "xi_kl_fwd",
            "xi_kl_rev_sq", "xi_kl_rev", "xi_jeffreys")


def run_correlate(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = _build_dataset(cfg)
    tasks = [{"cfg": cfg, "what": "baselines", "seed_index": s}
             for s in range(cfg.baseline_seeds)]
    tasks += [{"cfg": cfg, "what": "noise", "noise_index": j, "repeat": r}
              for j in range(len(cfg.noise_grid))
              for r in range(cfg.noise_seeds)]
    groups = _dispatch(_correlate_group, ds, tasks, jobs)
    rows, diverged = [], []
    for group in groups:
        for row in group:
            if "error" in row:
                diverged.append(row["error"])
            else:
                rows.append(row)
    columns = ["run_id", "supervision", "noise_scale", "seed", "l2_gap",
               "l1_gap", "test_acc", "test_ece", *_XI_COLS, "epochs_run"]
    table = [[i, row["supervision"], row["noise_scale"], row["seed"],
              row["l2_gap"], row["l1_gap"], row["test_acc"], row["test_ece"],
              *(row[c] for c in _XI_COLS), row["epochs_run"]]
             for i, row in enumerate(rows)]
    header = cfg.echo_lines() + [f"# diverged_runs = {len(diverged)}"]
    write_csv(os.path.join(out_dir, "runs.csv"), header, columns, table)

    gaps = [row["l2_gap"] for row in rows]
    accs = [row["test_acc"] for row in rows]
    eces = [row["test_ece"] for row in rows]
    rho_acc = spearman(gaps, accs)
    rho_ece = spearman(gaps, eces)
    lines = [
        f"n_runs = {len(rows)}",
        f"n_diverged = {len(diverged)}",
        f"spearman_gap_acc = {rho_acc:.17g}",
        f"spearman_gap_ece = {rho_ece:.17g}",
    ]
    if cfg.perm_test > 0:
        rng = stream(cfg.seed, "permtest")
        lines.append(f"perm_pvalue_gap_acc = "
                     f"{spearman_perm_pvalue(gaps, accs, cfg.perm_test, rng):.17g}")
        lines.append(f"perm_pvalue_gap_ece = "
                     f"{spearman_perm_pvalue(gaps, eces, cfg.perm_test, rng):.17g}")
    by_kind = {}
    for row in rows:
        if row["supervision"] != "noisy_gt":
            by_kind.setdefault(row["supervision"], []).append(row["test_acc"])
    for kind in _BASELINE_ORDER:
        if kind in by_kind:
            a = np.array(by_kind[kind])
            se = a.std(ddof=1) / np.sqrt(len(a)) if len(a) > 1 else 0.0
            lines.append(f"baseline_{kind}: mean_acc = {a.mean():.17g} "
                         f"se = {se:.17g} n = {len(a)}")
    checks = [
        ("gap_acc_negative", rho_acc < 0, f"spearman = {rho_acc:.3f}"),
        ("gap_ece_positive", rho_ece > 0, f"spearman = {rho_ece:.3f}"),
    ]
    _write_summary(out_dir, cfg, lines, checks)
    return checks


# ------------------------------------------------------------------- paths

def run_paths(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = _build_dataset(cfg)
    if cfg.flip_ratio > 0:
        ds = flip_labels(ds, cfg.flip_ratio, seed=cfg.seed)
    tconfig = cfg.train_config(record_paths=True)
    result = train_model(ds, make_onehot_targets(ds), tconfig)
    result.paths.export_csv(os.path.join(out_dir, "paths.csv"),
                            header_lines=cfg.echo_lines())

    ti = ds.train_indices
    diffs = np.array([base_difficulty(int(ds.y[i]), ds.p_star[i]) for i in ti])
    order = np.argsort(diffs, kind="stable")
    proj_rows, lines = [], []
    k3 = ds.num_classes == 3
    for q in cfg.quantiles:
        pos = min(int(round(q * (len(ti) - 1))), len(ti) - 1)
        i = int(ti[order[pos]])
        path = result.paths[i]
        filtered = ema_filter_path(path, cfg.ema_alpha)
        qs = path.as_array()
        ey = np.zeros(ds.num_classes)
        ey[ds.y[i]] = 1.0
        d_star = np.linalg.norm(qs - ds.p_star[i], axis=1)
        lines.append(
            f"quantile {q:g}: sample = {i} difficulty = {diffs[order[pos]]:.17g} "
            f"end_dist_onehot = {np.linalg.norm(qs[-1] - ey):.17g} "
            f"min_dist_pstar = {d_star.min():.17g} "
            f"final_dist_pstar = {d_star[-1]:.17g}")
        if k3:
            for flag, p in ((0, path), (1, filtered)):
                for step, qv in zip(p.steps, p.qs):
                    px, py = barycentric_project(qv)
                    proj_rows.append([i, q, step, px, py, flag])
    if k3:
        write_csv(os.path.join(out_dir, "projections.csv"), cfg.echo_lines(),
                  ["sample_index", "quantile", "step", "px", "py", "filtered"],
                  proj_rows)
    _write_summary(out_dir, cfg, lines, [])
    return []


# ------------------------------------------------------------ distance-gap

def run_distance_gap(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = _build_dataset(cfg)
    if cfg.flip_ratio > 0:
        ds = flip_labels(ds, cfg.flip_ratio, seed=cfg.seed)
    builders = {
        "oht": lambda: make_onehot_targets(ds),
        "ls": lambda: make_ls_targets(ds, cfg.ls_epsilon),
        "gt": lambda: make_gt_targets(ds),
    }
    ti = ds.train_indices
    diffs = np.array([base_difficulty(int(ds.y[i]), ds.p_star[i]) for i in ti])
    rows, lines = [], []
    for kind in cfg.supervisions:
        targets = builders[kind]()
        result = train_model(ds, targets, cfg.train_config())
        stages = (("init", result.init_model),
                  ("early_stop", result.best_model),
                  ("converged", result.final_model))
        for stage, model in stages:
            q = predict_proba(model, ds.x[ti])
            d_star = np.linalg.norm(q - ds.p_star[ti], axis=1)
            d_tar = np.linalg.norm(q - targets.rows[ti], axis=1)
            for pos, i in enumerate(ti):
                rows.append([kind, stage, int(i), diffs[pos],
                             d_star[pos], d_tar[pos]])
            lines.append(f"{kind}/{stage}: mean_dist_pstar = {d_star.mean():.17g} "
                         f"mean_dist_ptar = {d_tar.mean():.17g}")
        lines.append(f"{kind}: best_epoch = {result.best_epoch} "
                     f"epochs_run = {result.epochs_run}")
    write_csv(os.path.join(out_dir, "distance_gap.csv"), cfg.echo_lines(),
              ["supervision", "stage", "sample_index", "base_difficulty",
               "dist_q_pstar", "dist_q_ptar"], rows)
    _write_summary(out_dir, cfg, lines, [])
    return []


# ---------------------------------------------------------------- recovery

def run_recovery(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = flip_labels(_build_dataset(cfg), cfg.flip_ratio, seed=cfg.seed)
    flip = ds.flipped_indices
    if flip.size == 0:
        raise ValueError("flip_ratio produced no flipped samples")
    alpha = cfg.filter_alpha
    ti = ds.train_indices
    raw_hist, filt_hist = [], []

    def snap(epoch, model, q_tables):
        preds = predict_proba(model, ds.x[flip])
        raw_hist.append(recovery_fraction(preds, np.arange(flip.size),
                                          ds.original_y[flip]))
        filt_hist.append(recovery_fraction(q_tables[alpha][flip],
                                           np.arange(flip.size),
                                           ds.original_y[flip]))

    tconfig = cfg.train_config(patience=None)
    teacher, _tables = train_teacher_filterkd_multi(ds, tconfig, (alpha,),
                                                    epoch_callback=snap)
    init_preds = predict_proba(teacher.init_model, ds.x[flip])
    init_rec = recovery_fraction(init_preds, np.arange(flip.size),
                                 ds.original_y[flip])
    vacc0 = accuracy(predict_proba(teacher.init_model, ds.x[ds.valid_indices]),
                     ds.y[ds.valid_indices])
    tacc0 = accuracy(predict_proba(teacher.init_model, ds.x[ti]), ds.y[ti])
    rows = [[0, init_rec, init_rec, vacc0, tacc0]]
    for e, (raw, filt) in enumerate(zip(raw_hist, filt_hist)):
        rows.append([e + 1, raw, filt, teacher.valid_acc_history[e],
                     teacher.train_acc_history[e]])
    write_csv(os.path.join(out_dir, "recovery.csv"), cfg.echo_lines(),
              ["epoch", "raw_recovery", "filtered_recovery", "valid_acc",
               "train_acc"], rows)

    raw_all = [init_rec] + raw_hist
    filt_all = [init_rec] + filt_hist
    raw_peak, filt_peak = max(raw_all), max(filt_all)
    converged = raw_all[-1]
    uniform = 1.0 / ds.num_classes
    lines = [
        f"n_flipped = {flip.size}",
        f"uniform_level = {uniform:.17g}",
        f"initial_recovery = {init_rec:.17g}",
        f"raw_peak = {raw_peak:.17g} at_epoch = {int(np.argmax(raw_all))}",
        f"filtered_peak = {filt_peak:.17g} at_epoch = {int(np.argmax(filt_all))}",
        f"converged_raw = {converged:.17g}",
        f"best_valid_epoch = {teacher.best_epoch + 1}",
    ]
    checks = [
        ("initial_near_uniform", abs(init_rec - uniform) <= 0.1,
         f"initial = {init_rec:.3f}, 1/K = {uniform:.3f}"),
        ("filtered_peak_ge_raw_peak", filt_peak >= raw_peak,
         f"{filt_peak:.3f} vs {raw_peak:.3f}"),
        ("raw_peak_ge_converged", raw_peak >= converged,
         f"{raw_peak:.3f} vs {converged:.3f}"),
    ]
    _write_summary(out_dir, cfg, lines, checks)
    return checks


# ----------------------------------------------------------------- distill

_DISTILL_ORDER = ("oht", "eskd", "filter_kd", "gt")


def _distill_group(ds, task):
    """Teacher plus all students for one (flip_ratio, seed) cell."""
    cfg = task["cfg"]
    fi, s = task["flip_index"], task["seed"]
    fr = cfg.flip_grid[fi]
    flipped = flip_labels(ds, fr, seed=derive_seed(cfg.seed, 3, fi, s))
    seed = derive_seed(cfg.seed, 4, s)
    tconfig = cfg.train_config(seed=seed)
    alphas = tuple(sorted(set(cfg.alpha_grid) | {cfg.filter_alpha}))
    teacher, tables = train_teacher_filterkd_multi(flipped, tconfig, alphas)
    rows = []

    def add(kind, alpha, targets):
        try:
            result = train_model(flipped, targets, tconfig)
        except DivergenceError as err:
            rows.append({"error": str(err)})
            return
        acc, cal = _test_metrics(result.best_model, flipped)
        rows.append({"flip_ratio": fr, "seed": s, "supervision": kind,
                     "alpha": alpha, "test_acc": acc, "test_ece": cal,
                     "epochs_run": result.epochs_run})

    add("oht", math.nan, make_onehot_targets(flipped))
    add("eskd", math.nan, extract_eskd_targets(teacher, flipped))
    for a in alphas:
        add("filter_kd", a, tables[a])
    add("gt", math.nan, make_gt_targets(flipped))
    return rows


def run_distill(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = _build_dataset(cfg)
    tasks = [{"cfg": cfg, "flip_index": fi, "seed": s}
             for fi in range(len(cfg.flip_grid)) for s in cfg.seeds]
    groups = _dispatch(_distill_group, ds, tasks, jobs)
    rows, diverged = [], []
    for group in groups:
        for row in group:
            if "error" in row:
                diverged.append(row["error"])
            else:
                rows.append(row)
    columns = ["run_id", "flip_ratio", "seed", "supervision", "alpha",
               "test_acc", "test_ece", "epochs_run"]
    table = [[i, r["flip_ratio"], r["seed"], r["supervision"], r["alpha"],
              r["test_acc"], r["test_ece"], r["epochs_run"]]
             for i, r in enumerate(rows)]
    header = cfg.echo_lines() + [f"# diverged_runs = {len(diverged)}"]
    write_csv(os.path.join(out_dir, "distill.csv"), header, columns, table)

    lines, checks = [], []
    order_desc = tuple(reversed(_DISTILL_ORDER))  # gt, filter_kd, eskd, oht
    for fr in cfg.flip_grid:
        cell = {}
        for r in rows:
            if r["flip_ratio"] != fr:
                continue
            kind = r["supervision"]
            if kind == "filter_kd" and r["alpha"] != cfg.filter_alpha:
                continue
            cell.setdefault(kind, {})[r["seed"]] = r["test_acc"]
        shared = set(cfg.seeds)
        for kind in _DISTILL_ORDER:
            shared &= set(cell.get(kind, ()))
        shared = sorted(shared)
        if not shared:
            lines.append(f"flip {fr:g}: no seed finished all four supervisions")
            checks.append((f"order_flip{fr:g}", False, "no complete seeds"))
            continue
        for kind in _DISTILL_ORDER:
            a = np.array([cell[kind][s] for s in shared])
            se = a.std(ddof=1) / np.sqrt(len(a)) if len(a) > 1 else 0.0
            lines.append(f"flip {fr:g} {kind}: mean_acc = {a.mean():.17g} "
                         f"se = {se:.17g} n = {len(a)}")
        for hi, lo in zip(order_desc, order_desc[1:]):
            d = np.array([cell[hi][s] - cell[lo][s] for s in shared])
            se = d.std(ddof=1) / np.sqrt(len(d)) if len(d) > 1 else 0.0
            ok = d.mean() + se >= 0
            lines.append(f"flip {fr:g} gap {hi}-{lo}: mean = {d.mean():.17g} "
                         f"se = {se:.17g}")
            checks.append((f"order_{hi}_ge_{lo}_flip{fr:g}", ok,
                           f"gap = {d.mean():.4f} se = {se:.4f}"))
    lines.append(f"n_diverged = {len(diverged)}")
    _write_summary(out_dir, cfg, lines, checks)
    return checks


# -------------------------------------------------------------- ntk-verify

def run_ntk_verify(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = _build_dataset(cfg)
    ti = ds.train_indices
    k = ds.num_classes
    sizes = cfg.train_config().layer_sizes(ds.spec.input_dim, k)
    model = init_mlp(sizes, seed=cfg.seed)

    pair_rng = stream(cfg.seed, "pairs")
    tgt_rng = stream(cfg.seed, "pairs", 1)
    pairs = []
    for _ in range(cfg.n_pairs):
        i, j = pair_rng.choice(ti, size=2, replace=False)
        p_tar = perturb_target(ds.p_star[j], cfg.target_noise, tgt_rng)
        pairs.append((ds.x[i], ds.x[j], p_tar))

    dec_rows, medians = [], []
    for eta in cfg.eta_grid:
        res = []
        for pid, (x_o, x_u, p_tar) in enumerate(pairs):
            rec = decompose_pair(model, x_o, x_u, p_tar, eta, pair_id=pid)
            res.append(rec.residual_norm)
            dec_rows.append([pid, eta, rec.residual_norm,
                             *rec.predicted, *rec.actual,
                             rec.trace_a, rec.trace_kernel])
        medians.append((eta, float(np.median(res))))
    write_csv(os.path.join(out_dir, "decomposition.csv"), cfg.echo_lines(),
              ["pair_id", "eta", "residual_norm",
               *[f"pred_{i}" for i in range(k)], *[f"act_{i}" for i in range(k)],
               "trace_a", "trace_kernel"], dec_rows)

    lines, checks = [], []
    for (e1, m1), (e2, m2) in zip(medians, medians[1:]):
        lines.append(f"median_residual eta = {e1:g}: {m1:.17g}")
        if abs(e1 / e2 - 2.0) < 1e-9:
            ratio = m1 / m2 if m2 > 0 else math.inf
            checks.append((f"residual_ratio_{e1:g}_{e2:g}",
                           3.0 <= ratio <= 5.0, f"ratio = {ratio:.3f}"))
    lines.append(f"median_residual eta = {medians[-1][0]:g}: {medians[-1][1]:.17g}")

    sim_rows = []
    n_probe = min(3, ti.size)
    n_sim = min(cfg.n_similarity, ti.size)
    sim_targets = ds.x[ti[:n_sim]]
    for pidx in range(n_probe):
        probe = ds.x[ti[pidx]]
        recs = similarity_trace_study(model, probe, sim_targets)
        mask = np.arange(n_sim) != pidx  # drop the self pair
        rho = spearman(recs["cosine"][mask], recs["trace"][mask])
        # measured sign is reported, not asserted: which way the rank
        # correlation points is an open empirical question
        sign = "+" if rho >= 0 else "-"
        lines.append(f"similarity probe {pidx}: spearman = {rho:.17g} sign = {sign}")
        for rec in recs:
            sim_rows.append([pidx, int(rec["index"]), float(rec["cosine"]),
                             float(rec["trace"])])
    write_csv(os.path.join(out_dir, "similarity.csv"), cfg.echo_lines(),
              ["probe_id", "index", "cosine", "trace"], sim_rows)

    checkpoints = [model.copy()]
    tcfg = cfg.train_config(max_epochs=cfg.trace_epochs, patience=None)
    train_model(ds, make_onehot_targets(ds), tcfg,
                epoch_callback=lambda e, m, q: checkpoints.append(m.copy()))
    diffs = np.array([base_difficulty(int(ds.y[i]), ds.p_star[i]) for i in ti])
    order = np.argsort(diffs, kind="stable")
    picks = [int(ti[order[int(round(f * (ti.size - 1)))]])
             for f in np.linspace(0.0, 1.0, cfg.trace_samples)]
    trace_rows = []
    slack_max = 1.0 - 1.0 / k
    traces_ok = True
    for i in picks:
        tr = trace_evolution(checkpoints, ds.x[i])
        traces_ok &= bool(np.all(tr >= -1e-12) and np.all(tr <= slack_max + 1e-12))
        for e, v in enumerate(tr):
            trace_rows.append([i, e, float(v)])
    write_csv(os.path.join(out_dir, "trace_evolution.csv"), cfg.echo_lines(),
              ["sample_index", "epoch", "trace"], trace_rows)
    checks.append(("trace_within_bounds", traces_ok,
                   f"bounds [0, {slack_max:.17g}]"))
    _write_summary(out_dir, cfg, lines, checks)
    return checks


# ------------------------------------------------------------------ zigzag

def run_zigzag(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    ds = _build_dataset(cfg)
    if cfg.flip_ratio > 0:
        ds = flip_labels(ds, cfg.flip_ratio, seed=cfg.seed)
    tconfig = cfg.train_config(record_paths=True)
    result = train_model(ds, make_onehot_targets(ds), tconfig)
    ti = ds.train_indices
    flipped = set(int(i) for i in ds.flipped_indices)
    rows = []
    for i in ti:
        i = int(i)
        rows.append([i,
                     base_difficulty(int(ds.y[i]), ds.p_star[i]),
                     zigzag_score(result.paths[i], int(ds.y[i])),
                     i in flipped])
    write_csv(os.path.join(out_dir, "zigzag.csv"), cfg.echo_lines(),
              ["sample_index", "base_difficulty", "zigzag_score", "flipped"],
              rows)
    diffs = np.array([r[1] for r in rows])
    scores = np.array([r[2] for r in rows])
    flags = np.array([r[3] for r in rows], dtype=bool)
    rho = spearman(diffs, scores)
    lines = [f"n_train = {ti.size}",
             f"n_flipped = {int(flags.sum())}",
             f"spearman_difficulty_score = {rho:.17g}"]
    checks = [("difficulty_score_rank", rho >= 0.5, f"spearman = {rho:.3f}")]
    if flags.any() and (~flags).any():
        fm, cm = scores[flags].mean(), scores[~flags].mean()
        lines.append(f"flipped_mean_score = {fm:.17g}")
        lines.append(f"clean_mean_score = {cm:.17g}")
        checks.append(("flipped_scores_higher", fm > cm,
                       f"{fm:.3f} vs {cm:.3f}"))
    _write_summary(out_dir, cfg, lines, checks)
    return checks


RUNNERS = {
    "gen-data": run_gen_data,
    "correlate": run_correlate,
    "paths": run_paths,
    "distance-gap": run_distance_gap,
    "recovery": run_recovery,
    "distill": run_distill,
    "ntk-verify": run_ntk_verify,
    "zigzag": run_zigzag,
}
