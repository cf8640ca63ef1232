"""Evaluation metrics: reconstruction error, boundary F1, purity, projections.

Reconstruction error is the mean squared state difference. Segmentation
quality compares predicted option switches against ground-truth segment
starts with a step tolerance, excluding the forced first step on both sides.
Latent structure is quantified by k-means purity over the codes sampled at
switch steps and visualized via a deterministic 2-D PCA projection; raw
latents are exported alongside so heavier projections can run externally.
"""

import json
import warnings
from pathlib import Path

import numpy as np

from . import netstack as ns
from .errors import InputError
from .rollout import reconstruct
from .tvi import greedy_zeta


def recon_mse(pred, gt) -> float:
    """Mean over timesteps and dimensions of squared state differences."""
    if pred.states.shape != gt.states.shape:
        raise InputError(
            f"recon_mse: shapes {pred.states.shape} vs {gt.states.shape}"
        )
    return float(np.mean((pred.states - gt.states) ** 2))


def _greedy_match(pred, gt, tol):
    used = np.zeros(len(gt), dtype=bool)
    matches = 0
    for p in pred:
        best = -1
        best_gap = tol + 1
        for i, g in enumerate(gt):
            gap = abs(p - g)
            if not used[i] and gap <= tol and gap < best_gap:
                best, best_gap = i, gap
        if best >= 0:
            used[best] = True
            matches += 1
    return matches


def boundary_f1(pred_b, gt_boundaries, tol: int = 2):
    """(precision, recall, F1) of predicted switches vs true segment starts.

    pred_b is the per-step 0/1 switch sequence; predictions are its 1-based
    indices with value 1, excluding the forced step 1. gt_boundaries are
    1-based segment starts, with the leading 1 likewise excluded. Matching is
    greedy one-to-one within +-tol. Empty-vs-empty scores 1.0; empty against
    nonempty scores 0.0.
    """
    if tol < 0:
        raise InputError(f"tol must be >= 0, got {tol}")
    bv = np.asarray(pred_b)
    pred = [t + 1 for t in range(len(bv)) if bv[t] == 1 and t > 0]
    gt = sorted(int(g) for g in gt_boundaries if int(g) != 1)
    if not pred and not gt:
        return 1.0, 1.0, 1.0
    if not pred or not gt:
        return 0.0, 0.0, 0.0
    matches = _greedy_match(pred, gt, tol)
    precision = matches / len(pred)
    recall = matches / len(gt)
    f1 = 0.0 if matches == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def _inertia(points, assignments, centroids):
    return float(np.sum((points - centroids[assignments]) ** 2))


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100):
    """Lloyd's algorithm with k-means++ seeding; deterministic given seed.

    An empty cluster is re-seeded from the point farthest from its assigned
    centroid. Returns (assignments, centroids).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"kmeans: expected 2-d points, got shape {x.shape}")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"kmeans: need 1 <= k <= {n} points, got k={k}")
    if max_iters < 1:
        raise InputError(f"kmeans: max_iters must be >= 1, got {max_iters}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(0, n)]
    for j in range(1, k):
        d2 = np.min(
            np.sum((x[:, None, :] - centroids[None, :j, :]) ** 2, axis=2), axis=1
        )
        total = d2.sum()
        probs = d2 / total if total > 0 else np.full(n, 1.0 / n)
        centroids[j] = x[rng.choice(n, p=probs)]

    assignments = None
    for _ in range(max_iters):
        dists = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        for j in range(k):
            members = new_assign == j
            if not np.any(members):
                farthest = int(np.argmax(dists[np.arange(n), new_assign]))
                centroids[j] = x[farthest]
                new_assign[farthest] = j
            else:
                centroids[j] = x[members].mean(axis=0)
        if assignments is not None and np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
    return assignments, centroids


def cluster_purity(z_at_switches, labels, k: int, seed: int = 0) -> float:
    """Purity of k-means clusters against ground-truth primitive labels."""
    z = np.asarray(z_at_switches, dtype=np.float64)
    lab = np.asarray(labels)
    if z.shape[0] != lab.shape[0]:
        raise InputError(f"cluster_purity: {z.shape[0]} codes vs {lab.shape[0]} labels")
    if z.shape[0] < k:
        raise InputError(f"cluster_purity: {z.shape[0]} switches < k={k}")
    assignments, _ = kmeans(z, k, seed=seed)
    total = 0
    for j in range(k):
        member_labels = lab[assignments == j]
        if member_labels.size:
            _, counts = np.unique(member_labels, return_counts=True)
            total += int(counts.max())
    return total / z.shape[0]


def pca2(points):
    """Project points onto the top-2 principal directions of the centered data.

    Component signs are fixed by making each direction's largest-magnitude
    coordinate positive. Rank-0 input yields all zeros with a warning.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise InputError(f"pca2: need >= 2 points of dim >= 2, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    if np.all(eigvals <= 0.0):
        warnings.warn("pca2: degenerate rank-0 data, returning zeros", RuntimeWarning)
        return np.zeros((x.shape[0], 2))
    top2 = eigvecs[:, ::-1][:, :2]
    for j in range(2):
        lead = np.argmax(np.abs(top2[:, j]))
        if top2[lead, j] < 0:
            top2[:, j] = -top2[:, j]
    return centered @ top2


def collect_switch_latents(trajectories, triple):
    """Greedy posterior codes at switch steps for every trajectory.

    Returns (demo_indices, timesteps (1-based), labels (-1 if unlabeled),
    codes) as flat arrays over all switches in dataset order.
    """
    demo_idx, steps, labels, codes = [], [], [], []
    for i, traj in enumerate(trajectories):
        zeta = greedy_zeta(ns.q_forward(triple, traj))
        for t in range(len(zeta.b)):
            if zeta.b[t] == 1:
                demo_idx.append(i)
                steps.append(t + 1)
                traj_labels = getattr(traj, "labels", None)
                labels.append(int(traj_labels[t]) if traj_labels is not None else -1)
                codes.append(zeta.z[t])
    return (
        np.asarray(demo_idx, dtype=np.int64),
        np.asarray(steps, dtype=np.int64),
        np.asarray(labels, dtype=np.int64),
        np.asarray(codes, dtype=np.float64).reshape(len(demo_idx), -1),
    )


def export_latents(trajectories, triple, path) -> int:
    """Write one CSV row per switch step; returns the row count.

    Columns: demo_index, switch_timestep, gt_primitive_label, z_0..z_{d-1},
    pca_x, pca_y. The projection is fitted on all exported codes at once.
    """
    demo_idx, steps, labels, codes = collect_switch_latents(trajectories, triple)
    d_z = triple.dims.d_z
    if codes.shape[0] >= 2:
        proj = pca2(codes)
    else:
        proj = np.zeros((codes.shape[0], 2))
    header = (
        ["demo_index", "switch_timestep", "gt_primitive_label"]
        + [f"z_{j}" for j in range(d_z)]
        + ["pca_x", "pca_y"]
    )
    lines = [",".join(header)]
    for r in range(codes.shape[0]):
        cells = [str(demo_idx[r]), str(steps[r]), str(labels[r])]
        cells += [repr(float(v)) for v in codes[r]]
        cells += [repr(float(proj[r, 0])), repr(float(proj[r, 1]))]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
    return codes.shape[0]


def eval_report(trajectories, triple, dynamics, tol: int = 2, k: int = 4, seed: int = 0) -> dict:
    """All headline metrics over a dataset split as one JSON-ready dict.

    Aggregate metrics are means of per-trajectory values; purity pools the
    switch codes across trajectories. Purity is null when fewer than k
    labeled switches exist.
    """
    if not trajectories:
        raise InputError("eval_report requires at least one trajectory")
    mse_tf, mse_ol, precs, recs, f1s = [], [], [], [], []
    for traj in trajectories:
        tf, zeta = reconstruct(traj, triple, dynamics, "teacher_forced")
        ol, _ = reconstruct(traj, triple, dynamics, "open_loop")
        mse_tf.append(recon_mse(tf, traj))
        mse_ol.append(recon_mse(ol, traj))
        gt = getattr(traj, "boundaries", None)
        if gt is not None:
            p, r, f = boundary_f1(zeta.b, gt, tol)
            precs.append(p)
            recs.append(r)
            f1s.append(f)
    _, _, labels, codes = collect_switch_latents(trajectories, triple)
    labeled = labels >= 0
    purity = None
    if int(labeled.sum()) >= k:
        purity = cluster_purity(codes[labeled], labels[labeled], k, seed=seed)
    return {
        "num_trajectories": len(trajectories),
        "num_switches": int(codes.shape[0]),
        "recon_mse_teacher_forced": float(np.mean(mse_tf)),
        "recon_mse_open_loop": float(np.mean(mse_ol)),
        "recon_mse_teacher_forced_per_traj": [float(v) for v in mse_tf],
        "recon_mse_open_loop_per_traj": [float(v) for v in mse_ol],
        "boundary_precision": float(np.mean(precs)) if precs else None,
        "boundary_recall": float(np.mean(recs)) if recs else None,
        "boundary_f1": float(np.mean(f1s)) if f1s else None,
        "boundary_tolerance": tol,
        "cluster_purity": purity,
        "purity_k": k,
    }


def save_report(report: dict, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
