"""Zero-shot N-way retrieval evaluation, report export, ablation sweeps.

Each EEG query is scored against a candidate pool of image embeddings under
the trained loss variant's similarity. When n_way is smaller than the pool,
distractors are resampled ``repeats`` times per query and accuracies are
averaged. Ranking ties break by candidate index (stable sort), so repeated
evaluation of one checkpoint is byte-reproducible.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import figures
from .augment import IMAGE_KIND_ORDER
from .config import build_experiment, config_digest
from .errors import ContractError, ZeroShotViolation
from .seeding import DOMAIN_EVAL, derive_rng


@dataclass
class RetrievalReport:
    n_way: int
    top_k: tuple
    ranks: np.ndarray               # per-query mean rank over repeats, in [1, n_way]
    accuracies: dict[int, float]
    similarity: np.ndarray          # queries x full candidate pool
    seed: int
    repeats: int
    query_concepts: np.ndarray
    candidate_concepts: np.ndarray


def rank_true_candidates(sims: np.ndarray, true_mask: np.ndarray) -> int:
    """1-based rank of the best true candidate; ties break by candidate index."""
    order = np.argsort(-sims, kind="stable")
    positions = np.flatnonzero(true_mask[order])
    return int(positions[0]) + 1


def evaluate(model, dataset, n_way: int = 0, top_k: tuple = (1, 5),
             repeats: int = 1, seed: int = 0) -> RetrievalReport:
    """Score every held-out EEG trial against the held-out image pool.

    ``n_way = 0`` (or the pool size) uses the full pool; otherwise each query
    faces its paired image plus ``n_way - 1`` distractors of other concepts,
    resampled ``repeats`` times.
    """
    overlap = np.intersect1d(dataset.train_concepts, dataset.test_concepts)
    if overlap.size:
        raise ZeroShotViolation(f"train/test concepts overlap: {overlap[:8].tolist()}")
    test_idx = dataset.test_indices
    pool = test_idx.shape[0]
    if pool < 2:
        raise ContractError(f"test pool has {pool} pairs; need at least 2")
    if n_way == 0:
        n_way = pool
    if n_way < 2:
        raise ContractError(f"n_way must be >= 2, got {n_way}")
    if n_way > pool:
        raise ContractError(f"n_way = {n_way} exceeds the test pool size {pool}")
    if repeats < 1:
        raise ContractError(f"repeats must be >= 1, got {repeats}")

    z_img, z_eeg = model.clean_embeddings(dataset, test_idx)
    sim = z_eeg @ z_img.T                     # queries x candidates
    concepts = dataset.concept_ids[test_idx]
    ks = tuple(sorted(set(int(k) for k in top_k)))
    hits = {k: 0.0 for k in ks}
    mean_ranks = np.zeros(pool)

    full_pool = n_way == pool
    for qi in range(pool):
        if full_pool:
            true_mask = concepts == concepts[qi]
            rank = rank_true_candidates(sim[qi], true_mask)
            mean_ranks[qi] = rank
            for k in ks:
                hits[k] += float(rank <= k)
        else:
            others = np.flatnonzero(concepts != concepts[qi])
            if others.shape[0] < n_way - 1:
                raise ContractError(
                    f"not enough distractor candidates for {n_way}-way evaluation")
            acc_rank = 0.0
            local_hits = {k: 0.0 for k in ks}
            for rep in range(repeats):
                rng = derive_rng(seed, DOMAIN_EVAL, qi, rep)
                distractors = rng.choice(others, size=n_way - 1, replace=False)
                cand = np.concatenate(([qi], distractors))
                sims = sim[qi, cand]
                true_mask = concepts[cand] == concepts[qi]
                rank = rank_true_candidates(sims, true_mask)
                acc_rank += rank
                for k in ks:
                    local_hits[k] += float(rank <= k)
            mean_ranks[qi] = acc_rank / repeats
            for k in ks:
                hits[k] += local_hits[k] / repeats
    accuracies = {k: hits[k] / pool for k in ks}
    return RetrievalReport(n_way=n_way, top_k=ks, ranks=mean_ranks,
                           accuracies=accuracies, similarity=sim, seed=seed,
                           repeats=repeats, query_concepts=concepts,
                           candidate_concepts=concepts)


# -- export -----------------------------------------------------------------------


def _gray_hex(value: float) -> str:
    level = int(round(255 * (1.0 - value)))    # high similarity renders dark
    return f"#{level:02x}{level:02x}{level:02x}"


def export_similarity(report: RetrievalReport, csv_path, svg_path,
                      cell: int = 8) -> None:
    """Raw similarity values as CSV plus a grayscale SVG heatmap.

    CSV uses repr-precision decimals, so parsing the text back reproduces the
    matrix bit-exactly. In the heatmap, row = EEG query, column = image
    candidate, and the largest value renders darkest.
    """
    m = report.similarity
    lines = [",".join(repr(float(v)) for v in row) for row in m]
    Path(csv_path).write_text("\n".join(lines) + "\n")

    lo, hi = float(m.min()), float(m.max())
    span = (hi - lo) or 1.0
    rows, cols = m.shape
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{cols * cell}" height="{rows * cell}" '
        f'viewBox="0 0 {cols * cell} {rows * cell}">'
    ]
    for i in range(rows):
        for j in range(cols):
            shade = _gray_hex((float(m[i, j]) - lo) / span)
            parts.append(
                f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" '
                f'height="{cell}" fill="{shade}"/>'
            )
    parts.append("</svg>")
    Path(svg_path).write_text("\n".join(parts) + "\n")


def export_report(report: RetrievalReport, out_dir) -> dict:
    """report.json + per-query report.csv + similarity CSV/heatmap + top-k figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "n_way": report.n_way,
        "repeats": report.repeats,
        "seed": report.seed,
        "accuracies": {f"top{k}": report.accuracies[k] for k in report.top_k},
    }
    (out / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_index", "concept_id", "mean_rank"]
                        + [f"hit_top{k}" for k in report.top_k])
        for qi in range(report.ranks.shape[0]):
            rank = report.ranks[qi]
            writer.writerow([qi, int(report.query_concepts[qi]), f"{rank:.4f}"]
                            + [int(rank <= k) for k in report.top_k])
    export_similarity(report, out / "similarity.csv", out / "heatmap.svg")
    figures.topk_bars(report.accuracies, report.n_way, out / "topk.svg")
    files = ["report.json", "report.csv", "similarity.csv", "heatmap.svg", "topk.svg"]
    return {"out_dir": str(out), "files": files, **summary}


# -- ablation sweep ------------------------------------------------------------------


SWEEP_AXES = ("fusion_K", "loss_variant", "batch_size", "temperature", "transform_set")

_TRANSFORM_TOKENS = {
    "blur": "gaussian_blur",
    "noise": "gaussian_noise",
    "lowres": "low_resolution",
    "mosaic": "mosaic",
    "jitter": "color_jitter",
    "gray": "grayscale",
    "crop": "random_crop",
}


def _apply_axis(cfg: dict, axis: str, value) -> dict:
    out = copy.deepcopy(cfg)
    if axis == "fusion_K":
        k = int(value)
        if not (1 <= k <= len(IMAGE_KIND_ORDER)):
            raise ContractError(f"fusion_K must be in [1, {len(IMAGE_KIND_ORDER)}]")
        out["pipeline"]["k"] = k
        out["pipeline"]["image"] = None
    elif axis == "loss_variant":
        out["loss"]["variant"] = str(value)
    elif axis == "batch_size":
        out["train"]["batch_size"] = int(value)
    elif axis == "temperature":
        if str(value) == "learnable":
            out["loss"]["learnable_tau"] = True
        else:
            out["loss"]["learnable_tau"] = False
            out["loss"]["temperature"] = float(value)
    elif axis == "transform_set":
        kinds = []
        for token in str(value).split("+"):
            token = token.strip()
            kind = _TRANSFORM_TOKENS.get(token, token)
            if kind not in IMAGE_KIND_ORDER:
                raise ContractError(f"unknown transform token {token!r}")
            kinds.append(kind)
        out["pipeline"]["image"] = [{"kind": k} for k in kinds]
    else:
        raise ContractError(f"unknown sweep axis {axis!r}; one of {SWEEP_AXES}")
    return out


def ablation_sweep(base_cfg: dict, axis: str, values: list, seeds: list[int],
                   dataset, out_dir, n_way: int = 0, repeats: int = 1) -> list[dict]:
    """Train once per (value, seed), evaluate, and emit CSV tables plus a figure."""
    from . import trainer  # deferred: trainer imports this module
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for value in values:
        for seed in seeds:
            cfg = _apply_axis(base_cfg, axis, value)
            cfg["seed"] = int(seed)
            exp = build_experiment(cfg)
            run_dir = out / f"{axis}_{value}_seed{seed}"
            result = trainer.train(exp, dataset, run_dir)
            report = evaluate(result.model, dataset, n_way=n_way,
                              top_k=(1, 5), repeats=repeats, seed=seed)
            rows.append({
                "axis": axis, "value": value, "seed": seed,
                "top1": report.accuracies[1], "top5": report.accuracies[5],
                "final_loss": result.rows[-1]["loss"],
                "config_digest": config_digest(cfg),
            })
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    means: dict[int, list] = {1: [], 5: []}
    for value in values:
        sub = [r for r in rows if r["value"] == value]
        means[1].append(float(np.mean([r["top1"] for r in sub])))
        means[5].append(float(np.mean([r["top5"] for r in sub])))
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([axis, "mean_top1", "mean_top5", "n_seeds"])
        for i, value in enumerate(values):
            writer.writerow([value, f"{means[1][i]:.4f}", f"{means[5][i]:.4f}",
                             len(seeds)])
    figures.sweep_plot(axis, values, means, out / "sweep.svg")
    return rows
