"""Segmentation and distribution metrics.

Label maps are integer arrays where each distinct value is one segment;
ground truth uses 0 for background. The assignment step wraps scipy's
linear-sum solver and then canonicalizes ties so results never depend on
solver internals.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import linear_sum_assignment

logger = logging.getLogger(__name__)


def hungarian_match(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimal-cost one-to-one assignment on an [n, m] cost matrix.

    Returns (rows, cols, total) with min(n, m) matched pairs. Among equally
    cheap assignments the lexicographically smallest pairing along the
    shorter axis is chosen, so ties never depend on solver internals.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if min(n, m) == 0:
        return np.array([], dtype=int), np.array([], dtype=int), 0.0
    if n > m:
        cols_t, rows_t, total = hungarian_match(cost.T)
        order = np.argsort(rows_t)
        return rows_t[order], cols_t[order], total

    rows0, cols0 = linear_sum_assignment(cost)
    total = float(cost[rows0, cols0].sum())
    tol = 1e-9 * max(1.0, abs(total))
    out_cols: list[int] = []
    remaining = list(range(m))
    budget = total
    for r in range(n):
        rest_rows = list(range(r + 1, n))
        for c in sorted(remaining):
            rest = 0.0
            if rest_rows:
                rest_cols = [x for x in remaining if x != c]
                sub = cost[np.ix_(rest_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                rest = float(sub[rr, cc].sum())
            if cost[r, c] + rest <= budget + tol:
                out_cols.append(c)
                remaining.remove(c)
                budget -= cost[r, c]
                break
        else:
            raise RuntimeError("tie canonicalization failed to re-derive "
                               "an optimal assignment")
    return np.arange(n), np.array(out_cols), total


def _comb2(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(a: np.ndarray, b: np.ndarray) -> float:
    """ARI between two flat label vectors; 1.0 when both are trivial."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError("label vectors must have the same length")
    if a.size == 0:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    table = np.zeros((na, nb), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    pairs = _comb2(np.array(a.size))
    expected = sum_a * sum_b / pairs if pairs else 0.0
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def fg_ari(pred: np.ndarray, true: np.ndarray) -> float:
    """ARI restricted to ground-truth foreground pixels (true > 0)."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    fg = true > 0
    return adjusted_rand_index(pred[fg], true[fg])


def _overlap_matrices(pred: np.ndarray, true: np.ndarray,
                      include_background: bool
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                 np.ndarray]:
    """Pairwise IoU and cosine similarity between binarized segments."""
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if pred.shape != true.shape:
        raise ValueError("label maps must have the same size")
    pred_ids = np.unique(pred)
    true_ids = np.unique(true)
    if not include_background:
        true_ids = true_ids[true_ids > 0]
    iou = np.zeros((len(pred_ids), len(true_ids)))
    cosine = np.zeros_like(iou)
    for i, p in enumerate(pred_ids):
        pm = pred == p
        np_ = pm.sum()
        for j, t in enumerate(true_ids):
            tm = true == t
            inter = np.logical_and(pm, tm).sum()
            union = np_ + tm.sum() - inter
            iou[i, j] = inter / union if union else 0.0
            denom = np.sqrt(float(np_) * tm.sum())
            cosine[i, j] = inter / denom if denom else 0.0
    return iou, cosine, pred_ids, true_ids


def miou(pred: np.ndarray, true: np.ndarray,
         include_background: bool = True) -> float:
    """Mean IoU over ground-truth segments under one-to-one matching.

    Pairs are matched by maximal cosine similarity between the flattened
    binary masks; the score averaged is the IoU of each matched pair. True
    segments left unmatched (more segments than slots) contribute 0.
    """
    iou, cosine, _, true_ids = _overlap_matrices(pred, true,
                                                 include_background)
    if len(true_ids) == 0:
        return 1.0
    rows, cols, _ = hungarian_match(-cosine)
    matched = np.zeros(len(true_ids))
    matched[cols] = iou[rows, cols]
    return float(matched.mean())


def mbo(pred: np.ndarray, true: np.ndarray,
        include_background: bool = True) -> float:
    """Mean best overlap: each true segment takes its best IoU over all
    predictions (many-to-one), so mbo >= miou pointwise."""
    iou, _, _, true_ids = _overlap_matrices(pred, true, include_background)
    if len(true_ids) == 0:
        return 1.0
    return float(iou.max(axis=0).mean())


EIGENVALUE_FLOOR = -1e-8


def _checked_sqrt_eigvals(vals: np.ndarray, context: str) -> np.ndarray:
    if vals.min() < EIGENVALUE_FLOOR:
        raise ValueError(f"{context}: eigenvalue {vals.min():.3e} below "
                         f"{EIGENVALUE_FLOOR}; matrix is not PSD")
    return np.sqrt(np.clip(vals, 0.0, None))


def _sqrtm_psd(mat: np.ndarray, context: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    root = _checked_sqrt_eigvals(vals, context)
    return (vecs * root) @ vecs.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Squared 2-Wasserstein distance between Gaussian fits of two feature
    sets ([N, D] each): |mu_a - mu_b|^2 + tr(Ca + Cb - 2 sqrt(Ca Cb)).

    Matrix square roots go through symmetric eigendecompositions of the
    symmetrized product; eigenvalues below -1e-8 are rejected, small
    negatives clamped to zero. Singular covariances get a reported 1e-6
    diagonal boost so the square root stays well conditioned.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be [N, D] with matching D")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples per side")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    ca = np.atleast_2d(np.cov(a, rowvar=False))
    cb = np.atleast_2d(np.cov(b, rowvar=False))
    dim = ca.shape[0]
    for name, c in (("first", ca), ("second", cb)):
        vals = np.linalg.eigvalsh(c)
        _checked_sqrt_eigvals(vals, f"{name} covariance")
        if vals.min() < 1e-10 and dim > 1:
            logger.info("%s covariance is singular; adding 1e-6 to the "
                        "diagonal", name)
            c[np.diag_indices(dim)] += 1e-6
    sa = _sqrtm_psd(ca, "first covariance")
    # tr sqrt(Ca Cb) = tr sqrt(sa Cb sa), and the latter is symmetric PSD
    inner = sa @ cb @ sa
    inner = 0.5 * (inner + inner.T)
    tr_sqrt = _checked_sqrt_eigvals(np.linalg.eigvalsh(inner),
                                    "product sqrt").sum()
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(ca) + np.trace(cb)
              - 2.0 * tr_sqrt)
    return max(d, 0.0)


def frechet_feature_distance(images_a: np.ndarray, images_b: np.ndarray,
                             extractor=None) -> float:
    """Fréchet distance between two image sets under a frozen extractor.

    The default extractor is the pooled-pixel embedding; pass a callable
    mapping [N, H, W, 3] images to [N, D] features (for instance a trained
    backbone) for a richer comparison.
    """
    if extractor is None:
        extractor = desk_features
    return frechet_distance(extractor(images_a), extractor(images_b))


def desk_features(images: np.ndarray, pool: int = 8) -> np.ndarray:
    """Average-pool images to [pool, pool] per channel and flatten.

    Accepts [N, H, W, 3] uint8 or float in [0, 1]; the result is a cheap,
    deterministic embedding for distribution comparisons.
    """
    x = np.asarray(images)
    if x.ndim != 4 or x.shape[3] != 3:
        raise ValueError(f"expected [N, H, W, 3], got {x.shape}")
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    n, h, w, c = x.shape
    if h % pool or w % pool:
        raise ValueError(f"image size {h}x{w} not divisible by pool {pool}")
    x = x.reshape(n, pool, h // pool, pool, w // pool, c)
    return x.mean(axis=(2, 4)).reshape(n, pool * pool * c)


def backbone_embedder(encoder, batch: int = 64):
    """Frozen-backbone extractor: mean-pooled feature-grid activations.

    Returns a callable mapping [N, H, W, 3] images (uint8 or [0, 1] float)
    to [N, d_input] features, suitable for frechet_feature_distance.
    """
    from .data import images_to_input
    from .tensor import no_grad

    def extract(images: np.ndarray) -> np.ndarray:
        x = np.asarray(images)
        if x.dtype != np.uint8:
            x = np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)
        out = []
        with no_grad():
            for lo in range(0, len(x), batch):
                grid = encoder.features(images_to_input(x[lo:lo + batch]))
                out.append(grid.features.data.mean(axis=1))
        return np.concatenate(out)

    return extract


def shuffled_scores(pred: np.ndarray, true: np.ndarray,
                    rng: np.random.Generator, shuffles: int = 20,
                    include_background: bool = True) -> dict[str, float]:
    """Chance floor: spatially permute the predicted map and re-score.

    Permuting pixel positions keeps each slot's area but destroys spatial
    structure; averaging over draws gives the random-assignment baseline.
    """
    pred = np.asarray(pred)
    flat = pred.ravel()
    ari_v, miou_v, mbo_v = [], [], []
    for _ in range(shuffles):
        perm = rng.permutation(flat.size)
        shuffled = flat[perm].reshape(pred.shape)
        ari_v.append(fg_ari(shuffled, true))
        miou_v.append(miou(shuffled, true, include_background))
        mbo_v.append(mbo(shuffled, true, include_background))
    return {"fg_ari": float(np.mean(ari_v)),
            "miou": float(np.mean(miou_v)),
            "mbo": float(np.mean(mbo_v))}


def segmentation_scores(preds, trues,
                        include_background: bool = True) -> dict[str, float]:
    """Average fg_ari/miou/mbo over a list of (pred, true) label maps."""
    if len(preds) != len(trues) or len(preds) == 0:
        raise ValueError("need equal, nonzero numbers of maps")
    out = {"fg_ari": 0.0, "miou": 0.0, "mbo": 0.0}
    for p, t in zip(preds, trues):
        out["fg_ari"] += fg_ari(p, t)
        out["miou"] += miou(p, t, include_background)
        out["mbo"] += mbo(p, t, include_background)
    return {k: v / len(preds) for k, v in out.items()}
