"""Concept libraries: harvested slots clustered into reusable categories.

A library holds every harvested slot, its provenance (which image, which
slot row), and a k-means partition of the bank. Cluster k acts as one
concept category; a compositional prompt stacks one member drawn from each
cluster in index order. Prompt edits are plain row operations so they stay
valid for any slot count.
"""

from __future__ import annotations

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import images_to_input
from .tensor import no_grad


def harvest_slots(encoder, images_u8: np.ndarray, rng: np.random.Generator,
                  batch: int = 64,
                  dtype=np.float32) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Encode a dataset and stack all slots into a bank.

    Returns (bank [M, D], image_index [M], slot_index [M]) where row i of
    the bank came from images_u8[image_index[i]], slot row slot_index[i].
    """
    if images_u8.ndim != 4:
        raise ValueError(f"expected [N, H, W, 3] uint8, got {images_u8.shape}")
    banks, img_idx, slot_idx = [], [], []
    with no_grad():
        for lo in range(0, len(images_u8), batch):
            chunk = images_to_input(images_u8[lo:lo + batch], dtype=dtype)
            result = encoder.encode(chunk, rng)
            s = result.slots.data
            B, N, D = s.shape
            banks.append(s.reshape(B * N, D))
            img_idx.append(np.repeat(np.arange(lo, lo + B), N))
            slot_idx.append(np.tile(np.arange(N), B))
    return (np.concatenate(banks), np.concatenate(img_idx),
            np.concatenate(slot_idx))


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """[M, K] squared Euclidean distances."""
    p2 = np.sum(points * points, axis=1, keepdims=True)
    c2 = np.sum(centers * centers, axis=1)
    d = p2 + c2 - 2.0 * points @ centers.T
    return np.maximum(d, 0.0)


def kmeans_pp_init(points: np.ndarray, k: int,
                   rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread starting centers by distance-squared."""
    M = len(points)
    if not 1 <= k <= M:
        raise ValueError(f"need 1 <= k <= {M}, got {k}")
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(M)]
    d2 = _sq_dists(points, centers[:1]).ravel()
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i:] = centers[0]
            break
        centers[i] = points[rng.choice(M, p=d2 / total)]
        d2 = np.minimum(d2, _sq_dists(points, centers[i:i + 1]).ravel())
    return centers


def lloyd(points: np.ndarray, centers: np.ndarray, tol: float = 1e-6,
          max_iter: int = 200) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd iterations until centers move less than tol.

    Empty clusters are reseeded at the point currently farthest from its
    own center. Returns (centers, labels, inertia).
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64, copy=True)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = d2.argmin(axis=1)
        nearest = d2[np.arange(len(points)), labels]
        new_centers = centers.copy()
        for k in range(len(centers)):
            members = labels == k
            if members.any():
                new_centers[k] = points[members].mean(axis=0)
            else:
                far = int(nearest.argmax())
                new_centers[k] = points[far]
                nearest[far] = 0.0
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    d2 = _sq_dists(points, centers)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    return centers, labels, inertia


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           tol: float = 1e-6, restarts: int = 3,
           max_iter: int = 200) -> tuple[np.ndarray, np.ndarray, float]:
    """k-means++ plus Lloyd, best inertia over a few restarts."""
    best = None
    for _ in range(restarts):
        init = kmeans_pp_init(points, k, rng)
        centers, labels, inertia = lloyd(points, init, tol, max_iter)
        if best is None or inertia < best[2]:
            best = (centers, labels, inertia)
    return best


class ConceptLibrary:
    """Slot bank plus its k-means partition into concept categories."""

    def __init__(self, bank: np.ndarray, centers: np.ndarray,
                 labels: np.ndarray, image_index: np.ndarray,
                 slot_index: np.ndarray, inertia: float = 0.0):
        bank = np.asarray(bank)
        if bank.ndim != 2:
            raise ValueError("bank must be [M, D]")
        if len(labels) != len(bank) or len(image_index) != len(bank):
            raise ValueError("provenance arrays must match the bank length")
        if labels.min() < 0 or labels.max() >= len(centers):
            raise ValueError("labels out of range for the given centers")
        self.bank = bank
        self.centers = np.asarray(centers)
        self.labels = np.asarray(labels)
        self.image_index = np.asarray(image_index)
        self.slot_index = np.asarray(slot_index)
        self.inertia = float(inertia)

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def slot_dim(self) -> int:
        return self.bank.shape[1]

    def members(self, cluster: int) -> np.ndarray:
        """Row indices of the bank belonging to one cluster."""
        if not 0 <= cluster < self.k:
            raise ValueError(f"cluster must be in [0, {self.k}), got {cluster}")
        return np.flatnonzero(self.labels == cluster)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    @classmethod
    def build(cls, encoder, images_u8: np.ndarray, k: int,
              rng: np.random.Generator, batch: int = 64,
              tol: float = 1e-6) -> "ConceptLibrary":
        bank, img_idx, slot_idx = harvest_slots(encoder, images_u8, rng,
                                                batch=batch)
        centers, labels, inertia = kmeans(bank.astype(np.float64), k, rng,
                                          tol=tol)
        return cls(bank, centers, labels, img_idx, slot_idx, inertia)

    def sample_prompt(self, rng: np.random.Generator,
                      clusters: list[int] | None = None) -> np.ndarray:
        """One slot drawn uniformly per cluster, stacked in cluster order."""
        chosen = range(self.k) if clusters is None else clusters
        rows = []
        for c in chosen:
            members = self.members(int(c))
            if len(members) == 0:
                raise ValueError(f"cluster {c} is empty")
            rows.append(self.bank[rng.choice(members)])
        return np.stack(rows)

    def sample_prompts(self, count: int, rng: np.random.Generator,
                       clusters: list[int] | None = None) -> np.ndarray:
        """[count, K, D] batch of compositional prompts."""
        return np.stack([self.sample_prompt(rng, clusters)
                         for _ in range(count)])

    def save(self, path) -> None:
        tensors = {
            "bank": self.bank,
            "centers": self.centers,
            "labels": self.labels.astype(np.int64),
            "image_index": self.image_index.astype(np.int64),
            "slot_index": self.slot_index.astype(np.int64),
        }
        meta = {"k": self.k, "slot_dim": self.slot_dim,
                "inertia": self.inertia,
                "counts": self.counts().tolist()}
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "ConceptLibrary":
        tensors, meta = load_checkpoint(path)
        return cls(tensors["bank"], tensors["centers"], tensors["labels"],
                   tensors["image_index"], tensors["slot_index"],
                   meta.get("inertia", 0.0))


def _check_prompt(prompt: np.ndarray) -> np.ndarray:
    prompt = np.asarray(prompt)
    if prompt.ndim != 2:
        raise ValueError(f"prompt must be [N, D], got shape {prompt.shape}")
    return prompt


def remove(prompt: np.ndarray, index: int) -> np.ndarray:
    """Drop one slot row; the prompt shrinks by one."""
    prompt = _check_prompt(prompt)
    if not 0 <= index < len(prompt):
        raise IndexError(f"slot {index} out of range for {len(prompt)} slots")
    return np.delete(prompt, index, axis=0)


def insert(prompt: np.ndarray, slot: np.ndarray,
           index: int | None = None) -> np.ndarray:
    """Insert a slot row at index (default: append)."""
    prompt = _check_prompt(prompt)
    slot = np.asarray(slot)
    if slot.shape != (prompt.shape[1],):
        raise ValueError(f"slot must be [{prompt.shape[1]}], got {slot.shape}")
    if index is None:
        index = len(prompt)
    if not 0 <= index <= len(prompt):
        raise IndexError(f"insert position {index} out of range")
    return np.insert(prompt, index, slot, axis=0)


def swap(prompt_a: np.ndarray, prompt_b: np.ndarray, i: int,
         j: int) -> tuple[np.ndarray, np.ndarray]:
    """Exchange slot i of one prompt with slot j of another."""
    a = _check_prompt(prompt_a).copy()
    b = _check_prompt(prompt_b).copy()
    if a.shape[1] != b.shape[1]:
        raise ValueError("prompts must share the slot dimension")
    if not (0 <= i < len(a) and 0 <= j < len(b)):
        raise IndexError(f"slot pair ({i}, {j}) out of range")
    a[i], b[j] = b[j].copy(), a[i].copy()
    return a, b


def keep_only(prompt: np.ndarray, indices) -> np.ndarray:
    """Retain the listed slot rows, in the order given."""
    prompt = _check_prompt(prompt)
    indices = np.atleast_1d(np.asarray(indices, dtype=int))
    if indices.size == 0:
        raise ValueError("keep_only needs at least one slot index")
    if indices.min() < 0 or indices.max() >= len(prompt):
        raise IndexError(f"indices {indices.tolist()} out of range")
    return prompt[indices].copy()
