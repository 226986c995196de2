"""Property-prediction probes on frozen slots.

Slots are paired with ground-truth objects by Hungarian matching on mask
cosine similarity (the same recipe the segmentation metrics use), then a
small head is fit per property: a linear classifier for discrete values,
a 2-layer MLP regressor for continuous ones. The encoder is never updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SHAPE_NAMES, images_to_input
from .encoder import attention_masks, upsample_label_map
from .metrics import hungarian_match
from .nn import Linear, Module
from .optim import Adam
from .tensor import Tensor, cross_entropy, mse, no_grad, relu

PROBE_STEPS = 2000
PROBE_LR = 1e-3


@dataclass
class ProbeReport:
    property_name: str
    kind: str               # "discrete" or "continuous"
    metric: str             # "accuracy" or "mse"
    value: float
    matching: str = "hungarian-cosine"
    train_count: int = 0
    eval_count: int = 0
    degenerate: bool = False
    absent_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "property": self.property_name, "kind": self.kind,
            "metric": self.metric, "value": self.value,
            "matching": self.matching, "train_count": self.train_count,
            "eval_count": self.eval_count, "degenerate": self.degenerate,
            "absent_classes": self.absent_classes,
        }


@dataclass
class ProbeData:
    """Slot-object pairs pooled over a dataset."""
    slots: np.ndarray      # [M, D]
    shape_id: np.ndarray   # [M] int
    color_id: np.ndarray   # [M] int
    position: np.ndarray   # [M, 2] float in [0, 1]
    scale: np.ndarray      # [M, 1] float

    def __len__(self) -> int:
        return len(self.slots)


def match_slots_to_objects(pred_labels: np.ndarray,
                           true_labels: np.ndarray) -> list[tuple[int, int]]:
    """Pair slot indices with object indices via mask cosine similarity.

    pred_labels holds slot ids per pixel, true_labels the dataset label
    map (0 = background). Background participates in the matching so it
    can absorb one slot, but only (slot, object) pairs are returned with
    the object index 0-based into the sample's object list.
    """
    pred = np.asarray(pred_labels).ravel()
    true = np.asarray(true_labels).ravel()
    if pred.shape != true.shape:
        raise ValueError("label maps must have the same size")
    slot_ids = np.unique(pred)
    true_ids = np.unique(true)
    cosine = np.zeros((len(slot_ids), len(true_ids)))
    for i, s in enumerate(slot_ids):
        pm = pred == s
        for j, t in enumerate(true_ids):
            tm = true == t
            denom = np.sqrt(float(pm.sum()) * tm.sum())
            cosine[i, j] = (pm & tm).sum() / denom if denom else 0.0
    rows, cols, _ = hungarian_match(-cosine)
    pairs = []
    for r, c in zip(rows, cols):
        if true_ids[c] > 0:
            pairs.append((int(slot_ids[r]), int(true_ids[c]) - 1))
    return pairs


def collect_probe_data(encoder, images_u8: np.ndarray, samples,
                       rng: np.random.Generator, batch: int = 64) -> ProbeData:
    """Encode a dataset and pool matched (slot, object-attribute) pairs."""
    if len(images_u8) != len(samples):
        raise ValueError("need one sample record per image")
    factor = encoder.cfg.patch_size
    slots_out, shapes, colors, xy, scales = [], [], [], [], []
    with no_grad():
        for lo in range(0, len(images_u8), batch):
            chunk = images_to_input(images_u8[lo:lo + batch])
            result = encoder.encode(chunk, rng)
            labels = attention_masks(result.attention.data, result.grid)
            labels = upsample_label_map(labels, factor)
            for b in range(len(chunk)):
                sample = samples[lo + b]
                pairs = match_slots_to_objects(labels[b], sample.label_map)
                for slot_i, obj_i in pairs:
                    obj = sample.objects[obj_i]
                    slots_out.append(result.slots.data[b, slot_i])
                    shapes.append(SHAPE_NAMES.index(obj.shape))
                    colors.append(obj.color)
                    xy.append((obj.x, obj.y))
                    scales.append((obj.scale,))
    if not slots_out:
        raise ValueError("no slot-object pairs were matched")
    return ProbeData(np.stack(slots_out), np.array(shapes), np.array(colors),
                     np.array(xy, dtype=np.float64),
                     np.array(scales, dtype=np.float64))


class MLPProbe(Module):
    def __init__(self, d_in: int, d_out: int, hidden: int,
                 rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, d_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


def _fit(model: Module, slots: np.ndarray, loss_of, steps: int, lr: float,
         batch: int, rng: np.random.Generator) -> None:
    opt = Adam(model.parameters(), lr=lr)
    n = len(slots)
    for _ in range(steps):
        idx = rng.integers(0, n, size=batch) if n > batch else np.arange(n)
        loss = loss_of(model, idx)
        opt.zero_grad()
        loss.backward()
        opt.step()


def train_probe(slots: np.ndarray, targets: np.ndarray, kind: str,
                rng: np.random.Generator, property_name: str = "property",
                steps: int = PROBE_STEPS, lr: float = PROBE_LR,
                hidden: int = 64, eval_fraction: float = 0.2,
                batch: int = 512) -> ProbeReport:
    """Fit one probe and report accuracy (discrete) or MSE (continuous)."""
    if kind not in ("discrete", "continuous"):
        raise ValueError(f"kind must be discrete or continuous, got {kind!r}")
    slots = np.asarray(slots, dtype=np.float32)
    if slots.ndim != 2 or len(slots) != len(targets):
        raise ValueError("slots must be [M, D] with one target per row")
    if len(slots) < 5:
        raise ValueError(f"too few pairs ({len(slots)}) to fit a probe")

    perm = rng.permutation(len(slots))
    n_eval = max(1, int(round(eval_fraction * len(slots))))
    eval_idx, train_idx = perm[:n_eval], perm[n_eval:]
    x_train, x_eval = slots[train_idx], slots[eval_idx]

    if kind == "discrete":
        targets = np.asarray(targets, dtype=np.int64)
        y_train, y_eval = targets[train_idx], targets[eval_idx]
        n_classes = int(targets.max()) + 1
        degenerate = len(np.unique(y_train)) == 1
        absent = sorted(set(np.unique(y_eval)) - set(np.unique(y_train)))
        model = Linear(slots.shape[1], n_classes, rng)

        def loss_of(m, idx):
            return cross_entropy(m(Tensor(x_train[idx])), y_train[idx])

        _fit(model, x_train, loss_of, steps, lr, batch, rng)
        with no_grad():
            pred = model(Tensor(x_eval)).data.argmax(axis=1)
        value = float((pred == y_eval).mean())
        return ProbeReport(property_name, kind, "accuracy", value,
                           train_count=len(train_idx),
                           eval_count=len(eval_idx), degenerate=degenerate,
                           absent_classes=[int(a) for a in absent])

    targets = np.asarray(targets, dtype=np.float32)
    if targets.ndim == 1:
        targets = targets[:, None]
    y_train, y_eval = targets[train_idx], targets[eval_idx]
    degenerate = bool(np.all(y_train == y_train[0]))
    model = MLPProbe(slots.shape[1], targets.shape[1], hidden, rng)

    def loss_of(m, idx):
        return mse(m(Tensor(x_train[idx])), Tensor(y_train[idx]))

    _fit(model, x_train, loss_of, steps, lr, batch, rng)
    with no_grad():
        pred = model(Tensor(x_eval)).data
    value = float(np.mean((pred - y_eval) ** 2))
    return ProbeReport(property_name, kind, "mse", value,
                       train_count=len(train_idx), eval_count=len(eval_idx),
                       degenerate=degenerate)


def probe_suite(encoder, images_u8: np.ndarray, samples,
                rng: np.random.Generator,
                steps: int = PROBE_STEPS) -> dict[str, ProbeReport]:
    """Shape/color/position/scale probes on one dataset."""
    data = collect_probe_data(encoder, images_u8, samples, rng)
    return {
        "shape": train_probe(data.slots, data.shape_id, "discrete", rng,
                             "shape", steps=steps),
        "color": train_probe(data.slots, data.color_id, "discrete", rng,
                             "color", steps=steps),
        "position": train_probe(data.slots, data.position, "continuous", rng,
                                "position", steps=steps),
        "scale": train_probe(data.slots, data.scale, "continuous", rng,
                             "scale", steps=steps),
    }
