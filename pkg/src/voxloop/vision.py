"""Referring-expression voxel segmentation: bootstrap data and a trainable model.

The model is a small 3D convolutional feature extractor over one-hot block
channels plus a frozen hashed bag-of-tokens text encoder with a learned
projection. Per-voxel scores are sigmoid(<voxel feature, text vector>), and
voxels scoring strictly above the threshold (default 0.8) form the mask.
"""
from __future__ import annotations

import json
import random
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .world import AIR, Palette, Pose, Position, VoxelGrid, snapshot_doc, snapshot_from_text, snapshot_to_text

SHAPE_KINDS = (
    "cube",
    "rectanguloid",
    "sphere",
    "pyramid",
    "square",
    "rectangle",
    "circle",
    "triangle",
    "dome",
    "arch",
)

DESCRIPTION_FORMS = 3  # "cube" | "yellow cube" | "the yellow thing"


class DoesNotFit(Exception):
    pass


class PlacementFailed(Exception):
    pass


class NoAbsentKind(Exception):
    pass


class DimMismatch(Exception):
    pass


@dataclass(frozen=True)
class ShapeSpec:
    """A parametric solid shape; `size` meaning depends on the kind.

    cube: (side,); rectanguloid: (sx, sy, sz); sphere/dome/circle: (radius,);
    pyramid/square/triangle: (side,); rectangle: (sx, sz); arch: (width, height).
    """

    kind: str
    size: tuple[int, ...]
    center: Position
    material: int

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if any(s < 1 for s in self.size) and self.kind not in ("sphere", "dome", "circle"):
            raise ValueError(f"{self.kind} size parameters must be >= 1")
        if self.kind in ("sphere", "dome", "circle") and self.size[0] < 0:
            raise ValueError("radius must be >= 0")


def _centered_range(c: int, s: int) -> range:
    lo = c - (s - 1) // 2
    return range(lo, lo + s)


def shape_positions(spec: ShapeSpec) -> frozenset[Position]:
    """Exact voxel set of the shape, independent of any grid."""
    cx, cy, cz = spec.center
    kind = spec.kind
    out: set[Position] = set()
    if kind == "cube":
        (s,) = spec.size
        for x in _centered_range(cx, s):
            for y in _centered_range(cy, s):
                for z in _centered_range(cz, s):
                    out.add((x, y, z))
    elif kind == "rectanguloid":
        sx, sy, sz = spec.size
        for x in _centered_range(cx, sx):
            for y in _centered_range(cy, sy):
                for z in _centered_range(cz, sz):
                    out.add((x, y, z))
    elif kind in ("sphere", "dome"):
        (r,) = spec.size
        for x in range(cx - r, cx + r + 1):
            for y in range(cy - r, cy + r + 1):
                for z in range(cz - r, cz + r + 1):
                    if (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r * r:
                        if kind == "sphere" or y >= cy:
                            out.add((x, y, z))
    elif kind == "pyramid":
        (s,) = spec.size
        level = 0
        while s - 2 * level >= 1:
            side = s - 2 * level
            for x in _centered_range(cx, side):
                for z in _centered_range(cz, side):
                    out.add((x, cy + level, z))
            level += 1
    elif kind == "square":
        (s,) = spec.size
        for x in _centered_range(cx, s):
            for z in _centered_range(cz, s):
                out.add((x, cy, z))
    elif kind == "rectangle":
        sx, sz = spec.size
        for x in _centered_range(cx, sx):
            for z in _centered_range(cz, sz):
                out.add((x, cy, z))
    elif kind == "circle":
        (r,) = spec.size
        for x in range(cx - r, cx + r + 1):
            for z in range(cz - r, cz + r + 1):
                if (x - cx) ** 2 + (z - cz) ** 2 <= r * r:
                    out.add((x, cy, z))
    elif kind == "triangle":
        (s,) = spec.size
        for i in range(s):
            for j in range(s - i):
                out.add((cx + i, cy, cz + j))
    elif kind == "arch":
        w, h = spec.size
        if w < 2 or h < 2:
            raise ValueError("arch needs width >= 2 and height >= 2")
        for j in range(h - 1):
            out.add((cx, cy + j, cz))
            out.add((cx + w - 1, cy + j, cz))
        for i in range(w):
            out.add((cx + i, cy + h - 1, cz))
    return frozenset(out)


def gen_shape(spec: ShapeSpec, dims: Position) -> frozenset[Position]:
    """Shape voxels, verified to fit inside a grid of the given dims."""
    positions = shape_positions(spec)
    w, h, l = dims
    for x, y, z in positions:
        if not (0 <= x < w and 0 <= y < h and 0 <= z < l):
            raise DoesNotFit(f"{spec.kind} at {spec.center} leaves {dims}")
    return positions


# ---------------------------------------------------------------------------
# scene bootstrapping


@dataclass(frozen=True)
class SceneObject:
    mask: frozenset[Position]
    kind: str
    color: str


@dataclass(frozen=True)
class SceneConfig:
    """Bootstrap scene parameters.

    Object colors map to palette ids 1..5 and the ground to 6, so scene grids
    one-hot into 6 channels.
    """

    dims: Position = (10, 8, 10)
    ground_id: int = 6  # orange ground, outside the object color set below
    colors: tuple[str, ...] = ("white", "yellow", "red", "blue", "green")
    kinds: tuple[str, ...] = SHAPE_KINDS
    max_objects: int = 3
    max_attempts: int = 200


_SIZE_RANGES = {
    "cube": lambda rng: (rng.randint(2, 3),),
    "rectanguloid": lambda rng: (rng.randint(2, 3), rng.randint(2, 3), rng.randint(2, 3)),
    "sphere": lambda rng: (rng.randint(1, 2),),
    "pyramid": lambda rng: (rng.choice((3, 5)),),
    "square": lambda rng: (rng.randint(2, 4),),
    "rectangle": lambda rng: (rng.randint(2, 4), rng.randint(2, 4)),
    "circle": lambda rng: (rng.randint(1, 2),),
    "triangle": lambda rng: (rng.randint(3, 4),),
    "dome": lambda rng: (rng.randint(1, 2),),
    "arch": lambda rng: (rng.randint(3, 4), rng.randint(3, 4)),
}


def random_shape_spec(kind: str, material: int, rng: random.Random, dims: Position) -> ShapeSpec:
    size = _SIZE_RANGES[kind](rng)
    w, h, l = dims
    center = (rng.randrange(0, w), rng.randrange(1, max(2, h - 2)), rng.randrange(0, l))
    return ShapeSpec(kind, size, center, material)


def gen_scene(config: SceneConfig, seed: int) -> tuple[VoxelGrid, list[SceneObject]]:
    """Flat-ground world with 1-3 non-overlapping shapes of distinct kind/color."""
    rng = random.Random(seed)
    grid = VoxelGrid(config.dims)
    w, h, l = config.dims
    for x in range(w):
        for z in range(l):
            grid._set((x, 0, z), config.ground_id)
    n = rng.randint(1, config.max_objects)
    kinds = rng.sample(list(config.kinds), n)
    colors = rng.sample(list(config.colors), n)
    objects: list[SceneObject] = []
    taken: set[Position] = set()
    for kind, color in zip(kinds, colors):
        material = grid.palette.id_for_color(color)
        if material is None:
            raise ValueError(f"palette has no color {color!r}")
        for attempt in range(config.max_attempts):
            spec = random_shape_spec(kind, material, rng, config.dims)
            try:
                mask = gen_shape(spec, config.dims)
            except DoesNotFit:
                continue
            if any(y < 1 for _, y, _ in mask) or mask & taken:
                continue
            for pos in mask:
                grid._set(pos, material)
            taken |= mask
            objects.append(SceneObject(mask, kind, color))
            break
        else:
            raise PlacementFailed(f"could not place {kind} after {config.max_attempts} tries")
    return grid, objects


def describe(kind: str, color: str, rng: random.Random | int) -> str:
    """Uniformly one of: the kind, "color kind", or "the color thing"."""
    if isinstance(rng, int):
        rng = random.Random(rng)
    form = rng.randrange(DESCRIPTION_FORMS)
    if form == 0:
        return kind
    if form == 1:
        return f"{color} {kind}"
    return f"the {color} thing"


@dataclass(frozen=True)
class VisionExample:
    grid: VoxelGrid
    text: str
    mask: frozenset[Position]
    tranche_id: int
    agent_pose: Pose = Pose(0, 1, 0)
    player_pose: Pose = Pose(0, 1, 0)

    def __post_init__(self):
        for pos in self.mask:
            if self.grid.is_air(pos):
                raise ValueError(f"mask voxel {pos} is air")


def gen_negative(scene_objects: Sequence[SceneObject], config: SceneConfig, seed: int,
                 grid: VoxelGrid, tranche_id: int = 0) -> VisionExample:
    """Ask about an absent kind/color pair; the truth mask is empty."""
    rng = random.Random(seed)
    absent_kinds = sorted(set(config.kinds) - {o.kind for o in scene_objects})
    absent_colors = sorted(set(config.colors) - {o.color for o in scene_objects})
    if not absent_kinds or not absent_colors:
        raise NoAbsentKind("every kind/color appears in the scene")
    kind = rng.choice(absent_kinds)
    color = rng.choice(absent_colors)
    return VisionExample(grid, describe(kind, color, rng), frozenset(), tranche_id)


def example_to_record(example: VisionExample) -> dict:
    return {
        "world": snapshot_doc(example.grid, example.agent_pose, example.player_pose),
        "text": example.text,
        "mask": sorted(list(p) for p in example.mask),
        "tranche_id": example.tranche_id,
    }


def example_from_record(doc: dict) -> VisionExample:
    grid, agent, player = snapshot_from_text(json.dumps(doc["world"]))
    mask = frozenset(tuple(p) for p in doc["mask"])
    return VisionExample(grid, doc["text"], mask, doc["tranche_id"], agent, player)


def save_examples(path, examples: Iterable[VisionExample]) -> None:
    with open(path, "w") as f:
        for ex in examples:
            f.write(json.dumps(example_to_record(ex), sort_keys=True, separators=(",", ":")) + "\n")


def load_examples(path) -> list[VisionExample]:
    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                out.append(example_from_record(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# the segmentation model


@dataclass(frozen=True)
class SegConfig:
    in_channels: int = 16  # one-hot channels for block ids 1..in_channels
    hidden_dim: int = 8
    layers: int = 2
    kernel: int = 5
    text_dim: int = 64
    threshold: float = 0.8
    positive_weight: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd so padding preserves dims")


@dataclass
class SegModel:
    config: SegConfig
    conv_w: list[np.ndarray]  # each (C_out, C_in, k, k, k)
    conv_b: list[np.ndarray]  # each (C_out,)
    proj: np.ndarray          # (hidden_dim, text_dim)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.conv_w, self.conv_b):
            out.extend((w, b))
        out.append(self.proj)
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "SegModel":
        n = self.config.layers
        conv_w = [params[2 * i] for i in range(n)]
        conv_b = [params[2 * i + 1] for i in range(n)]
        return SegModel(self.config, conv_w, conv_b, params[2 * n])


def init_seg_model(config: SegConfig = SegConfig(), seed: int = 0, zero: bool = False) -> SegModel:
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    k = config.kernel
    conv_w, conv_b = [], []
    c_in = config.in_channels
    for _ in range(config.layers):
        fan_in = c_in * k ** 3
        scale = 0.0 if zero else np.sqrt(2.0 / fan_in)
        conv_w.append((rng.standard_normal((config.hidden_dim, c_in, k, k, k)) * scale).astype(dt))
        conv_b.append(np.zeros(config.hidden_dim, dtype=dt))
        c_in = config.hidden_dim
    scale = 0.0 if zero else 1.0 / np.sqrt(config.text_dim)
    proj = (rng.standard_normal((config.hidden_dim, config.text_dim)) * scale).astype(dt)
    return SegModel(config, conv_w, conv_b, proj)


def token_bag(text: str, dim: int) -> np.ndarray:
    """Frozen text featurizer: tokens hashed into a bag-of-counts vector."""
    from .lf import tokenize

    bag = np.zeros(dim)
    for tok in tokenize(text):
        bag[zlib.crc32(tok.encode("utf-8")) % dim] += 1.0
    return bag


def embed_text(model: SegModel, text: str) -> np.ndarray:
    """Projected, L2-normalized text vector in feature space."""
    bag = token_bag(text, model.config.text_dim).astype(model.proj.dtype)
    v = model.proj @ bag
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else v


def one_hot_grid(grid: VoxelGrid, config: SegConfig) -> np.ndarray:
    """(X, Y, Z, in_channels) one-hot encoding; air is the all-zero vector."""
    w, h, l = grid.dims
    out = np.zeros((w, h, l, config.in_channels), dtype=np.dtype(config.dtype))
    for (x, y, z), block_id in grid.cells.items():
        if not 1 <= block_id <= config.in_channels:
            raise DimMismatch(f"block id {block_id} exceeds {config.in_channels} channels")
        out[x, y, z, block_id - 1] = 1.0
    return out


def _kernel_matrices(w: np.ndarray) -> np.ndarray:
    """(C_out, C_in, k, k, k) -> (k^3, C_in, C_out): one matrix per tap."""
    k = w.shape[2]
    return np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0)).reshape(k ** 3, w.shape[1], w.shape[0])


def _pad_spatial(x: np.ndarray, p: int) -> np.ndarray:
    b, sx, sy, sz, c = x.shape
    xp = np.zeros((b, sx + 2 * p, sy + 2 * p, sz + 2 * p, c), dtype=x.dtype)
    xp[:, p : p + sx, p : p + sy, p : p + sz, :] = x
    return xp


def _correlate(xp: np.ndarray, taps: np.ndarray, kernel: int, out_shape: tuple) -> np.ndarray:
    """Sum of shifted slab-matrix products: out[v] = sum_d x[v+d-p] @ taps[d].

    Channels-last layout keeps each slab product a plain matmul; nothing the
    size of an im2col matrix is ever materialized.
    """
    b, sx, sy, sz, _ = out_shape
    out = np.zeros(out_shape, dtype=xp.dtype)
    idx = 0
    for i in range(kernel):
        for j in range(kernel):
            for k in range(kernel):
                out += xp[:, i : i + sx, j : j + sy, k : k + sz, :] @ taps[idx]
                idx += 1
    return out


def _conv_stack_forward(model: SegModel, x: np.ndarray):
    """Run the conv+ReLU stack on (B, X, Y, Z, C_in); returns (B, N, C), caches."""
    k = model.config.kernel
    p = k // 2
    caches = []
    for w, bias in zip(model.conv_w, model.conv_b):
        bsz, sx, sy, sz, _ = x.shape
        xp = _pad_spatial(x, p)
        z = _correlate(xp, _kernel_matrices(w), k, (bsz, sx, sy, sz, w.shape[0]))
        z += bias
        caches.append((xp, z))
        x = np.maximum(z, 0.0)
    bsz, sx, sy, sz, c = x.shape
    return x.reshape(bsz, sx * sy * sz, c), caches


def _conv_stack_backward(model: SegModel, dfeats: np.ndarray, caches):
    """Gradients for every conv parameter given d(features)."""
    k = model.config.kernel
    p = k // 2
    n_layers = len(model.conv_w)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    _, z_last = caches[-1]
    dx = dfeats.reshape(z_last.shape)
    for layer in reversed(range(n_layers)):
        xp, z = caches[layer]
        w = model.conv_w[layer]
        dz = dx * (z > 0)
        grads_b[layer] = dz.sum(axis=(0, 1, 2, 3))
        bsz, sx, sy, sz, c_out = dz.shape
        dz2 = dz.reshape(-1, c_out)
        taps_grad = np.empty((k ** 3, w.shape[1], c_out), dtype=dz.dtype)
        idx = 0
        for i in range(k):
            for j in range(k):
                for kk in range(k):
                    slab = xp[:, i : i + sx, j : j + sy, kk : kk + sz, :]
                    taps_grad[idx] = slab.reshape(-1, w.shape[1]).T @ dz2
                    idx += 1
        grads_w[layer] = np.ascontiguousarray(
            taps_grad.reshape(k, k, k, w.shape[1], c_out).transpose(4, 3, 0, 1, 2))
        if layer > 0:
            # d(input) is a correlation of dz with spatially flipped,
            # channel-transposed kernels
            taps = _kernel_matrices(w)
            flipped = np.ascontiguousarray(
                taps.reshape(k, k, k, w.shape[1], c_out)[::-1, ::-1, ::-1]
                .reshape(k ** 3, w.shape[1], c_out)
                .transpose(0, 2, 1))
            dzp = _pad_spatial(dz, p)
            dx = _correlate(dzp, flipped, k,
                            (bsz, sx, sy, sz, w.shape[1]))
    return grads_w, grads_b


def _text_vectors(model: SegModel, bags: np.ndarray):
    """Normalized text vectors (B, C) plus pieces needed for the backward pass."""
    v = bags @ model.proj.T  # (B, C)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    u = v / safe
    return u, norms, safe


def batch_loss_and_grads(model: SegModel, onehots: np.ndarray, bags: np.ndarray,
                         masks: np.ndarray, chunk: int = 32, compute_grads: bool = True):
    """Mean BCE over all voxels of all examples, with gradients for every parameter.

    Computed in example chunks to bound the working set. With
    compute_grads=False only the loss is returned (grads slot is None).
    """
    total = onehots.shape[0] * onehots.shape[1] * onehots.shape[2] * onehots.shape[3]
    pw = model.config.positive_weight
    loss = 0.0
    grads = [np.zeros_like(p) for p in model.params()] if compute_grads else None
    n_layers = model.config.layers
    for start in range(0, onehots.shape[0], chunk):
        x = onehots[start : start + chunk]
        y = masks[start : start + chunk]
        bag = bags[start : start + chunk]
        u, norms, safe = _text_vectors(model, bag)
        feats, caches = _conv_stack_forward(model, x)
        scores = np.einsum("bnc,bc->bn", feats, u)
        # log(1 + e^-|s|) + max(s, 0) keeps the BCE numerically stable
        softplus = np.logaddexp(0.0, -np.abs(scores))
        loss += float(np.sum(pw * y * (softplus + np.maximum(-scores, 0.0))
                             + (1.0 - y) * (softplus + np.maximum(scores, 0.0))))
        if not compute_grads:
            continue
        sig = 1.0 / (1.0 + np.exp(-scores))
        dscores = ((1.0 - y) * sig - pw * y * (1.0 - sig)) / total
        dfeats = dscores[:, :, None] * u[:, None, :]
        du = np.einsum("bnc,bn->bc", feats, dscores)
        # back through the L2 normalization
        dv = (du - u * np.sum(u * du, axis=1, keepdims=True)) / safe
        dv = np.where(norms > 0, dv, 0.0)
        grads[2 * n_layers] += dv.T @ bag
        gw, gb = _conv_stack_backward(model, dfeats, caches)
        for i in range(n_layers):
            grads[2 * i] += gw[i]
            grads[2 * i + 1] += gb[i]
    return loss / total, grads


def forward(model: SegModel, grid: VoxelGrid, text: str) -> np.ndarray:
    """Per-voxel probabilities, shape (X, Y, Z) matching grid.dims."""
    x = one_hot_grid(grid, model.config)[None]
    feats, _ = _conv_stack_forward(model, x)
    u = embed_text(model, text)
    scores = feats[0] @ u
    probs = 1.0 / (1.0 + np.exp(-scores))
    return probs.reshape(grid.dims)


def predict_mask(model: SegModel, grid: VoxelGrid, text: str) -> frozenset[Position]:
    """Voxels scoring strictly above the threshold."""
    probs = forward(model, grid, text)
    xs, ys, zs = np.nonzero(probs > model.config.threshold)
    return frozenset((int(x), int(y), int(z)) for x, y, z in zip(xs, ys, zs))


def _batch_arrays(model: SegModel, examples: Sequence[VisionExample]):
    dims = examples[0].grid.dims
    for ex in examples:
        if ex.grid.dims != dims:
            raise DimMismatch(f"mixed grid dims {ex.grid.dims} vs {dims}")
    dt = np.dtype(model.config.dtype)
    onehots = np.stack([one_hot_grid(ex.grid, model.config) for ex in examples])
    bags = np.stack([token_bag(ex.text, model.config.text_dim) for ex in examples]).astype(dt)
    n = dims[0] * dims[1] * dims[2]
    masks = np.zeros((len(examples), n), dtype=dt)
    for i, ex in enumerate(examples):
        for (x, y, z) in ex.mask:
            masks[i, (x * dims[1] + y) * dims[2] + z] = 1.0
    return onehots, bags, masks


def train_seg(model: SegModel, examples: Sequence[VisionExample], epochs: int, lr: float,
              loss_history: Optional[list] = None, max_halvings: int = 30) -> SegModel:
    """Full-batch gradient descent on per-voxel BCE with step-halving safeguards.

    A step that would increase the loss is retried with half the rate, so the
    recorded loss curve is non-increasing. Training on no examples is a no-op.
    """
    if epochs <= 0 or not examples:
        return model
    for ex in examples:
        problem = _example_violations(ex)
        if problem:
            raise ValueError(f"bad example: {problem}")
    onehots, bags, masks = _batch_arrays(model, examples)
    current = model.with_params([p.copy() for p in model.params()])
    loss, grads = batch_loss_and_grads(current, onehots, bags, masks)
    if loss_history is not None:
        loss_history.append(loss)
    step = lr
    for _ in range(epochs):
        accepted = False
        for _ in range(max_halvings):
            trial = current.with_params(
                [p - step * g for p, g in zip(current.params(), grads)]
            )
            new_loss, new_grads = batch_loss_and_grads(trial, onehots, bags, masks)
            if new_loss <= loss + 1e-12:
                current, loss, grads = trial, new_loss, new_grads
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        if loss_history is not None:
            loss_history.append(loss)
    return current


def _example_violations(ex: VisionExample) -> str:
    for pos in ex.mask:
        if not ex.grid.in_bounds(pos):
            return f"mask voxel {pos} out of bounds"
    return ""


def iou(a: frozenset[Position] | set, b: frozenset[Position] | set) -> float:
    """Intersection over union; two empty masks count as 1.0."""
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union


def vision_accuracy(model: SegModel, examples: Sequence[VisionExample]) -> float:
    """Fraction correct: IoU >= 0.5 for positives, empty prediction for negatives."""
    if not examples:
        return 1.0
    hits = 0
    for ex in examples:
        predicted = predict_mask(model, ex.grid, ex.text)
        if ex.mask:
            hits += iou(predicted, ex.mask) >= 0.5
        else:
            hits += not predicted
    return hits / len(examples)


# model persistence: a directory of .npy arrays plus a manifest (the .npy
# format carries no timestamps, so saved bytes are reproducible)


def save_seg_model(model: SegModel, directory) -> None:
    import os

    os.makedirs(directory, exist_ok=True)
    manifest = {
        "config": {
            "in_channels": model.config.in_channels,
            "hidden_dim": model.config.hidden_dim,
            "layers": model.config.layers,
            "kernel": model.config.kernel,
            "text_dim": model.config.text_dim,
            "threshold": model.config.threshold,
            "positive_weight": model.config.positive_weight,
            "dtype": model.config.dtype,
        }
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
    for i, (w, b) in enumerate(zip(model.conv_w, model.conv_b)):
        np.save(os.path.join(directory, f"conv{i}_w.npy"), w)
        np.save(os.path.join(directory, f"conv{i}_b.npy"), b)
    np.save(os.path.join(directory, "proj.npy"), model.proj)


def load_seg_model(directory) -> SegModel:
    import os

    with open(os.path.join(directory, "manifest.json")) as f:
        config = SegConfig(**json.load(f)["config"])
    conv_w, conv_b = [], []
    for i in range(config.layers):
        conv_w.append(np.load(os.path.join(directory, f"conv{i}_w.npy")))
        conv_b.append(np.load(os.path.join(directory, f"conv{i}_b.npy")))
    proj = np.load(os.path.join(directory, "proj.npy"))
    return SegModel(config, conv_w, conv_b, proj)
