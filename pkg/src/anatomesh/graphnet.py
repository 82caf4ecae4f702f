"""Graph residual network over the mesh: forward, backprop, training, voting.

Each graph convolution is h'_p = W0^T h_p + sum_{p' in N(p)} W1^T h_{p'} + b
with W1 shared across edges. Six layers, identity shortcuts after every
second layer (applied when the widths match), ReLU after every layer except
the last. Two heads: a per-vertex softmax classifier and a global classifier
over the concatenation of 4 region-pooled vectors and all vertex embeddings.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .mesh import AnatomyMesh, region_ranges
from .volume import LabelVolume

__all__ = [
    "GraphTopology",
    "GraphResNetParams",
    "TrainConfig",
    "GraphNetError",
    "init_params",
    "graph_conv",
    "forward",
    "loss",
    "backward",
    "train",
    "classify_pv",
    "classify_vv",
    "classify_gc",
    "select_pv_threshold",
    "save_params",
    "load_params",
]

PROB_CLAMP = 1e-7


class GraphNetError(RuntimeError):
    """Shape mismatch or numerical failure in the graph network."""


class GraphTopology:
    """Symmetric adjacency over the mesh vertices (no self-loops)."""

    def __init__(self, adjacency: np.ndarray):
        a = np.asarray(adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphNetError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise GraphNetError("adjacency must be symmetric")
        if np.diagonal(a).any():
            raise GraphNetError("adjacency must have no self-loops")
        self.adjacency = a

    @classmethod
    def from_mesh(cls, mesh: AnatomyMesh) -> "GraphTopology":
        a = np.zeros((mesh.n_vertices, mesh.n_vertices))
        a[mesh.edges[:, 0], mesh.edges[:, 1]] = 1.0
        a[mesh.edges[:, 1], mesh.edges[:, 0]] = 1.0
        return cls(a)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class GraphResNetParams:
    """Conv layer weights plus vertex and global classification heads."""

    conv_w0: list[np.ndarray]
    conv_w1: list[np.ndarray]
    conv_b: list[np.ndarray]
    vertex_w: np.ndarray
    vertex_b: np.ndarray
    global_w: np.ndarray
    global_b: np.ndarray
    region_counts: tuple[int, ...]
    seed: int = 0
    # fixed input standardization (not trained); identity by default
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None

    @property
    def n_layers(self) -> int:
        return len(self.conv_w0)

    @property
    def widths(self) -> list[int]:
        return [self.conv_w0[0].shape[0]] + [w.shape[1] for w in self.conv_w0]

    @property
    def k_vertex(self) -> int:
        return self.vertex_w.shape[1]

    @property
    def k_global(self) -> int:
        return self.global_w.shape[1]

    def tensors(self) -> list[np.ndarray]:
        """All parameter arrays in checkpoint order."""
        out = []
        for w0, w1, b in zip(self.conv_w0, self.conv_w1, self.conv_b):
            out += [w0, w1, b]
        out += [self.vertex_w, self.vertex_b, self.global_w, self.global_b]
        return out

    def copy(self) -> "GraphResNetParams":
        return copy.deepcopy(self)


@dataclass
class TrainConfig:
    eta1: float = 0.1
    eta2: float = 0.1
    learning_rate: float = 1e-4
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("loss weights must be non-negative")


def _glorot(
    rng: np.random.Generator, fan_in: int, fan_out: int, eff_fan_in: float | None = None
) -> np.ndarray:
    limit = np.sqrt(6.0 / ((eff_fan_in or fan_in) + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(
    input_width: int,
    k_vertex: int,
    k_global: int,
    n_nodes: int,
    width: int = 64,
    n_layers: int = 6,
    region_counts: tuple[int, ...] | None = None,
    seed: int = 0,
    mean_degree: float = 6.0,
) -> GraphResNetParams:
    from .mesh import REGION_COUNTS

    region_counts = region_counts or REGION_COUNTS
    rng = np.random.default_rng(seed)
    w0s, w1s, bs = [], [], []
    w_in = input_width
    for _ in range(n_layers):
        w0s.append(_glorot(rng, w_in, width))
        # neighbor features are correlated, so the sum over N(p) scales the
        # effective fan-in of W1 by degree squared
        w1s.append(_glorot(rng, w_in, width, eff_fan_in=w_in * max(mean_degree, 1.0) ** 2))
        bs.append(np.zeros(width))
        w_in = width
    vertex_w = _glorot(rng, width, k_vertex)
    hvp_len = (len(region_counts) + n_nodes) * width
    global_w = _glorot(rng, hvp_len, k_global)
    return GraphResNetParams(
        conv_w0=w0s,
        conv_w1=w1s,
        conv_b=bs,
        vertex_w=vertex_w,
        vertex_b=np.zeros(k_vertex),
        global_w=global_w,
        global_b=np.zeros(k_global),
        region_counts=tuple(region_counts),
        seed=seed,
    )


def graph_conv(
    h: np.ndarray,
    w0: np.ndarray,
    w1: np.ndarray,
    topo: GraphTopology,
    bias: np.ndarray | None = None,
    activate: bool = True,
) -> np.ndarray:
    """One graph convolution layer, optionally ReLU-rectified."""
    if h.shape[1] != w0.shape[0]:
        raise GraphNetError(
            f"feature width {h.shape[1]} does not match weight fan-in {w0.shape[0]}"
        )
    z = h @ w0 + topo.adjacency @ h @ w1
    if bias is not None:
        z = z + bias
    return np.maximum(z, 0.0) if activate else z


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _region_pool(h: np.ndarray, region_counts: tuple[int, ...]) -> np.ndarray:
    return np.stack(
        [h[a:b].mean(axis=0) for a, b in region_ranges(region_counts)]
    )


def _forward_cache(
    params: GraphResNetParams, feats: np.ndarray, topo: GraphTopology
) -> dict:
    if feats.shape[1] != params.conv_w0[0].shape[0]:
        raise GraphNetError(
            f"feature width {feats.shape[1]} does not match network input "
            f"width {params.conv_w0[0].shape[0]}"
        )
    n_layers = params.n_layers
    h = np.asarray(feats, dtype=np.float64)
    if params.input_mean is not None:
        h = (h - params.input_mean) / params.input_std
    inputs, preacts, shortcuts = [], [], []
    saved = None
    for layer in range(n_layers):
        if layer % 2 == 0:
            saved = h
        inputs.append(h)
        z = h @ params.conv_w0[layer] + topo.adjacency @ h @ params.conv_w1[layer]
        z = z + params.conv_b[layer]
        added = layer % 2 == 1 and saved.shape == z.shape
        if added:
            z = z + saved
        shortcuts.append(added)
        preacts.append(z)
        h = np.maximum(z, 0.0) if layer < n_layers - 1 else z
    if not np.isfinite(h).all():
        raise GraphNetError("non-finite activations in forward pass")
    vertex_logits = h @ params.vertex_w + params.vertex_b
    pooled = _region_pool(h, params.region_counts)
    hvp = np.concatenate([pooled.ravel(), h.ravel()])
    global_logits = hvp @ params.global_w + params.global_b
    return {
        "inputs": inputs,
        "preacts": preacts,
        "shortcuts": shortcuts,
        "final": h,
        "hvp": hvp,
        "vertex_probs": _softmax(vertex_logits),
        "global_probs": _softmax(global_logits),
    }


def forward(
    params: GraphResNetParams, feats: np.ndarray, topo: GraphTopology
) -> tuple[np.ndarray, np.ndarray]:
    """Vertex softmax probabilities (V, K_v) and global probabilities (K_g,)."""
    cache = _forward_cache(params, feats, topo)
    return cache["vertex_probs"], cache["global_probs"]


def _check_one_hot(t: np.ndarray, name: str) -> None:
    if not (np.isin(t, (0, 1)).all() and (t.sum(axis=-1) == 1).all()):
        raise GraphNetError(f"{name} targets must be one-hot")


def loss(
    vertex_probs: np.ndarray,
    global_probs: np.ndarray,
    vertex_targets: np.ndarray,
    global_target: np.ndarray,
    eta1: float = 0.1,
    eta2: float = 0.1,
) -> float:
    """eta1 * summed per-vertex cross-entropy + eta2 * global cross-entropy."""
    _check_one_hot(vertex_targets, "vertex")
    _check_one_hot(np.atleast_2d(global_target), "global")
    vp = np.clip(vertex_probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    gp = np.clip(global_probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    l_vertex = -float((vertex_targets * np.log(vp)).sum())
    l_global = -float((global_target * np.log(gp)).sum())
    return eta1 * l_vertex + eta2 * l_global


def backward(
    params: GraphResNetParams,
    feats: np.ndarray,
    topo: GraphTopology,
    vertex_targets: np.ndarray,
    global_target: np.ndarray,
    eta1: float = 0.1,
    eta2: float = 0.1,
) -> tuple[float, GraphResNetParams]:
    """Loss value and its gradient, as a params-shaped structure."""
    cache = _forward_cache(params, feats, topo)
    value = loss(
        cache["vertex_probs"], cache["global_probs"],
        vertex_targets, global_target, eta1, eta2,
    )
    n_layers = params.n_layers
    a = topo.adjacency
    h = cache["final"]
    n_nodes, width = h.shape

    d_vlogits = eta1 * (cache["vertex_probs"] - vertex_targets)
    d_glogits = eta2 * (cache["global_probs"] - global_target)

    g_vertex_w = h.T @ d_vlogits
    g_vertex_b = d_vlogits.sum(axis=0)
    g_global_w = np.outer(cache["hvp"], d_glogits)
    g_global_b = d_glogits.copy()

    d_hvp = params.global_w @ d_glogits
    n_regions = len(params.region_counts)
    d_pool = d_hvp[: n_regions * width].reshape(n_regions, width)
    d_h = d_hvp[n_regions * width :].reshape(n_nodes, width).copy()
    d_h += d_vlogits @ params.vertex_w.T
    for r, (ra, rb) in enumerate(region_ranges(params.region_counts)):
        d_h[ra:rb] += d_pool[r] / (rb - ra)

    g_w0 = [None] * n_layers
    g_w1 = [None] * n_layers
    g_b = [None] * n_layers
    d_saved = None
    for layer in reversed(range(n_layers)):
        z = cache["preacts"][layer]
        dz = d_h if layer == n_layers - 1 else d_h * (z > 0.0)
        h_in = cache["inputs"][layer]
        g_w0[layer] = h_in.T @ dz
        g_w1[layer] = (a @ h_in).T @ dz
        g_b[layer] = dz.sum(axis=0)
        d_h = dz @ params.conv_w0[layer].T + a @ (dz @ params.conv_w1[layer].T)
        if layer % 2 == 1 and cache["shortcuts"][layer]:
            d_saved = dz
        if layer % 2 == 0 and d_saved is not None:
            d_h = d_h + d_saved
            d_saved = None
    grads = GraphResNetParams(
        conv_w0=g_w0,
        conv_w1=g_w1,
        conv_b=g_b,
        vertex_w=g_vertex_w,
        vertex_b=g_vertex_b,
        global_w=g_global_w,
        global_b=g_global_b,
        region_counts=params.region_counts,
        seed=params.seed,
    )
    for t in grads.tensors():
        if not np.isfinite(t).all():
            raise GraphNetError("non-finite gradient")
    return value, grads


def _one_hot(idx: np.ndarray | int, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(idx)]


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    val_acc: list[float | None] = field(default_factory=list)

    def to_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("epoch,train_loss,val_loss,val_acc\n")
            for e, tl, vl, va in zip(
                self.epochs, self.train_loss, self.val_loss, self.val_acc
            ):
                vls = "" if vl is None else f"{vl:.9g}"
                vas = "" if va is None else f"{va:.9g}"
                f.write(f"{e},{tl:.9g},{vls},{vas}\n")


def train(
    dataset: list[tuple[np.ndarray, np.ndarray, int]],
    topo: GraphTopology,
    cfg: TrainConfig,
    params: GraphResNetParams | None = None,
    validation: list[tuple[np.ndarray, np.ndarray, int]] | None = None,
    width: int = 64,
    region_counts: tuple[int, ...] | None = None,
) -> tuple[GraphResNetParams, TrainLog]:
    """Momentum gradient descent over (features, vertex labels, global label) cases.

    Deterministic given the config seed. With a validation split, returns the
    parameters of the best validation-accuracy epoch.
    """
    if not dataset:
        raise GraphNetError("empty training dataset")
    feats0, _, _ = dataset[0]
    k_vertex = int(max(vt.max() for _, vt, _ in dataset)) + 1
    k_global = int(max(g for _, _, g in dataset)) + 1
    if validation:
        k_vertex = max(k_vertex, int(max(vt.max() for _, vt, _ in validation)) + 1)
        k_global = max(k_global, int(max(g for _, _, g in validation)) + 1)
    if params is None:
        deg = topo.adjacency.sum() / topo.n_nodes
        params = init_params(
            feats0.shape[1], k_vertex, k_global, topo.n_nodes,
            width=width, region_counts=region_counts, seed=cfg.seed, mean_degree=deg,
        )
        stacked = np.concatenate([f for f, _, _ in dataset])
        params.input_mean = stacked.mean(axis=0)
        params.input_std = np.maximum(stacked.std(axis=0), 1e-8)
    params = params.copy()
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(t) for t in params.tensors()]
    log = TrainLog()
    best_acc, best_params = -1.0, params.copy()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc_grads = None
            for i in batch:
                feats, vt, gt = dataset[i]
                value, grads = backward(
                    params, feats, topo,
                    _one_hot(vt, params.k_vertex), _one_hot(gt, params.k_global),
                    cfg.eta1, cfg.eta2,
                )
                if not np.isfinite(value):
                    raise GraphNetError(f"divergence at epoch {epoch}")
                total += value
                gts = grads.tensors()
                if acc_grads is None:
                    acc_grads = gts
                else:
                    acc_grads = [agrad + g for agrad, g in zip(acc_grads, gts)]
            tensors = params.tensors()
            for v, t, g in zip(velocity, tensors, acc_grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * (g / len(batch))
                t += v
        mean_loss = total / len(dataset)
        vl = va = None
        if validation:
            vl, va = _evaluate(params, topo, validation, cfg)
            if va > best_acc:
                best_acc, best_params = va, params.copy()
        log.epochs.append(epoch)
        log.train_loss.append(mean_loss)
        log.val_loss.append(vl)
        log.val_acc.append(va)
    if validation:
        return best_params, log
    return params, log


def _evaluate(params, topo, cases, cfg) -> tuple[float, float]:
    total, correct = 0.0, 0
    for feats, vt, gt in cases:
        vp, gp = forward(params, feats, topo)
        total += loss(
            vp, gp, _one_hot(vt, params.k_vertex), _one_hot(gt, params.k_global),
            cfg.eta1, cfg.eta2,
        )
        if classify_gc(gp) - 1 == gt:
            correct += 1
    return total / len(cases), correct / len(cases)


def classify_pv(
    pred_labels: LabelVolume,
    classes: set[int],
    threshold: int,
    default: int,
) -> int:
    """Pixel voting: the mass label with the most voxels, if at least ``threshold``.

    Ties go to the lower class id; below threshold returns ``default``.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    counts = np.bincount(pred_labels.data.ravel())
    best_label, best_count = None, -1
    for c in sorted(classes):
        n = int(counts[c]) if c < len(counts) else 0
        if n > best_count:
            best_label, best_count = c, n
    if best_label is None or best_count < max(threshold, 1):
        return default
    return best_label


def select_pv_threshold(
    volumes: list[LabelVolume],
    truths: list[int],
    classes: set[int],
    default: int,
    candidates: list[int],
) -> int:
    """Pick the voxel-count threshold maximizing accuracy on a validation split."""
    best_t, best_acc = candidates[0], -1.0
    for t in candidates:
        acc = np.mean(
            [classify_pv(v, classes, t, default) == y for v, y in zip(volumes, truths)]
        )
        if acc > best_acc:
            best_t, best_acc = t, float(acc)
    return best_t


def classify_vv(vertex_probs: np.ndarray, mass_classes: set[int], default: int) -> int:
    """Vertex voting: majority argmax class among mass-voting vertices."""
    votes = vertex_probs.argmax(axis=1)
    mass_votes = votes[np.isin(votes, list(mass_classes))]
    if mass_votes.size == 0:
        return default
    counts = np.bincount(mass_votes)
    return int(counts.argmax())  # argmax takes the first (lowest) on ties


def classify_gc(global_probs: np.ndarray) -> int:
    """Global classification: 1-based argmax, ties to the lower class id."""
    return int(np.asarray(global_probs).argmax()) + 1


def save_params(params: GraphResNetParams, path: str) -> None:
    """Checkpoint: text header plus little-endian f64 payload in tensor order."""
    widths = params.widths
    with open(path, "wb") as f:
        header = (
            f"layers {params.n_layers}\n"
            f"widths {' '.join(str(w) for w in widths)}\n"
            f"k_vertex {params.k_vertex}\n"
            f"k_global {params.k_global}\n"
            f"regions {' '.join(str(c) for c in params.region_counts)}\n"
            f"seed {params.seed}\n"
        )
        if params.input_mean is not None:
            header += (
                f"input_mean {' '.join(f'{v:.17g}' for v in params.input_mean)}\n"
                f"input_std {' '.join(f'{v:.17g}' for v in params.input_std)}\n"
            )
        header += "end\n"
        f.write(header.encode())
        for t in params.tensors():
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_params(path: str) -> GraphResNetParams:
    with open(path, "rb") as f:
        fields = {}
        while True:
            line = b""
            while not line.endswith(b"\n"):
                c = f.read(1)
                if not c:
                    raise GraphNetError(f"{path}: truncated header")
                line += c
            parts = line.decode().split()
            if parts[0] == "end":
                break
            fields[parts[0]] = parts[1:]
        payload = np.frombuffer(f.read(), dtype="<f8")
    n_layers = int(fields["layers"][0])
    widths = [int(w) for w in fields["widths"]]
    k_vertex = int(fields["k_vertex"][0])
    k_global = int(fields["k_global"][0])
    region_counts = tuple(int(c) for c in fields["regions"])
    seed = int(fields["seed"][0])
    shapes = []
    for layer in range(n_layers):
        w_in, w_out = widths[layer], widths[layer + 1]
        shapes += [(w_in, w_out), (w_in, w_out), (w_out,)]
    width = widths[-1]
    shapes += [(width, k_vertex), (k_vertex,)]
    used = sum(int(np.prod(s)) for s in shapes)
    hvp_len = (len(payload) - used - k_global) // k_global
    shapes += [(hvp_len, k_global), (k_global,)]
    tensors = []
    pos = 0
    for s in shapes:
        n = int(np.prod(s))
        tensors.append(payload[pos : pos + n].reshape(s).copy())
        pos += n
    if pos != len(payload):
        raise GraphNetError(f"{path}: payload size mismatch")
    conv_w0 = [tensors[3 * i] for i in range(n_layers)]
    conv_w1 = [tensors[3 * i + 1] for i in range(n_layers)]
    conv_b = [tensors[3 * i + 2] for i in range(n_layers)]
    mean = std = None
    if "input_mean" in fields:
        mean = np.array([float(v) for v in fields["input_mean"]])
        std = np.array([float(v) for v in fields["input_std"]])
    return GraphResNetParams(
        conv_w0, conv_w1, conv_b,
        tensors[3 * n_layers], tensors[3 * n_layers + 1],
        tensors[3 * n_layers + 2], tensors[3 * n_layers + 3],
        region_counts, seed, mean, std,
    )
