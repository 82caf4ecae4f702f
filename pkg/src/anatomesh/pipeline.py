"""Pipeline stages over a work directory; each stage reads the previous one's files."""

from __future__ import annotations

import os

import numpy as np

from . import __version__
from .config import RunConfig
from .evaluate import binary_metrics, detection_table, management_report
from .features import load_features, pool_features, save_features
from .graphnet import (
    GraphTopology,
    TrainConfig,
    classify_gc,
    classify_pv,
    classify_vv,
    forward,
    load_params,
    save_params,
    train,
)
from .mesh import load_mesh, save_mesh
from .meshfit import FitConfig, fit_mesh
from .prototype import assign_regions, build_prototype, mean_shape
from .synth import (
    BLOB_LABEL,
    MANAGEMENT_BY_CLASS,
    ORGAN_LABEL,
    TUBE_LABEL,
    SynthConfig,
    gen_dataset,
    load_case,
    save_case,
)
from .volume import LabelVolume, load_volume, save_volume
from .zones import render_zones, vertex_labels

__all__ = [
    "stage_synth",
    "stage_prototype",
    "stage_fit",
    "stage_zones",
    "stage_features",
    "stage_train",
    "stage_classify",
    "stage_eval",
    "run_pipeline",
    "write_manifest",
]

# mass voxel label -> case class for pixel/vertex voting
LABEL_TO_CLASS = {BLOB_LABEL: 2, TUBE_LABEL: 4}
DEFAULT_CLASS = 1
MASS_LABELS = {BLOB_LABEL, TUBE_LABEL}


def _case_dirs(out_dir: str, split: str) -> list[str]:
    root = os.path.join(out_dir, "cases")
    return sorted(
        os.path.join(root, d) for d in os.listdir(root) if d.startswith(split)
    )


def _fit_config(cfg: RunConfig) -> FitConfig:
    return FitConfig(
        lambda1=cfg.get_float("fit", "lambda1"),
        lambda2=cfg.get_float("fit", "lambda2"),
        step_size=cfg.get_float("fit", "step_size"),
        max_iters=cfg.get_int("fit", "max_iters"),
        tol=cfg.get_float("fit", "tol"),
    )


def _synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        grid=cfg.get_int("synth", "grid"),
        noise=cfg.get_float("synth", "noise"),
        bend=cfg.get_float("synth", "bend"),
        class_mix=cfg.get_floats("synth", "class_mix"),
    )


def stage_synth(cfg: RunConfig, out_dir: str) -> None:
    scfg = _synth_config(cfg)
    seed = cfg.get_int("synth", "seed")
    n_train = cfg.get_int("synth", "n_train")
    n_test = cfg.get_int("synth", "n_test")
    cases = gen_dataset(n_train + n_test, seed, scfg)
    for i, case in enumerate(cases):
        split = "train" if i < n_train else "test"
        k = i if i < n_train else i - n_train
        save_case(case, os.path.join(out_dir, "cases", f"{split}_{k:04d}"))


def stage_prototype(cfg: RunConfig, out_dir: str) -> None:
    n_proto = cfg.get_int("fit", "prototype_cases")
    dirs = _case_dirs(out_dir, "train")[:n_proto]
    masks, head_ends = [], []
    for d in dirs:
        case = load_case(d)
        organ = (case.labels.data > 0).astype(np.uint8)
        masks.append(LabelVolume(organ, case.labels.spacing))
        head_ends.append(case.head_end)
    mean = mean_shape(masks, ORGAN_LABEL)
    proto = build_prototype(mean, _fit_config(cfg))
    proto = assign_regions(proto, np.mean(head_ends, axis=0))
    save_mesh(proto, os.path.join(out_dir, "prototype.obj"))


def stage_fit(cfg: RunConfig, out_dir: str) -> None:
    proto = load_mesh(os.path.join(out_dir, "prototype.obj"))
    fcfg = _fit_config(cfg)
    for d in _case_dirs(out_dir, "train") + _case_dirs(out_dir, "test"):
        labels = load_volume(os.path.join(d, "labels"))
        organ = LabelVolume((labels.data > 0).astype(np.uint8), labels.spacing)
        fitted, trace = fit_mesh(proto, organ, ORGAN_LABEL, fcfg)
        save_mesh(fitted, os.path.join(d, "fitted.obj"))
        trace.to_csv(os.path.join(d, "trace.csv"))


def stage_zones(cfg: RunConfig, out_dir: str) -> None:
    for d in _case_dirs(out_dir, "train") + _case_dirs(out_dir, "test"):
        labels = load_volume(os.path.join(d, "labels"))
        mesh = load_mesh(os.path.join(d, "fitted.obj"))
        zmap = render_zones(mesh, labels.data > 0, labels.spacing)
        save_volume(zmap.to_label_volume(), os.path.join(d, "zones"))
        vl = vertex_labels(zmap, labels)
        np.savetxt(os.path.join(d, "vertex_labels.txt"), vl, fmt="%d")


def stage_features(cfg: RunConfig, out_dir: str) -> None:
    from .zones import ZoneMap

    pooling = str(cfg.get("pool", "pooling"))
    for d in _case_dirs(out_dir, "train") + _case_dirs(out_dir, "test"):
        labels = load_volume(os.path.join(d, "labels"))
        probs = load_volume(os.path.join(d, "probs"))
        mesh = load_mesh(os.path.join(d, "fitted.obj"))
        zvol = load_volume(os.path.join(d, "zones"))
        zmap = ZoneMap(zvol.data.astype(np.int32), zvol.spacing)
        feats = pool_features(mesh, zmap, probs, labels, MASS_LABELS, pooling)
        save_features(feats, os.path.join(d, "features.csv"))


def _load_dataset(dirs: list[str]) -> list[tuple[np.ndarray, np.ndarray, int]]:
    out = []
    for d in dirs:
        feats = load_features(os.path.join(d, "features.csv"))
        vl = np.loadtxt(os.path.join(d, "vertex_labels.txt"), dtype=np.int64, ndmin=1)
        case = load_case(d)
        out.append((feats, vl, case.class_id - 1))
    return out


def stage_train(cfg: RunConfig, out_dir: str) -> None:
    dirs = _case_dirs(out_dir, "train")
    val_frac = cfg.get_float("train", "val_fraction")
    n_val = int(round(val_frac * len(dirs)))
    train_dirs = dirs[: len(dirs) - n_val] if n_val else dirs
    val_dirs = dirs[len(dirs) - n_val :] if n_val else []
    dataset = _load_dataset(train_dirs)
    validation = _load_dataset(val_dirs) if val_dirs else None
    proto = load_mesh(os.path.join(out_dir, "prototype.obj"))
    topo = GraphTopology.from_mesh(proto)
    tcfg = TrainConfig(
        eta1=cfg.get_float("train", "eta1"),
        eta2=cfg.get_float("train", "eta2"),
        learning_rate=cfg.get_float("train", "learning_rate"),
        momentum=cfg.get_float("train", "momentum"),
        epochs=cfg.get_int("train", "epochs"),
        batch_size=cfg.get_int("train", "batch_size"),
        seed=cfg.get_int("train", "seed"),
    )
    params, log = train(
        dataset, topo, tcfg,
        validation=validation, width=cfg.get_int("train", "width"),
    )
    save_params(params, os.path.join(out_dir, "model.ckpt"))
    log.to_csv(os.path.join(out_dir, "train_log.csv"))


def _pv_predict(labels: LabelVolume, threshold: int) -> int:
    raw = classify_pv(labels, MASS_LABELS, threshold, DEFAULT_CLASS)
    return LABEL_TO_CLASS.get(raw, DEFAULT_CLASS)


def _select_pv_threshold(dirs: list[str]) -> int:
    vols, truths = [], []
    for d in dirs:
        probs = load_volume(os.path.join(d, "probs"))
        pred = probs.data.argmax(axis=-1).astype(np.uint8)
        vols.append(LabelVolume(pred, probs.spacing))
        truths.append(load_case(d).class_id)
    candidates = [0, 1, 2, 5, 10, 20, 50, 100, 200]
    best_t, best_acc = candidates[0], -1.0
    for t in candidates:
        acc = float(np.mean([_pv_predict(v, t) == y for v, y in zip(vols, truths)]))
        if acc > best_acc:
            best_t, best_acc = t, acc
    return best_t


def stage_classify(cfg: RunConfig, out_dir: str) -> None:
    params = load_params(os.path.join(out_dir, "model.ckpt"))
    proto = load_mesh(os.path.join(out_dir, "prototype.obj"))
    topo = GraphTopology.from_mesh(proto)
    pv_threshold = cfg.get("classify", "pv_threshold")
    if str(pv_threshold) == "auto":
        train_dirs = _case_dirs(out_dir, "train")
        val_frac = cfg.get_float("train", "val_fraction")
        n_val = int(round(val_frac * len(train_dirs)))
        val_dirs = train_dirs[len(train_dirs) - n_val :] if n_val else train_dirs
        pv_threshold = _select_pv_threshold(val_dirs)
    pv_threshold = int(pv_threshold)
    rows = []
    for d in _case_dirs(out_dir, "test"):
        case = load_case(d)
        feats = load_features(os.path.join(d, "features.csv"))
        vp, gp = forward(params, feats, topo)
        gc = classify_gc(gp)
        vv_raw = classify_vv(vp, MASS_LABELS, DEFAULT_CLASS)
        vv = LABEL_TO_CLASS.get(vv_raw, DEFAULT_CLASS)
        seg_pred = case.probs.data.argmax(axis=-1).astype(np.uint8)
        pv = _pv_predict(LabelVolume(seg_pred, case.probs.spacing), pv_threshold)
        rows.append((os.path.basename(d), case.class_id, gc, vv, pv))
    with open(os.path.join(out_dir, "predictions.csv"), "w") as f:
        f.write(f"# pv_threshold {pv_threshold}\n")
        f.write("case,truth,gc,vv,pv\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def stage_eval(cfg: RunConfig, out_dir: str) -> dict[str, float]:
    rows = []
    with open(os.path.join(out_dir, "predictions.csv")) as f:
        for line in f:
            if line.startswith("#") or line.startswith("case,"):
                continue
            name, truth, gc, vv, pv = line.strip().split(",")
            rows.append((name, int(truth), int(gc), int(vv), int(pv)))
    truths = [r[1] for r in rows]
    accs = {}
    for label, col in (("gc", 2), ("vv", 3), ("pv", 4)):
        preds = [r[col] for r in rows]
        accs[label] = float(np.mean([p == t for p, t in zip(preds, truths)]))
    mgmt_pred = [MANAGEMENT_BY_CLASS[r[2]] for r in rows]
    mgmt_true = [MANAGEMENT_BY_CLASS[r[1]] for r in rows]
    cm = management_report(mgmt_pred, mgmt_true)
    seg_cases = []
    for name, truth, *_ in rows:
        d = os.path.join(out_dir, "cases", name)
        labels = load_volume(os.path.join(d, "labels"))
        probs = load_volume(os.path.join(d, "probs"))
        gt_mass = np.isin(labels.data, list(MASS_LABELS))
        if not gt_mass.any():
            continue
        pred_mass = np.isin(probs.data.argmax(axis=-1), list(MASS_LABELS))
        seg_cases.append((pred_mass, gt_mass, truth))
    report_dir = os.path.join(out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    cm.to_csv(os.path.join(report_dir, "management_confusion.csv"))
    if seg_cases:
        dt = detection_table(seg_cases, cutoff=0.1)
        dt.to_csv(os.path.join(report_dir, "detection_table.csv"))
    with open(os.path.join(report_dir, "report.txt"), "w") as f:
        f.write("classification accuracy (test split)\n")
        for k in ("gc", "vv", "pv"):
            f.write(f"  {k.upper()}: {accs[k]:.4f}\n")
        f.write("\nmanagement confusion (rows = truth)\n")
        f.write(cm.to_text() + "\n")
    with open(os.path.join(report_dir, "accuracy.csv"), "w") as f:
        f.write("strategy,accuracy\n")
        for k in ("gc", "vv", "pv"):
            f.write(f"{k},{accs[k]:.9g}\n")
    return accs


STAGES = (
    ("synth-gen", stage_synth),
    ("build-prototype", stage_prototype),
    ("fit-mesh", stage_fit),
    ("render-zones", stage_zones),
    ("pool-features", stage_features),
    ("train", stage_train),
    ("classify", stage_classify),
    ("eval", stage_eval),
)


def write_manifest(cfg: RunConfig, out_dir: str, stages: list[str]) -> None:
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write(f"version {__version__}\n")
        f.write(f"config {os.path.abspath(cfg.path)}\n")
        f.write(f"config_sha256 {cfg.digest}\n")
        for s in stages:
            f.write(f"stage {s}\n")


def run_pipeline(cfg: RunConfig, out_dir: str) -> dict[str, float]:
    os.makedirs(out_dir, exist_ok=True)
    accs = {}
    for name, fn in STAGES:
        result = fn(cfg, out_dir)
        if name == "eval":
            accs = result
    write_manifest(cfg, out_dir, [name for name, _ in STAGES])
    return accs
