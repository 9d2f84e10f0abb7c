"""The pipeline stages. Each reads upstream artifacts, writes its own
directory under the output root and records hashes in the manifest.

Output layout::

    citymodel/  table.jsonl, mesh.bin, warnings.json
    raycast/    view_XXXX.* grids: feat surf part depth part_depth part_id recovered city
    fuse/       view_XXXX.* grids: image fused; groups.jsonl + groups/;
                city_features.jsonl + city/; filter.jsonl; association.json
    train/      codes.bin, head.bin, history.jsonl, summary.json, weights/view_XXXX.bin
    query/      queries.json, <prompt>/view_XXXX.rle and .png
    eval/       metrics.json, figures/*.png
"""

from __future__ import annotations

import json
import logging
import math
import re
from pathlib import Path

import numpy as np
import yaml

from citysplat.citymodel.entities import MISSING, SemanticTable
from citysplat.citymodel.mesh import LabeledMesh, build_labeled_mesh
from citysplat.citymodel.parser import parse_citygml_file
from citysplat.identity.compositing import CompositeWeights, precompute_weights
from citysplat.identity.knn import knn_graph
from citysplat.identity.scene import GaussianScene, load_identity, save_identity
from citysplat.identity.train import TrainView, build_vocab, encode_labels, predict_pixels, train
from citysplat.masks.association import associate, group_id_map, prune_groups
from citysplat.masks.filtering import clean_masks
from citysplat.masks.fusion import aggregate_features, fuse
from citysplat.masks.io import (
    read_city_features,
    read_embedding,
    read_group_registry,
    read_mask_manifest,
    read_prompt_bank,
    write_embedding,
    write_group_registry,
)
from citysplat.masks.rle import read_rle, write_rle
from citysplat import plotting
from citysplat.pipeline.config import ConfigError, RunConfig
from citysplat.pipeline.manifest import Manifest, output_lock
from citysplat.query.metrics import eval_binary, eval_fine
from citysplat.query.render import render_query_mask
from citysplat.query.resolve import InstanceRegistry, Query, resolve_query
from citysplat.raycast.camera import CameraView, read_cameras
from citysplat.raycast.idmap_io import read_grids, write_grids
from citysplat.raycast.twopass import Raycaster

log = logging.getLogger(__name__)


def _stem(view_id: int) -> str:
    return f"view_{view_id:04d}"


def _dump_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _dump_jsonl(path: Path, records) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True, allow_nan=False) + "\n")
    return path


def _finite(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


def _log_params(stage: str, params: dict) -> None:
    for k, v in sorted(params.items()):
        log.info("stage_%s %s = %s", stage, k, v)


def _cameras(cfg: RunConfig) -> list[CameraView]:
    views = read_cameras(cfg.path("cameras"))
    if not views:
        raise ConfigError("camera file lists no views")
    return sorted(views, key=lambda v: v.view_id)


def _slug(prompt: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", prompt.strip().lower()).strip("_") or "prompt"


# --------------------------------------------------------------------------- citymodel

def stage_citymodel(cfg: RunConfig) -> list[Path]:
    gml = cfg.path("citygml")
    params = {"lod": cfg.citymodel.lod, "eps_plane": cfg.citymodel.eps_plane,
              "alignment": cfg.citymodel.alignment}
    _log_params("citymodel", params)
    warnings: list[str] = []
    table, polys = parse_citygml_file(gml, lod=cfg.citymodel.lod, eps_plane=cfg.citymodel.eps_plane,
                                      warnings=warnings)
    mesh = build_labeled_mesh(table, polys, cfg.alignment(), eps_plane=cfg.citymodel.eps_plane)
    d = cfg.out_dir / "citymodel"
    d.mkdir(parents=True, exist_ok=True)
    table.write_jsonl(d / "table.jsonl")
    mesh.save(d / "mesh.bin")
    _dump_json(d / "warnings.json", warnings)
    log.info("citymodel: %d entities, %d faces, %d warnings", len(table), mesh.n_faces, len(warnings))
    outputs = [d / "table.jsonl", d / "mesh.bin", d / "warnings.json"]
    Manifest(cfg.out_dir).record("citymodel", [gml], outputs, params)
    return outputs


def _load_citymodel(cfg: RunConfig) -> tuple[SemanticTable, LabeledMesh]:
    d = cfg.out_dir / "citymodel"
    return SemanticTable.read_jsonl(d / "table.jsonl"), LabeledMesh.load(d / "mesh.bin")


# --------------------------------------------------------------------------- raycast

def stage_raycast(cfg: RunConfig) -> list[Path]:
    man = Manifest(cfg.out_dir)
    man.check_upstream("raycast")
    cams = cfg.path("cameras")
    params = {"tau": cfg.raycast.tau}
    _log_params("raycast", params)
    _, mesh = _load_citymodel(cfg)
    caster = Raycaster(mesh)
    d = cfg.out_dir / "raycast"
    d.mkdir(parents=True, exist_ok=True)
    outputs = []
    for view in _cameras(cfg):
        r = caster.run(view, cfg.raycast.tau)
        g, p = r.global_map, r.part_pass
        outputs += write_grids(d / _stem(view.view_id), view.view_id, {
            "feat": g.feat, "surf": g.surf, "part": g.part, "depth": g.depth,
            "part_depth": p.depth, "part_id": p.part, "recovered": r.recovered, "city": r.city,
        })
        log.info("raycast view %d: %d building px, %d recovered part px", view.view_id,
                 int(g.building_support.sum()), int((r.recovered != MISSING).sum()))
    man.record("raycast", man.outputs_of("citymodel") + [cams], outputs, params)
    return outputs


def _raycast_grids(cfg: RunConfig, view_id: int) -> dict[str, np.ndarray]:
    return read_grids(cfg.out_dir / "raycast" / _stem(view_id))[1]


# --------------------------------------------------------------------------- fuse

def stage_fuse(cfg: RunConfig) -> list[Path]:
    man = Manifest(cfg.out_dir)
    man.check_upstream("fuse")
    mc = cfg.masks
    params = {k: getattr(mc, k) for k in vars(mc)}
    _log_params("fuse", params)
    table, _ = _load_citymodel(cfg)
    views = _cameras(cfg)
    inputs = [cfg.path("masks"), cfg.path("prompts"), cfg.path("gaussians"), cfg.path("cameras")]
    bank = read_prompt_bank(cfg.path("prompts"))
    raw = read_mask_manifest(cfg.path("masks"))
    known = {v.view_id for v in views}
    for vid in sorted(set(raw) - known):
        log.warning("masks for unknown view %d ignored", vid)
    centers = GaussianScene.load_ply(cfg.path("gaussians")).centers

    grids = {v.view_id: _raycast_grids(cfg, v.view_id) for v in views}
    kept_by_view, records = {}, []
    for v in views:
        kept, recs = clean_masks(raw.get(v.view_id, []), grids[v.view_id]["feat"] != MISSING, bank,
                                 tau_q=mc.tau_q, tau_a=mc.tau_a, tau_ov=mc.tau_ov, margin=mc.margin)
        kept_by_view[v.view_id] = kept
        records += [{"view_id": r.view_id, "mask_id": r.mask_id, "stage": r.stage,
                     "overlap": _finite(r.overlap), "s_city": _finite(r.s_city), "s_fore": _finite(r.s_fore)}
                    for r in recs]
    depths = {vid: g["depth"] for vid, g in grids.items()}
    state = associate(views, kept_by_view, centers, depths,
                      tau_geo=mc.tau_geo, tau_sim=mc.tau_sim, eps_depth=mc.eps_depth)
    cam_centers = np.array([v.center for v in views])
    groups = prune_groups(state.groups, mc.m_view, cam_centers, centers, mc.d_far)
    log.info("fuse: %d groups formed, %d kept after pruning (m_view=%d)",
             len(state.groups), len(groups), mc.m_view)

    d = cfg.out_dir / "fuse"
    d.mkdir(parents=True, exist_ok=True)
    outputs = []
    for v in views:
        city = grids[v.view_id]["city"]
        img = group_id_map(state.assignments.get(v.view_id, []), city.shape, groups)
        fused = fuse(img, city, mc.offset, table.max_id)
        outputs += write_grids(d / _stem(v.view_id), v.view_id, {"image": img, "fused": fused})
    reg = write_group_registry(d, groups, mc.offset, bank)
    outputs += [reg] + [d / rec[key] for rec in _jsonl(reg) for key in ("embedding", "member_file")]

    feats = []
    if cfg.inputs.city_features:
        path = cfg.path("city_features")
        inputs.append(path)
        for iid, vecs in sorted(read_city_features(path).items()):
            if iid not in table:
                raise ValueError(f"city feature for unknown instance {iid}")
            rel = f"city/instance_{iid:06d}.f32"
            write_embedding(d / rel, aggregate_features(vecs))
            feats.append({"instance_id": iid, "n_views": len(vecs), "embedding": rel})
            outputs.append(d / rel)
    outputs.append(_dump_jsonl(d / "city_features.jsonl", feats))
    outputs.append(_dump_jsonl(d / "filter.jsonl", records))
    outputs.append(_dump_json(d / "association.json", {
        "groups_formed": len(state.groups),
        "groups_kept": sorted(groups),
        "view_support": {str(k): g.view_support for k, g in sorted(state.groups.items())},
        "discarded_masks": [list(x) for x in state.discarded],
    }))
    man.record("fuse", man.outputs_of("raycast") + inputs, outputs, params)
    return outputs


def _jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _fused(cfg: RunConfig, view_id: int) -> np.ndarray:
    return read_grids(cfg.out_dir / "fuse" / _stem(view_id))[1]["fused"]


# --------------------------------------------------------------------------- train

def stage_train(cfg: RunConfig) -> list[Path]:
    man = Manifest(cfg.out_dir)
    man.check_upstream("train")
    tc = cfg.train
    params = {**vars(tc), "seed": cfg.seed, "heldout_views": sorted(cfg.eval.views)}
    _log_params("train", params)
    scene = GaussianScene.load_ply(cfg.path("gaussians"))
    views = _cameras(cfg)
    d = cfg.out_dir / "train"
    (d / "weights").mkdir(parents=True, exist_ok=True)
    outputs = []
    weights = {}
    for v in views:
        w = precompute_weights(v, scene, alpha_min=tc.alpha_min, lowpass=tc.lowpass)
        path = d / "weights" / f"{_stem(v.view_id)}.bin"
        w.save(path)
        outputs.append(path)
        weights[v.view_id] = w
    held = set(cfg.eval.views)
    train_ids = [v.view_id for v in views if v.view_id not in held]
    if not train_ids:
        raise ConfigError("every view is held out; nothing to train on")
    fused = {vid: _fused(cfg, vid) for vid in train_ids}
    vocab = build_vocab(fused.values())
    tviews = [TrainView(vid, weights[vid], encode_labels(fused[vid], vocab)) for vid in train_ids]
    neighbors = knn_graph(scene.centers, tc.k) if tc.lambda_3d > 0 else None
    res = train(tviews, len(scene), len(vocab), tc, neighbors, seed=cfg.seed)
    save_identity(d / "codes.bin", d / "head.bin", res.codes, res.weight, res.bias, vocab)
    outputs += [d / "codes.bin", d / "head.bin"]
    outputs.append(_dump_jsonl(d / "history.jsonl",
                               [{k: _finite(v) for k, v in h.items()} for h in res.history]))
    outputs.append(_dump_json(d / "summary.json", {
        "n_gaussians": len(scene), "n_classes": len(vocab), "vocab": vocab.tolist(),
        "train_views": train_ids, "final_loss": res.history[-1]["loss"],
    }))
    man.record("train", man.outputs_of("fuse") + [cfg.path("gaussians")], outputs, params)
    return outputs


class _Model:
    """Trained identity model plus cached per-view predicted label maps."""

    def __init__(self, cfg: RunConfig):
        d = cfg.out_dir / "train"
        self.root = d
        self.w_min = cfg.train.w_min
        self.codes, self.weight, self.bias, self.vocab = load_identity(d / "codes.bin", d / "head.bin")
        self._maps: dict[int, np.ndarray] = {}

    def labels(self, view_id: int) -> np.ndarray:
        if view_id not in self._maps:
            path = self.root / "weights" / f"{_stem(view_id)}.bin"
            if not path.exists():
                raise ConfigError(f"view {view_id} has no weight cache")
            w = CompositeWeights.load(path)
            self._maps[view_id] = predict_pixels(w, self.codes, self.weight, self.bias, self.w_min, self.vocab)
        return self._maps[view_id]


# --------------------------------------------------------------------------- query

def _registry(cfg: RunConfig) -> InstanceRegistry:
    d = cfg.out_dir / "fuse"
    city = {r["instance_id"]: read_embedding(d / r["embedding"]) for r in _jsonl(d / "city_features.jsonl")}
    return InstanceRegistry.from_records(cfg.masks.offset, city, read_group_registry(d / "groups.jsonl"))


def _queries(cfg: RunConfig, prompts) -> list[Query]:
    bank = read_prompt_bank(cfg.path("prompts")) if cfg.inputs.prompts else None
    out = []
    for p in prompts:
        if isinstance(p, str):
            p = {"prompt": p}
        emb = None
        if p.get("embedding"):
            emb = read_embedding(Path(cfg.base_dir, p["embedding"]))
        elif bank is not None:
            emb = bank.embedding_for(p["prompt"])
        out.append(Query(p["prompt"], emb, p.get("level", "Any")))
    return out


def read_prompt_file(path: str | Path) -> list:
    """Prompts as a YAML list of strings or ``{prompt, level, embedding}`` mappings."""
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, list):
        raise ConfigError(f"{path}: expected a list of prompts")
    return doc


def stage_query(cfg: RunConfig, prompts=None) -> list[Path]:
    man = Manifest(cfg.out_dir)
    man.check_upstream("query")
    prompts = list(prompts) if prompts else list(cfg.query.prompts)
    if not prompts:
        raise ConfigError("no query prompts given")
    view_ids = list(cfg.query.views or cfg.eval.views or [v.view_id for v in _cameras(cfg)])
    params = {"tau_query": cfg.query.tau_query, "views": view_ids}
    _log_params("query", params)
    table, _ = _load_citymodel(cfg)
    reg = _registry(cfg)
    model = _Model(cfg)
    d = cfg.out_dir / "query"
    d.mkdir(parents=True, exist_ok=True)
    outputs, summary = [], []
    for q in _queries(cfg, prompts):
        ids = resolve_query(q, table, reg, cfg.query.tau_query)
        log.info("query %r (level %s) -> %s", q.prompt, q.level, ids)
        qdir = d / _slug(q.prompt)
        counts = {}
        for vid in view_ids:
            lab = model.labels(vid)
            mask = render_query_mask(ids, lab, table, reg)
            write_rle(qdir / f"{_stem(vid)}.rle", mask)
            plotting.save_mask_preview(mask, qdir / f"{_stem(vid)}.png", f"{q.prompt} / view {vid}", lab)
            outputs += [qdir / f"{_stem(vid)}.rle", qdir / f"{_stem(vid)}.png"]
            counts[str(vid)] = int(mask.sum())
        summary.append({"prompt": q.prompt, "level": q.level, "instances": ids, "pixels": counts})
    outputs.append(_dump_json(d / "queries.json", summary))
    man.record("query", man.outputs_of("train"), outputs, params)
    return outputs


# --------------------------------------------------------------------------- eval

def stage_eval(cfg: RunConfig) -> list[Path]:
    man = Manifest(cfg.out_dir)
    man.check_upstream("eval")
    ec = cfg.eval
    gt_path = cfg.path("ground_truth")
    params = {"views": ec.views, "prompts": ec.prompts, "coarse_prompt": ec.coarse_prompt,
              "tau_query": cfg.query.tau_query, "w_min": cfg.train.w_min}
    _log_params("eval", params)
    gt_records = _jsonl(gt_path)
    gt = {(int(r["view_id"]), r["prompt"]): read_rle(gt_path.parent / r["rle"]) for r in gt_records}
    views = list(ec.views) or sorted({v for v, _ in gt})
    prompts = list(ec.prompts) or sorted({p for _, p in gt})
    if ec.coarse_prompt not in prompts:
        prompts.insert(0, ec.coarse_prompt)
    table, _ = _load_citymodel(cfg)
    reg = _registry(cfg)
    model = _Model(cfg)
    d = cfg.out_dir / "eval"
    fig = d / "figures"
    outputs = []
    pooled_pred = {p: [] for p in prompts}
    pooled_gt = {p: [] for p in prompts}
    resolved = {}
    per_view = {}
    for q in _queries(cfg, prompts):
        resolved[q.prompt] = resolve_query(q, table, reg, cfg.query.tau_query)
    for vid in views:
        lab = model.labels(vid)
        outputs.append(plotting.save_id_map(lab, fig / f"{_stem(vid)}_predicted.png", f"predicted labels, view {vid}"))
        fused_stem = cfg.out_dir / "fuse" / _stem(vid)
        if fused_stem.with_name(fused_stem.name + ".json").exists():
            outputs.append(plotting.save_id_map(_fused(cfg, vid), fig / f"{_stem(vid)}_fused.png",
                                                f"fused supervision, view {vid}"))
        per_view[str(vid)] = {}
        for p in prompts:
            if (vid, p) not in gt:
                raise ConfigError(f"no ground truth for prompt {p!r} in view {vid}")
            mask = render_query_mask(resolved[p], lab, table, reg)
            pooled_pred[p].append(mask.ravel())
            pooled_gt[p].append(gt[(vid, p)].ravel())
            per_view[str(vid)][p] = eval_binary(mask, gt[(vid, p)]).as_dict()
    pred = {p: np.concatenate(v) for p, v in pooled_pred.items()}
    truth = {p: np.concatenate(v) for p, v in pooled_gt.items()}
    coarse = eval_binary(pred[ec.coarse_prompt], truth[ec.coarse_prompt])
    fine_prompts = [p for p in prompts if p != ec.coarse_prompt]
    fine = eval_fine({p: pred[p] for p in fine_prompts}, {p: truth[p] for p in fine_prompts})
    report = {
        "coarse": coarse.as_dict(),
        "fine": {**fine.as_dict(), "miou": _finite(fine.miou)},
        "per_view": per_view,
        "queries": resolved,
        "views": views,
    }
    outputs.append(_dump_json(d / "metrics.json", report))
    outputs.append(plotting.save_metric_bars(coarse.as_dict(), fig / "coarse.png", "building / non-building"))
    outputs.append(plotting.save_metric_bars(fine.per_class_iou, fig / "fine_iou.png", "per-class IoU"))
    history = _jsonl(cfg.out_dir / "train" / "history.jsonl")
    outputs.append(plotting.save_loss_curve(
        [{**h, "l3d": float("nan") if h["l3d"] is None else h["l3d"]} for h in history], fig / "loss.png"))
    log.info("eval: coarse IoU %.4f, fine mIoU %.4f", coarse.iou, fine.miou)
    man.record("eval", man.outputs_of("train") + [gt_path], outputs, params)
    return outputs


STAGE_FUNCS = {
    "citymodel": stage_citymodel,
    "raycast": stage_raycast,
    "fuse": stage_fuse,
    "train": stage_train,
    "query": stage_query,
    "eval": stage_eval,
}


def run_stage(cfg: RunConfig, name: str, **kwargs) -> list[Path]:
    with output_lock(cfg.out_dir):
        return STAGE_FUNCS[name](cfg, **kwargs)


def run_all(cfg: RunConfig, prompts=None) -> list[Path]:
    # Fail on a missing input before any stage writes anything.
    for name in ("citygml", "cameras", "masks", "gaussians"):
        cfg.path(name)
    outputs = []
    with output_lock(cfg.out_dir):
        for name in ("citymodel", "raycast", "fuse", "train"):
            outputs += STAGE_FUNCS[name](cfg)
        if prompts or cfg.query.prompts:
            outputs += stage_query(cfg, prompts)
        if cfg.inputs.ground_truth:
            outputs += stage_eval(cfg)
    return outputs
