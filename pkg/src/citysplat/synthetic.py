"""Synthetic scenes with known ground truth.

Used by the test suite and by ``citysplat make-demo`` to produce a complete,
self-consistent input set: a small LoD3 building whose front wall covers
recessed windows, foreground objects, a frozen Gaussian scene sampled on the
true surfaces, calibrated cameras, instance masks and embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np
import yaml

from citysplat.citymodel.entities import FaceLabel, LabeledPolygon
from citysplat.identity.scene import GaussianScene
from citysplat.masks.io import write_embedding
from citysplat.masks.rle import write_rle
from citysplat.raycast.camera import CameraView, write_cameras

NS_HEADER = (
    '<?xml version="1.0" encoding="UTF-8"?>\n'
    '<core:CityModel xmlns:core="http://www.opengis.net/citygml/2.0" '
    'xmlns:bldg="http://www.opengis.net/citygml/building/2.0" '
    'xmlns:gen="http://www.opengis.net/citygml/generics/2.0" '
    'xmlns:gml="http://www.opengis.net/gml">\n'
)


# --------------------------------------------------------------------------- geometry helpers


def rect(origin, u, v) -> np.ndarray:
    """Closed-free quad ``origin, origin+u, origin+u+v, origin+v``."""
    o, u, v = (np.asarray(a, dtype=np.float64) for a in (origin, u, v))
    return np.array([o, o + u, o + u + v, o + v])


def box_faces(lo, hi) -> list[np.ndarray]:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    return [
        rect((x0, y0, z0), (dx, 0, 0), (0, 0, dz)),
        rect((x0, y1, z0), (0, 0, dz), (dx, 0, 0)),
        rect((x0, y0, z0), (0, 0, dz), (0, dy, 0)),
        rect((x1, y0, z0), (0, dy, 0), (0, 0, dz)),
        rect((x0, y0, z1), (dx, 0, 0), (0, dy, 0)),
        rect((x0, y0, z0), (0, dy, 0), (dx, 0, 0)),
    ]


def _poslist(ring: np.ndarray) -> str:
    closed = np.vstack([ring, ring[:1]])
    return " ".join(f"{x:.6f}" for x in closed.ravel())


def _polygon_xml(exterior: np.ndarray, interiors=(), ind: str = "") -> str:
    out = [f"{ind}<gml:Polygon><gml:exterior><gml:LinearRing><gml:posList srsDimension=\"3\">"
           f"{_poslist(exterior)}</gml:posList></gml:LinearRing></gml:exterior>"]
    for hole in interiors:
        out.append(f"<gml:interior><gml:LinearRing><gml:posList srsDimension=\"3\">{_poslist(hole)}"
                   "</gml:posList></gml:LinearRing></gml:interior>")
    out.append("</gml:Polygon>")
    return "".join(out)


def _multisurface(prop: str, polys, ind: str) -> str:
    members = "".join(
        f"{ind}  <gml:surfaceMember>{_polygon_xml(*p) if isinstance(p, tuple) else _polygon_xml(p)}"
        "</gml:surfaceMember>\n" for p in polys
    )
    return f"{ind}<bldg:{prop}><gml:MultiSurface>\n{members}{ind}</gml:MultiSurface></bldg:{prop}>\n"


@dataclass
class Opening:
    gml_id: str
    cls: str  # Window | Door
    polygons: list


@dataclass
class Surface:
    gml_id: str
    cls: str
    polygons: list  # ndarray rings or (exterior, [holes]) tuples
    openings: list


def citygml_document(buildings: list[tuple[str, dict[str, str], list[Surface]]]) -> str:
    """Serialise buildings (id, generic attributes, boundary surfaces) as CityGML 2.0."""
    parts = [NS_HEADER]
    for bid, attrs, surfaces in buildings:
        parts.append(f' <core:cityObjectMember>\n  <bldg:Building gml:id={quoteattr(bid)}>\n')
        for k, v in attrs.items():
            if k == "measuredHeight":
                parts.append(f'   <bldg:measuredHeight uom="m">{v}</bldg:measuredHeight>\n')
            else:
                parts.append(f'   <gen:stringAttribute name={quoteattr(k)}><gen:value>{v}</gen:value>'
                             '</gen:stringAttribute>\n')
        for s in surfaces:
            parts.append(f'   <bldg:boundedBy>\n    <bldg:{s.cls} gml:id={quoteattr(s.gml_id)}>\n')
            parts.append(_multisurface("lod3MultiSurface", s.polygons, "     "))
            for o in s.openings:
                parts.append(f'     <bldg:opening><bldg:{o.cls} gml:id={quoteattr(o.gml_id)}>\n')
                parts.append(_multisurface("lod3MultiSurface", o.polygons, "      "))
                parts.append(f'     </bldg:{o.cls}></bldg:opening>\n')
            parts.append(f'    </bldg:{s.cls}>\n   </bldg:boundedBy>\n')
        parts.append('  </bldg:Building>\n </core:cityObjectMember>\n')
    parts.append("</core:CityModel>\n")
    return "".join(parts)


# --------------------------------------------------------------------------- small fixtures


def minimal_building_citygml() -> str:
    """One building, two walls, one window in the first wall, height attribute 12.5."""
    wall1 = Surface("wall-1", "WallSurface", [rect((0, 0, 0), (10, 0, 0), (0, 0, 6))],
                    [Opening("window-1", "Window", [rect((2, 0.3, 2), (2, 0, 0), (0, 0, 2))])])
    wall2 = Surface("wall-2", "WallSurface", [rect((10, 0, 0), (0, 8, 0), (0, 0, 6))], [])
    return citygml_document([("bldg-1", {"height": "12.5"}, [wall1, wall2])])


def wall_covers_window(recess: float = 0.3):
    """Polygons for a wall at y=0 that hides a window recessed ``recess`` m behind it.

    Ids: building 1, wall 2, window 3. The window spans x in [4, 6], z in [2, 4].
    """
    wall = rect((0, 0, 0), (10, 0, 0), (0, 0, 6))
    window = rect((4, recess, 2), (2, 0, 0), (0, 0, 2))
    return [
        LabeledPolygon(wall, [], FaceLabel(1, 2, -1), "wall"),
        LabeledPolygon(window, [], FaceLabel(1, 2, 3), "window"),
    ]


# --------------------------------------------------------------------------- Gaussian sampling


def surface_gaussians(origin, u, v, spacing: float, rng: np.random.Generator, thickness: float = 0.02,
                      opacity: float = 0.9, jitter: float = 0.15, counts: tuple[int, int] | None = None):
    """Gaussians on a grid over the parallelogram ``origin + a u + b v`` with ``a, b`` in [0, 1].

    ``counts`` fixes the grid size directly instead of deriving it from ``spacing``.
    """
    o, u, v = (np.asarray(a, dtype=np.float64) for a in (origin, u, v))
    lu, lv = np.linalg.norm(u), np.linalg.norm(v)
    if counts is not None:
        nu, nv = counts
    else:
        nu, nv = max(1, int(round(lu / spacing))), max(1, int(round(lv / spacing)))
    a, b = np.meshgrid((np.arange(nu) + 0.5) / nu, (np.arange(nv) + 0.5) / nv, indexing="ij")
    a = a.ravel() + rng.uniform(-jitter, jitter, a.size) / nu
    b = b.ravel() + rng.uniform(-jitter, jitter, b.size) / nv
    centers = o + a[:, None] * u + b[:, None] * v
    eu, ev = u / lu, v / lv
    n = np.cross(eu, ev)
    R = np.stack([eu, ev, n], axis=1)
    quat = _matrix_to_quat(R)
    scales = np.array([0.6 * lu / nu, 0.6 * lv / nv, thickness])
    count = len(centers)
    return centers, np.tile(scales, (count, 1)), np.tile(quat, (count, 1)), np.full(count, opacity)


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.zeros(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def _stack_gaussians(parts):
    cs, ss, qs, os_, labels = [], [], [], [], []
    for (c, s, q, o), lab in parts:
        cs.append(c), ss.append(s), qs.append(q), os_.append(o)
        labels.append(np.full(len(c), lab, dtype=np.int64))
    scene = GaussianScene(np.concatenate(cs), np.concatenate(ss), np.concatenate(qs), np.concatenate(os_))
    return scene, np.concatenate(labels)


# --------------------------------------------------------------------------- planted identity scene


def planted_scene(seed: int = 0, size: int = 48):
    """Three instance patches plus a background patch (50 Gaussians each), ten views.

    Returns ``(scene, planted_labels, train_views, heldout_views)`` with 8
    training and 2 held-out views; planted labels are 0 for background and
    1..3 for instances.
    """
    rng = np.random.default_rng(seed)
    patches = [
        ((-4.5, 0.0, 0.0), (3, 0, 0), (0, 0, 3), (5, 10), 1),
        ((-1.5, 0.0, 0.0), (3, 0, 0), (0, 0, 3), (5, 10), 2),
        ((1.5, 0.0, 0.0), (3, 0, 0), (0, 0, 3), (5, 10), 3),
        ((-4.5, -3.0, 0.0), (9, 0, 0), (0, 3, 0), (10, 5), 0),
    ]
    parts = []
    for o, u, v, counts, lab in patches:
        parts.append((surface_gaussians(o, u, v, 0.0, rng, opacity=0.95, counts=counts), lab))
    scene, labels = _stack_gaussians(parts)
    target = np.array([0.0, 0.0, 1.5])
    views = []
    for i, ang in enumerate(np.linspace(-0.9, 0.9, 10)):
        eye = target + 11.0 * np.array([np.sin(ang), -np.cos(ang), 0.0]) + np.array([0, 0, 2.5 + 1.5 * np.cos(3 * ang)])
        views.append(CameraView.look_at(i + 1, eye, target, size, size, focal=size * 0.9))
    held = [views[3], views[7]]
    train = [v for v in views if v not in held]
    return scene, labels, train, held


def planted_label_map(weights, planted: np.ndarray, n_classes: int, w_min: float) -> np.ndarray:
    """Ground-truth pixel labels: argmax of composited one-hot planted labels; -1 outside coverage."""
    onehot = np.eye(n_classes)[planted]
    score = weights.matrix @ onehot
    lab = np.argmax(score, axis=1)
    return np.where(weights.valid(w_min), lab, -1)


# --------------------------------------------------------------------------- full demo input set

DEMO_PROMPTS_CITY = ["building", "wall", "roof", "window", "door"]
DEMO_PROMPTS_FORE = ["car", "tree", "person"]
GT_PROMPTS = ("building", "wall", "roof", "window", "door", "car", "tree")
CLASS_PROMPT = {"Building": "building", "WallSurface": "wall", "RoofSurface": "roof",
                "Window": "window", "Door": "door", "GroundSurface": "building",
                "BuildingInstallation": "building"}


def demo_building() -> tuple[str, list[tuple], dict]:
    """The demo building and the true (Gaussian-bearing) surfaces behind it.

    Front wall (y=0) is a solid polygon covering two recessed windows and a
    recessed door; the right wall has a window set in a proper hole.
    """
    W, D, H = 12.0, 8.0, 8.0
    win_a = rect((2, 0.3, 3), (2, 0, 0), (0, 0, 2))
    win_b = rect((8, 0.3, 3), (2, 0, 0), (0, 0, 2))
    door = rect((5.4, 0.2, 0), (1.2, 0, 0), (0, 0, 2.2))
    side_hole = rect((W, 3, 3), (0, 2, 0), (0, 0, 2))
    side_win = rect((W - 0.2, 3, 3), (0, 2, 0), (0, 0, 2))
    surfaces = [
        Surface("front-wall", "WallSurface", [rect((0, 0, 0), (W, 0, 0), (0, 0, H))], [
            Opening("front-window-a", "Window", [win_a]),
            Opening("front-window-b", "Window", [win_b]),
            Opening("front-door", "Door", [door]),
        ]),
        Surface("right-wall", "WallSurface", [(rect((W, 0, 0), (0, D, 0), (0, 0, H)), [side_hole])],
                [Opening("right-window", "Window", [side_win])]),
        Surface("left-wall", "WallSurface", [rect((0, 0, 0), (0, 0, H), (0, D, 0))], []),
        Surface("back-wall", "WallSurface", [rect((0, D, 0), (0, 0, H), (W, 0, 0))], []),
        Surface("roof", "RoofSurface", [rect((0, 0, H), (W, 0, 0), (0, D, 0))], []),
        Surface("ground", "GroundSurface", [rect((0, 0, 0), (0, D, 0), (W, 0, 0))], []),
    ]
    doc = citygml_document([("demo-building", {"measuredHeight": "8.0", "usage": "office"}, surfaces)])
    # True surfaces for Gaussian sampling: (origin, u, v, object name)
    truth = [
        # front wall minus openings, as strips
        ((0, 0, 0), (2, 0, 0), (0, 0, H), "front-wall"),
        ((2, 0, 0), (3.4, 0, 0), (0, 0, 3), "front-wall"),
        ((2, 0, 5), (8, 0, 0), (0, 0, 3), "front-wall"),
        ((4, 0, 3), (4, 0, 0), (0, 0, 2), "front-wall"),
        ((6.6, 0, 0), (1.4, 0, 0), (0, 0, 3), "front-wall"),
        ((5.4, 0, 2.2), (1.2, 0, 0), (0, 0, 0.8), "front-wall"),
        ((10, 0, 0), (2, 0, 0), (0, 0, H), "front-wall"),
        ((8, 0, 0), (2, 0, 0), (0, 0, 3), "front-wall"),
        ((2, 0.3, 3), (2, 0, 0), (0, 0, 2), "front-window-a"),
        ((8, 0.3, 3), (2, 0, 0), (0, 0, 2), "front-window-b"),
        ((5.4, 0.2, 0), (1.2, 0, 0), (0, 0, 2.2), "front-door"),
        ((W, 0, 0), (0, 3, 0), (0, 0, H), "right-wall"),
        ((W, 5, 0), (0, 3, 0), (0, 0, H), "right-wall"),
        ((W, 3, 0), (0, 2, 0), (0, 0, 3), "right-wall"),
        ((W, 3, 5), (0, 2, 0), (0, 0, 3), "right-wall"),
        ((W - 0.2, 3, 3), (0, 2, 0), (0, 0, 2), "right-window"),
        ((0, 0, 0), (0, 0, H), (0, D, 0), "left-wall"),
        ((0, 0, H), (W, 0, 0), (0, D, 0), "roof"),
    ]
    objects = {
        "car": ((3.0, -4.0, 0.0), (6.0, -2.5, 1.5)),
        "tree": ((9.0, -5.5, 0.0), (10.5, -4.0, 4.0)),
    }
    return doc, truth, objects


def _unit(v):
    return v / np.linalg.norm(v)


def _noisy(base: np.ndarray, rng: np.random.Generator, sigma: float = 0.35) -> np.ndarray:
    noise = rng.normal(size=base.size)
    noise -= (noise @ base) * base
    return _unit(base + sigma * _unit(noise))


def write_demo(out_dir: str | Path, seed: int = 0, size: tuple[int, int] = (80, 60), n_views: int = 10,
               dim: int = 512) -> Path:
    """Write a complete demo input set plus ``config.yaml``; returns the config path."""
    from citysplat.citymodel.mesh import LabeledMesh, build_labeled_mesh
    from citysplat.citymodel.parser import parse_citygml
    from citysplat.raycast.twopass import Raycaster

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    doc, truth, objects = demo_building()
    (out / "building.gml").write_text(doc, encoding="utf-8")
    table, polys = parse_citygml(doc)
    ids = {e.object_id: e.instance_id for e in table}

    # Gaussians on the true surfaces, the foreground objects and the ground
    parts = []
    for o, u, v, name in truth:
        parts.append((surface_gaussians(o, u, v, 0.4, rng), ids[name]))
    obj_ids = {}
    for k, (name, (lo, hi)) in enumerate(objects.items()):
        obj_ids[name] = -(k + 1)
        for face in box_faces(lo, hi):
            parts.append((surface_gaussians(face[0], face[1] - face[0], face[3] - face[0], 0.3, rng), -(k + 1)))
    parts.append((surface_gaussians((-6, -12, 0), (24, 0, 0), (0, 12, 0), 0.6, rng, opacity=0.95), 0))
    scene, planted = _stack_gaussians(parts)
    scene.save_ply(out / "scene.ply")

    # cameras on an arc in front of the building
    w, h = size
    target = np.array([6.0, 3.0, 3.0])
    views = []
    for i, ang in enumerate(np.linspace(-0.75, 0.75, n_views)):
        eye = target + np.array([22 * np.sin(ang), -22 * np.cos(ang), 2.5 + 2.0 * abs(np.sin(2 * ang))])
        views.append(CameraView.look_at(i + 1, eye, target, w, h, focal=0.9 * w))
    write_cameras(out / "cameras.txt", views)

    # prompt embeddings
    emb_dir = out / "emb"
    prompts = {p: _unit(rng.normal(size=dim)) for p in DEMO_PROMPTS_CITY + DEMO_PROMPTS_FORE}
    for p, e in prompts.items():
        write_embedding(emb_dir / f"prompt_{p}.f32", e)
    bank = {
        "dim": dim,
        "city": [{"prompt": p, "embedding": f"emb/prompt_{p}.f32"} for p in DEMO_PROMPTS_CITY],
        "fore": [{"prompt": p, "embedding": f"emb/prompt_{p}.f32"} for p in DEMO_PROMPTS_FORE],
    }
    (out / "prompts.yaml").write_text(yaml.safe_dump(bank, sort_keys=False), encoding="utf-8")

    # masks from a scene mesh holding building, objects and ground
    city_mesh = build_labeled_mesh(table, polys)
    obj_label = {name: 1000 + k for k, name in enumerate(objects)}
    obj_polys = []
    for name, (lo, hi) in objects.items():
        obj_polys += [(f, obj_label[name]) for f in box_faces(lo, hi)]
    verts = [city_mesh.vertices]
    tris = [city_mesh.triangles]
    labs = [city_mesh.face_labels]
    off = len(city_mesh.vertices)
    for face, lab in obj_polys:
        verts.append(face)
        tris.append(np.array([[0, 1, 2], [0, 2, 3]]) + off)
        labs.append(np.array([[lab, -1, -1]] * 2))
        off += 4
    scene_mesh = LabeledMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(labs))
    caster = Raycaster(scene_mesh)
    city_caster = Raycaster(city_mesh)
    mask_dir = out / "masks"
    eval_ids = {views[3].view_id, views[7].view_id}
    gt_records = []
    manifest = []
    features = []
    for view in views:
        hit = caster.raycast_global(view).feat
        vdir = mask_dir / f"view_{view.view_id:04d}"
        vdir.mkdir(parents=True, exist_ok=True)
        raw = [("building", hit == 1, 0.97)]
        raw += [(name, hit == obj_label[name], 0.95) for name in objects]
        blob = np.zeros((h, w), dtype=bool)
        blob[: h // 6, : w // 6] = True
        raw.append(("person", blob, 0.40))
        for mid, (name, bitmap, q) in enumerate(raw):
            if not bitmap.any():
                continue
            rel = f"masks/view_{view.view_id:04d}/mask_{mid:04d}.rle"
            write_rle(out / rel, bitmap)
            erel = f"emb/mask_v{view.view_id:04d}_m{mid:04d}.f32"
            write_embedding(out / erel, _noisy(prompts[name], rng))
            manifest.append({"view_id": view.view_id, "mask_id": mid, "quality": q,
                             "area": int(bitmap.sum()), "rle": rel, "embedding": erel, "dim": dim})
        # per-instance crop features for the city model
        city = city_caster.run(view).city
        if view.view_id in eval_ids:
            full = caster.run(view).city
            for prompt in GT_PROMPTS:
                if prompt in objects:
                    gt = full == obj_label[prompt]
                else:
                    cls = {e.instance_id for e in table if CLASS_PROMPT[e.semantic_class] == prompt}
                    if prompt == "building":
                        cls = {e.instance_id for e in table}
                    gt = np.isin(full, sorted(cls))
                rel = f"gt/view_{view.view_id:04d}/{prompt}.rle"
                write_rle(out / rel, gt)
                gt_records.append({"view_id": view.view_id, "prompt": prompt, "rle": rel})
        for iid in np.unique(city[city > 0]).tolist():
            erel = f"emb/city_i{iid:04d}_v{view.view_id:04d}.f32"
            write_embedding(out / erel, _noisy(prompts[CLASS_PROMPT[table[iid].semantic_class]], rng))
            features.append({"instance_id": iid, "view_id": view.view_id, "embedding": erel})
    with open(out / "masks.jsonl", "w", encoding="utf-8") as f:
        f.writelines(json.dumps(r, sort_keys=True) + "\n" for r in manifest)
    with open(out / "city_features.jsonl", "w", encoding="utf-8") as f:
        f.writelines(json.dumps(r, sort_keys=True) + "\n" for r in features)
    with open(out / "gt.jsonl", "w", encoding="utf-8") as f:
        f.writelines(json.dumps(r, sort_keys=True) + "\n" for r in gt_records)

    config = {
        "inputs": {
            "citygml": "building.gml",
            "cameras": "cameras.txt",
            "gaussians": "scene.ply",
            "masks": "masks.jsonl",
            "prompts": "prompts.yaml",
            "city_features": "city_features.jsonl",
            "ground_truth": "gt.jsonl",
        },
        "eval": {"views": sorted(eval_ids), "prompts": list(GT_PROMPTS)},
        # demo frames are tiny, so the area floor is scaled down with them
        "masks": {"tau_a": 50},
        "train": {"iterations": 600},
        "seed": seed,
    }
    cfg_path = out / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return cfg_path


# --------------------------------------------------------------------------- facade with a recessed window


def facade_scene(seed: int = 0, size: int = 64, spacing: float = 0.2, recess: float = 0.3):
    """Gaussians on the ``wall_covers_window`` facade plus six frontal views.

    The wall Gaussians leave the window opening free so the recessed window
    Gaussians are visible. Returns ``(table, mesh, scene, views)``.
    """
    from citysplat.citymodel.entities import Level, SemanticEntity, SemanticTable
    from citysplat.citymodel.mesh import build_labeled_mesh

    table = SemanticTable([
        SemanticEntity(1, "building", Level.FEATURE, "Building", None),
        SemanticEntity(2, "wall", Level.SURFACE, "WallSurface", 1),
        SemanticEntity(3, "window", Level.PART, "Window", 2),
    ])
    mesh = build_labeled_mesh(table, wall_covers_window(recess))
    rng = np.random.default_rng(seed)
    strips = [((0, 0, 0), (4, 0, 0), (0, 0, 6)), ((6, 0, 0), (4, 0, 0), (0, 0, 6)),
              ((4, 0, 0), (2, 0, 0), (0, 0, 2)), ((4, 0, 4), (2, 0, 0), (0, 0, 2))]
    parts = [(surface_gaussians(o, u, v, spacing, rng, opacity=0.95), 2) for o, u, v in strips]
    parts.append((surface_gaussians((4, recess, 2), (2, 0, 0), (0, 0, 2), spacing, rng, opacity=0.95), 3))
    scene, _ = _stack_gaussians(parts)
    target = np.array([5.0, 0.0, 3.0])
    views = []
    for i, ang in enumerate(np.linspace(-0.35, 0.35, 6)):
        eye = target + 12.0 * np.array([np.sin(ang), -np.cos(ang), 0.0]) + np.array([0, 0, 0.5])
        views.append(CameraView.look_at(i + 1, eye, target, size, size, focal=size * 1.1))
    return table, mesh, scene, views
