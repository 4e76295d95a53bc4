"""On-disk triplet datasets: PPM frames, PFM depth/oracle maps and a JSON index.

Layout of a dataset directory::

    dataset.json             intrinsics, kinds, seed, per-triplet poses and files
    t0001/prev.ppm           clean I_{t-1}
    t0001/next.ppm           clean I_{t+1}
    t0001/cur_d.ppm          clean I_t (tag d)
    t0001/cur_n.ppm          one file per degradation tag (n, r, f)
    t0001/depth.pfm          ground-truth depth of I_t
    t0001/oracle.pfm         relative inverse-depth surrogate for I_t
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .geometry import CameraIntrinsics, RigidPose
from .gridio import read_pfm, read_ppm, write_pfm, write_ppm
from .synth import KIND_TAGS, DegradationParams, FrameTriplet, degrade, oracle_relative_depth
from .trainer import TrainingSample

INDEX_NAME = "dataset.json"
FORMAT_VERSION = 1


@dataclass
class Dataset:
    K: CameraIntrinsics
    kinds: tuple
    triplets: list
    samples: list
    seed: int = 0


def _intrinsics_dict(K: CameraIntrinsics) -> dict:
    return {f.name: getattr(K, f.name) for f in dataclasses.fields(K)}


def write_dataset(out, triplets, kinds=("night", "fog"), seed: int = 0, params=None) -> dict:
    """Degrade every target frame once per kind and write the dataset to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    params = params or {}
    for k in kinds:
        if k not in KIND_TAGS or k == "clear":
            raise ValueError(f"unknown degradation kind {k!r}")
    plist = {k: params.get(k, DegradationParams(k)) for k in kinds}
    entries = []
    for i, t in enumerate(triplets):
        name = f"t{t.index:04d}"
        d = out / name
        d.mkdir(exist_ok=True)
        files = {"prev": f"{name}/prev.ppm", "next": f"{name}/next.ppm", "depth": f"{name}/depth.pfm",
                 "oracle": f"{name}/oracle.pfm", "d": f"{name}/cur_d.ppm"}
        write_ppm(out / files["prev"], t.prev)
        write_ppm(out / files["next"], t.next)
        write_ppm(out / files["d"], t.cur)
        write_pfm(out / files["depth"], t.depth)
        write_pfm(out / files["oracle"], oracle_relative_depth(t.depth, scale_jitter_seed=[seed, i, 1000]))
        for j, kind in enumerate(kinds):
            tag = KIND_TAGS[kind]
            files[tag] = f"{name}/cur_{tag}.ppm"
            write_ppm(out / files[tag], degrade(t.cur, t.depth, plist[kind], seed=[seed, i, j]))
        entries.append({"index": t.index, "pose_to_prev": list(t.pose_to_prev.vector),
                        "pose_to_next": list(t.pose_to_next.vector), "files": files})
    index = {
        "format": "acdepth-dataset",
        "version": FORMAT_VERSION,
        "seed": seed,
        "intrinsics": _intrinsics_dict(triplets[0].K) if triplets else None,
        "kinds": list(kinds),
        "tags": {k: KIND_TAGS[k] for k in ("clear", *kinds)},
        "degradations": {k: dataclasses.asdict(p) for k, p in plist.items()},
        "triplets": entries,
    }
    (out / INDEX_NAME).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index


def load_dataset(path) -> Dataset:
    path = Path(path)
    index_file = path / INDEX_NAME
    if not index_file.exists():
        raise FileNotFoundError(f"{path}: no {INDEX_NAME} (not a dataset directory?)")
    index = json.loads(index_file.read_text())
    if index.get("format") != "acdepth-dataset":
        raise ValueError(f"{index_file}: unrecognised dataset format")
    K = CameraIntrinsics(**index["intrinsics"])
    kinds = tuple(index["kinds"])
    triplets, samples = [], []
    for e in index["triplets"]:
        f = e["files"]
        cur, depth = read_ppm(path / f["d"]), read_pfm(path / f["depth"])
        triplets.append(FrameTriplet(
            prev=read_ppm(path / f["prev"]), cur=cur, next=read_ppm(path / f["next"]),
            pose_to_prev=RigidPose.from_vector(e["pose_to_prev"]),
            pose_to_next=RigidPose.from_vector(e["pose_to_next"]),
            depth=depth, K=K, index=e["index"]))
        variants = {k: read_ppm(path / f[KIND_TAGS[k]]) for k in kinds}
        samples.append(TrainingSample(cur, variants, depth, read_pfm(path / f["oracle"])))
    return Dataset(K, kinds, triplets, samples, index.get("seed", 0))
