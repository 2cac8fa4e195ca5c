"""Dataset materialization: PPM/PGM files plus a JSON manifest.

Per-sample seeds are derived from (master seed, split, family, index)
through `numpy.random.SeedSequence`, so re-running a config reproduces
every file byte for byte; the manifest records a sha256 per file and a
digest of the generating config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import netpbm, synth

SPLITS = ("train", "test_ind", "test_ood")
_SPLIT_CODE = {s: i for i, s in enumerate(SPLITS)}
_FAMILY_CODE = {f: i for i, f in enumerate(synth.FAMILIES)}


@dataclass
class DataConfig:
    out_dir: str
    image_size: int = 64
    train_per_family: int = 250
    test_ind_per_family: int = 50
    test_ood: int = 100
    jitter_frac: float = 0.15
    seed: int = 7

    def digest(self) -> str:
        return sha256_text(json.dumps(asdict(self), sort_keys=True))


@dataclass
class Record:
    path: str
    mask_path: str
    box: tuple[int, int, int, int]
    family: str
    seed: int
    split: str
    digest: str = ""
    mask_digest: str = ""


@dataclass
class Manifest:
    image_size: int
    config_digest: str
    counts: dict[str, int] = field(default_factory=dict)
    records: list[Record] = field(default_factory=list)

    def split(self, name: str) -> list[Record]:
        if name not in SPLITS:
            raise ValueError(f"unknown split '{name}' (have {SPLITS})")
        return [r for r in self.records if r.split == name]


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sample_seed(master: int, split: str, family: str, index: int) -> int:
    ss = np.random.SeedSequence([master, _SPLIT_CODE[split], _FAMILY_CODE[family], index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _plan(cfg: DataConfig):
    plan = []
    for fam in synth.IND_FAMILIES:
        plan += [("train", fam, i) for i in range(cfg.train_per_family)]
    for fam in synth.IND_FAMILIES:
        plan += [("test_ind", fam, i) for i in range(cfg.test_ind_per_family)]
    for fam in synth.OOD_FAMILIES:
        plan += [("test_ood", fam, i) for i in range(cfg.test_ood)]
    return plan


def write_dataset(cfg: DataConfig) -> Manifest:
    """Generate every sample in the plan, write files, verify digests."""
    root = Path(cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(image_size=cfg.image_size, config_digest=cfg.digest())

    for split, family, index in _plan(cfg):
        seed = sample_seed(cfg.seed, split, family, index)
        sample = synth.generate_sample(seed, cfg.image_size, cfg.image_size,
                                       family, cfg.jitter_frac)
        stem = f"{split}_{family}_{index:05d}"
        img_path = root / f"{stem}.ppm"
        mask_path = root / f"{stem}.pgm"
        netpbm.write_ppm(img_path, sample.image)
        netpbm.write_pgm(mask_path, sample.gt_mask)
        rec = Record(path=img_path.name, mask_path=mask_path.name,
                     box=sample.coarse_box, family=family, seed=seed, split=split,
                     digest=sha256_file(img_path), mask_digest=sha256_file(mask_path))
        manifest.records.append(rec)
        manifest.counts[family] = manifest.counts.get(family, 0) + 1

    verify_manifest(manifest, root)
    with open(root / "manifest.json", "w") as fh:
        json.dump({
            "image_size": manifest.image_size,
            "config_digest": manifest.config_digest,
            "counts": manifest.counts,
            "records": [asdict(r) for r in manifest.records],
        }, fh, indent=1, sort_keys=True)
    return manifest


def verify_manifest(manifest: Manifest, root) -> None:
    """Re-read every file and compare its digest to the manifest."""
    root = Path(root)
    for rec in manifest.records:
        for rel, want in ((rec.path, rec.digest), (rec.mask_path, rec.mask_digest)):
            p = root / rel
            if not p.exists():
                raise FileNotFoundError(f"manifest names a missing file: {p}")
            got = sha256_file(p)
            if got != want:
                raise ValueError(f"digest mismatch for {p}: {got} != {want}")


def load_manifest(path) -> tuple[Manifest, Path]:
    path = Path(path)
    root = path.parent if path.suffix == ".json" else path
    man_file = path if path.suffix == ".json" else path / "manifest.json"
    with open(man_file) as fh:
        raw = json.load(fh)
    manifest = Manifest(image_size=raw["image_size"], config_digest=raw["config_digest"],
                        counts=dict(raw["counts"]))
    for r in raw["records"]:
        manifest.records.append(Record(path=r["path"], mask_path=r["mask_path"],
                                       box=tuple(r["box"]), family=r["family"],
                                       seed=r["seed"], split=r["split"],
                                       digest=r["digest"], mask_digest=r["mask_digest"]))
    return manifest, root


def load_record(rec: Record, root) -> tuple[np.ndarray, np.ndarray]:
    """Load (image float32 in [0,1], boolean mask) for a manifest record."""
    root = Path(root)
    return netpbm.read_ppm(root / rec.path), netpbm.read_mask(root / rec.mask_path)
