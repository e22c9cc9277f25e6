"""Synthetic "encoder features" with a planted two-level class hierarchy.

Every location is a unit vector drawn around one fine-class center; fine
classes are grouped under coarse classes. Coarse centers sit at a fixed
angle from each other (orthogonal by default) and each fine center is its
coarse center rotated by a fixed angle toward its own private direction.
"""

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .linalg import read_csv, write_csv


@dataclass(frozen=True)
class SynthParams:
    n_coarse: int = 3
    fine_per_coarse: int = 2
    dim: int = 32
    noise: float = 0.05
    coarse_angle: float = 90.0  # degrees between coarse centers
    fine_angle: float = 15.0  # degrees between a fine center and its coarse center
    n_images: int = 16
    locations: int = 48  # per image

    @property
    def n_fine(self):
        return self.n_coarse * self.fine_per_coarse

    def validate(self):
        if self.n_coarse < 1 or self.fine_per_coarse < 1:
            raise InvalidConfig("class counts must be >= 1")
        if self.n_images < 1 or self.locations < 1:
            raise InvalidConfig("n_images and locations must be >= 1")
        if self.noise < 0:
            raise InvalidConfig(f"noise must be >= 0, got {self.noise}")
        if self.dim < self.n_fine:
            raise InvalidConfig(
                f"dim={self.dim} cannot hold {self.n_fine} orthogonal fine directions")
        if not 0 < self.coarse_angle <= 90:
            raise InvalidConfig("coarse_angle must lie in (0, 90] degrees")
        if self.coarse_angle < 90 and self.dim < self.n_fine + 1:
            raise InvalidConfig("a non-orthogonal coarse angle needs dim > n_coarse * fine_per_coarse")
        if not 0 <= self.fine_angle < 90:
            raise InvalidConfig("fine_angle must lie in [0, 90) degrees")


@dataclass
class FeatureBatch:
    """One "image": ``P x C`` encoder features, optionally their ``P x D`` projection."""
    encoder: np.ndarray
    projected: np.ndarray = None

    @property
    def n_locations(self):
        return self.encoder.shape[0]


@dataclass
class SyntheticDataset:
    features: list
    coarse_labels: list
    fine_labels: list
    params: SynthParams
    seed: int
    coarse_centers: np.ndarray = None
    fine_centers: np.ndarray = None

    def all_encoder(self):
        return np.concatenate([f.encoder for f in self.features])

    def all_coarse(self):
        return np.concatenate(self.coarse_labels)

    def all_fine(self):
        return np.concatenate(self.fine_labels)

    def dump(self, out_dir):
        dump_dataset(self, out_dir)


def _centers(p, rng):
    q, _ = np.linalg.qr(rng.standard_normal((p.dim, p.dim)))
    basis = q.T  # rows orthonormal
    f = p.fine_per_coarse
    coarse = np.zeros((p.n_coarse, p.dim))
    fine = np.zeros((p.n_fine, p.dim))
    if p.coarse_angle < 90:
        cos_t = math.cos(math.radians(p.coarse_angle))
        shift = math.sqrt(cos_t / (1.0 - cos_t)) * basis[p.n_fine]
    else:
        shift = np.zeros(p.dim)
    phi = math.radians(p.fine_angle)
    for j in range(p.n_coarse):
        own = basis[j * f:(j + 1) * f]
        c = own.sum(axis=0) / math.sqrt(f)
        c = c + shift
        c /= np.linalg.norm(c)
        coarse[j] = c
        for m in range(f):
            d = own[m] - (own[m] @ c) * c
            # fine_per_coarse == 1 has no offset direction: the fine center is the coarse one
            if f > 1:
                d /= np.linalg.norm(d)
                fine[j * f + m] = math.cos(phi) * c + math.sin(phi) * d
            else:
                fine[j * f + m] = c
    return coarse, fine


def generate(params=None, seed=0):
    """Draw a dataset; identical ``(params, seed)`` give identical arrays."""
    p = params or SynthParams()
    p.validate()
    rng = np.random.default_rng(seed)
    coarse_c, fine_c = _centers(p, rng)
    _check_geometry(p, coarse_c, fine_c)

    total = p.n_images * p.locations
    fine = rng.permutation(np.arange(total) % p.n_fine)
    x = fine_c[fine] + p.noise * rng.standard_normal((total, p.dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    coarse = fine // p.fine_per_coarse

    feats, cl, fl = [], [], []
    for i in range(p.n_images):
        sl = slice(i * p.locations, (i + 1) * p.locations)
        feats.append(FeatureBatch(x[sl].copy()))
        cl.append(coarse[sl].copy())
        fl.append(fine[sl].copy())
    return SyntheticDataset(feats, cl, fl, p, seed, coarse_c, fine_c)


def _check_geometry(p, coarse, fine):
    cc = coarse @ coarse.T
    want = math.cos(math.radians(p.coarse_angle))
    off = cc[~np.eye(p.n_coarse, dtype=bool)]
    if off.size and np.max(np.abs(off - want)) > 1e-9:
        raise AssertionError("coarse centers do not sit at the requested angle")
    f = p.fine_per_coarse
    if f == 1:
        return  # fine centers coincide with their coarse center
    for j in range(p.n_coarse):
        block = fine[j * f:(j + 1) * f] @ coarse[j]
        if np.max(np.abs(block - math.cos(math.radians(p.fine_angle)))) > 1e-9:
            raise AssertionError("fine centers do not sit at the requested angle")


def geometry_summary(ds):
    """Largest cross-coarse cosine and smallest same-coarse fine-fine cosine."""
    p = ds.params
    cc = ds.coarse_centers @ ds.coarse_centers.T
    cross = float(np.max(cc[~np.eye(p.n_coarse, dtype=bool)])) if p.n_coarse > 1 else 0.0
    f = p.fine_per_coarse
    same = 1.0
    for j in range(p.n_coarse):
        blk = ds.fine_centers[j * f:(j + 1) * f]
        same = min(same, float(np.min(blk @ blk.T)))
    return {"max_coarse_cosine": cross, "min_sibling_fine_cosine": same}


def dump_dataset(ds, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, fb in enumerate(ds.features):
        write_csv(out / f"image_{i:04d}.csv", fb.encoder)
    with (out / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "location", "coarse", "fine"])
        for i, (c, f) in enumerate(zip(ds.coarse_labels, ds.fine_labels)):
            for p, (a, b) in enumerate(zip(c, f)):
                w.writerow([i, p, int(a), int(b)])
    lines = [f"{k} = {v}" for k, v in asdict(ds.params).items()] + [f"seed = {ds.seed}"]
    (out / "params.txt").write_text("\n".join(lines) + "\n")


def load_dataset(in_dir):
    src = Path(in_dir)
    kv = {}
    for line in (src / "params.txt").read_text().splitlines():
        if "=" in line:
            k, v = (t.strip() for t in line.split("=", 1))
            kv[k] = v
    types = {f.name: f.type for f in fields(SynthParams)}
    params = SynthParams(**{k: (int if types[k] in (int, "int") else float)(v)
                            for k, v in kv.items() if k in types})
    seed = int(kv.get("seed", 0))
    feats = [FeatureBatch(read_csv(p)) for p in sorted(src.glob("image_*.csv"))]
    coarse = [np.zeros(fb.n_locations, dtype=np.int64) for fb in feats]
    fine = [np.zeros(fb.n_locations, dtype=np.int64) for fb in feats]
    with (src / "labels.csv").open() as fh:
        for row in csv.DictReader(fh):
            i, p = int(row["image"]), int(row["location"])
            coarse[i][p] = int(row["coarse"])
            fine[i][p] = int(row["fine"])
    return SyntheticDataset(feats, coarse, fine, params, seed)
