"""Library dataset: sampled cells plus their normalized stiffness entries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import lattice
from .homogenization import BaseMaterial, homogenize, normalize
from .pgm import write_pgm

log = logging.getLogger(__name__)

ENTRY_NAMES = ("C11", "C12", "C13", "C22", "C23", "C33")
CSV_COLUMNS = ("class", "a", "vf") + ENTRY_NAMES


@dataclass
class LibraryDataset:
    """Per-record class label, rod width, volume fraction and the six
    normalized stiffness entries, with a seed-deterministic 80/20 split."""

    labels: np.ndarray          # (n,) str
    widths: np.ndarray          # (n,)
    vf: np.ndarray              # (n,)
    entries: np.ndarray         # (n, 6) stiffness normalized by E
    seed: int = 0
    train_idx: np.ndarray = field(init=False)
    test_idx: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.widths) == len(self.vf) == self.entries.shape[0] == n):
            raise ValueError("inconsistent record arrays")
        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(n)
        n_train = int(round(0.8 * n))
        self.train_idx = np.sort(perm[:n_train])
        self.test_idx = np.sort(perm[n_train:])

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_levels(self) -> list[str]:
        return sorted(set(self.labels))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"class": self.labels, "a": self.widths, "vf": self.vf})
        for k, name in enumerate(ENTRY_NAMES):
            df[name] = self.entries[:, k]
        return df

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.12g")

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "LibraryDataset":
        df = pd.read_csv(path)
        missing = [c for c in CSV_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"library CSV missing columns: {missing}")
        if len(df) == 0:
            raise ValueError("library CSV is empty")
        return cls(
            labels=df["class"].to_numpy(dtype=str),
            widths=df["a"].to_numpy(dtype=float),
            vf=df["vf"].to_numpy(dtype=float),
            entries=df[list(ENTRY_NAMES)].to_numpy(dtype=float),
            seed=seed,
        )

    def subset(self, idx: np.ndarray) -> "LibraryDataset":
        return LibraryDataset(self.labels[idx], self.widths[idx], self.vf[idx],
                              self.entries[idx], seed=self.seed)


def generate_library(samples_per_class: int = 80, seed: int = 0,
                     material: BaseMaterial | None = None,
                     void_stiffness_ratio: float = 1e-9,
                     out_dir: Path | str | None = None,
                     workers: int = 1,
                     progress: bool = False) -> LibraryDataset:
    """Sample every class, homogenize each cell and collect the dataset.

    With ``out_dir`` set, writes ``library.csv`` and one PGM per bitmap under
    ``bitmaps/<class>_<index>.pgm``.
    """
    material = material or BaseMaterial()
    cells = lattice.sample_library(samples_per_class, seed=seed)
    entries = _homogenize_cells(cells, material, void_stiffness_ratio,
                                workers=workers, progress=progress)
    ds = LibraryDataset(
        labels=np.array([c.label for c in cells]),
        widths=np.array([c.a for c in cells]),
        vf=np.array([c.vf for c in cells]),
        entries=entries,
        seed=seed,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "bitmaps").mkdir(parents=True, exist_ok=True)
        ds.to_csv(out_dir / "library.csv")
        counters: dict[str, int] = {}
        for cell in cells:
            k = counters.get(cell.label, 0)
            counters[cell.label] = k + 1
            write_pgm(out_dir / "bitmaps" / f"{cell.label}_{k:03d}.pgm", cell.bitmap)
    return ds


def _homogenize_one(args):
    bitmap, material, ratio = args
    return normalize(homogenize(bitmap, material, ratio), material.E).vector


def _homogenize_cells(cells, material, ratio, workers=1, progress=False) -> np.ndarray:
    tasks = [(c.bitmap, material, ratio) for c in cells]
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(workers) as pool:
            rows = pool.map(_homogenize_one, tasks, chunksize=4)
    else:
        rows = []
        for k, t in enumerate(tasks):
            rows.append(_homogenize_one(t))
            if progress and (k + 1) % 50 == 0:
                log.info("homogenized %d/%d cells", k + 1, len(tasks))
    return np.vstack(rows)
