"""Serialization: JSON with numpy values, CSV tables, npz arrays, and a
content-addressed store for converged profiles."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .model import get_model
from .profile import WaveProfile


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": to_jsonable(obj.real), "im": to_jsonable(obj.imag)}
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True))


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def write_csv(path: Path, header: list[str], rows: Iterable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def digest(obj) -> str:
    """Stable hash of a JSON-serializable object."""
    text = json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_profile(path: Path, profile: WaveProfile) -> None:
    np.savez(path, U=profile.U, k=profile.k, c=profile.c, M=profile.M, q=profile.q,
             residual_norm=profile.residual_norm, model=profile.model.name,
             params=json.dumps(to_jsonable(profile.model.params), sort_keys=True))


def load_profile(path: Path) -> WaveProfile:
    with np.load(path, allow_pickle=False) as z:
        model = get_model(str(z["model"]), **json.loads(str(z["params"])))
        return WaveProfile(model, z["U"], float(z["k"]), float(z["c"]), z["M"], z["q"], float(z["residual_norm"]))


class ProfileStore:
    """Converged profiles keyed by a hash of everything that determines them."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, key: str) -> Path:
        return self.root / f"{key}.npz"

    def get(self, key: str) -> Optional[WaveProfile]:
        p = self.path(key)
        return load_profile(p) if p.exists() else None

    def put(self, key: str, profile: WaveProfile) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(key)
        save_profile(p, profile)
        return p
