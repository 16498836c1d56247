"""Dataset manifests, deep-feature sidecars, split rules and a synthetic leaf renderer."""
from __future__ import annotations

import enum
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

MANIFEST_HEADER = "leafscope-manifest v1"
FEATURES_HEADER = "leafscope-features v1"
ROTATIONS = (0, 90, 180, 270)
SPLITS = ("train", "test", "unassigned")


class FormatError(ValueError):
    pass


class Tier(str, enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def test_count(self) -> int:
        return {"low": 5, "medium": 10, "high": 15}[self.value]


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    label: str
    split: str = "unassigned"
    rotation: int = 0
    deep_feature_id: str | None = None

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def key(self) -> str:
        """Feature-row id: ``path#rotation``."""
        return f"{self.image_path}#{self.rotation}"


@dataclass
class Manifest:
    records: list[SampleRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            k = (r.image_path, r.rotation)
            if k in seen:
                raise FormatError(f"duplicate record {r.image_path} r{r.rotation}")
            seen.add(k)

    @property
    def species(self) -> list[str]:
        return list(dict.fromkeys(r.label for r in self.records))

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def __len__(self) -> int:
        return len(self.records)


def _check_field(value: str, what: str) -> str:
    if not value or any(ch in value for ch in "\t\n\r"):
        raise FormatError(f"{what} must be non-empty and free of tabs/newlines: {value!r}")
    return value


def dumps_manifest(m: Manifest) -> str:
    lines = [MANIFEST_HEADER]
    for r in m.records:
        fields = [
            _check_field(r.image_path, "path"),
            _check_field(r.label, "label"),
            r.split,
            f"r{r.rotation}",
        ]
        if r.deep_feature_id is not None:
            fields.append(_check_field(r.deep_feature_id, "deep feature id"))
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def loads_manifest(text: str) -> Manifest:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].rstrip("\r") != MANIFEST_HEADER:
        raise FormatError(f"line 1: expected header {MANIFEST_HEADER!r}")
    records = []
    seen = set()
    for no, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (4, 5):
            raise FormatError(f"line {no}: expected 4 or 5 tab-separated fields, got {len(parts)}")
        path, label, split, rot = parts[:4]
        if not path or not label:
            raise FormatError(f"line {no}: empty path or label")
        if split not in SPLITS:
            raise FormatError(f"line {no}: unknown split token {split!r}")
        if rot not in {f"r{a}" for a in ROTATIONS}:
            raise FormatError(f"line {no}: unknown rotation token {rot!r}")
        deep = parts[4] if len(parts) == 5 else None
        if deep == "":
            raise FormatError(f"line {no}: empty deep feature id")
        rec = SampleRecord(path, label, split, int(rot[1:]), deep)
        if (path, rec.rotation) in seen:
            raise FormatError(f"line {no}: duplicate record {path} {rot}")
        seen.add((path, rec.rotation))
        records.append(rec)
    return Manifest(records)


def load_manifest(path: str | os.PathLike) -> Manifest:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_manifest(fh.read())


def save_manifest(m: Manifest, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_manifest(m))


def resolve_image(m_path: str | os.PathLike, record: SampleRecord) -> str:
    """Image paths in a manifest are relative to the manifest's directory."""
    if os.path.isabs(record.image_path):
        return record.image_path
    return os.path.join(os.path.dirname(os.path.abspath(m_path)), record.image_path)


def augment_rotations(m: Manifest) -> Manifest:
    """Expand every record into its 0/90/180/270 degree copies (split and label kept)."""
    out = []
    for r in m.records:
        if r.rotation != 0:
            raise ValueError(f"{r.image_path}: already rotated (r{r.rotation})")
        out.extend(replace(r, rotation=a) for a in ROTATIONS)
    return Manifest(out)


def assign_split(m: Manifest, tiers: Mapping[str, Tier | str], seed: int = 0) -> Manifest:
    """Mark exactly the tier's test count of each species as test, the rest train.

    Rotated copies of one image always share a split; the draw is over base
    images, uniform without replacement, seeded per call.
    """
    rng = np.random.default_rng(seed)
    by_species: dict[str, list[str]] = {}
    for r in m.records:
        paths = by_species.setdefault(r.label, [])
        if r.image_path not in paths:
            paths.append(r.image_path)
    test_paths = set()
    for species in sorted(by_species):
        if species not in tiers:
            raise ValueError(f"species {species!r} has no variation tier")
        tier = Tier(tiers[species])
        paths = sorted(by_species[species])
        if len(paths) < tier.test_count + 1:
            raise ValueError(
                f"species {species!r} has {len(paths)} images, needs at least {tier.test_count + 1} for tier {tier.value}"
            )
        picked = rng.choice(len(paths), size=tier.test_count, replace=False)
        test_paths.update((species, paths[i]) for i in picked)
    return Manifest(
        [replace(r, split="test" if (r.label, r.image_path) in test_paths else "train") for r in m.records]
    )


@dataclass
class FeatureStore:
    """Keyed feature vectors of one fixed dimension (deep sidecars and extracted features)."""

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.entries.items():
            if np.shape(v) != (self.dim,):
                raise FormatError(f"feature {k!r} has shape {np.shape(v)}, store dim is {self.dim}")

    def add(self, key: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise FormatError(f"feature {key!r} has {vec.size} values, store dim is {self.dim}")
        if key in self.entries:
            raise FormatError(f"duplicate feature id {key!r}")
        self.entries[key] = vec

    def __getitem__(self, key: str) -> np.ndarray:
        return self.entries[key]

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def matrix(self, keys: Iterable[str]) -> np.ndarray:
        keys = list(keys)
        missing = [k for k in keys if k not in self.entries]
        if missing:
            raise KeyError(f"{len(missing)} feature rows missing, first: {missing[0]!r}")
        return np.stack([self.entries[k] for k in keys]) if keys else np.zeros((0, self.dim))


def dumps_features(store: FeatureStore) -> str:
    lines = [f"{FEATURES_HEADER} dim={store.dim}"]
    for key, vec in store.entries.items():
        _check_field(key, "feature id")
        lines.append(key + "\t" + " ".join(format(float(v), ".17g") for v in vec))
    return "\n".join(lines) + "\n"


def loads_features(text: str) -> FeatureStore:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    head = lines[0].split() if lines else []
    if len(head) != 3 or " ".join(head[:2]) != FEATURES_HEADER or not head[2].startswith("dim="):
        raise FormatError(f"line 1: expected header '{FEATURES_HEADER} dim=<D>'")
    try:
        dim = int(head[2][4:])
    except ValueError as exc:
        raise FormatError(f"line 1: bad dimension {head[2]!r}") from exc
    if dim < 0:
        raise FormatError("line 1: negative dimension")
    store = FeatureStore(dim)
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, rest = line.partition("\t")
        if not sep or not key:
            raise FormatError(f"line {no}: expected 'id<TAB>values'")
        parts = rest.split()
        if len(parts) != dim:
            raise FormatError(f"line {no} ({key}): {len(parts)} values, expected dim={dim}")
        try:
            vec = np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"line {no} ({key}): non-numeric field ({exc})") from exc
        if key in store:
            raise FormatError(f"line {no}: duplicate id {key!r}")
        store.add(key, vec)
    return store


def load_features(path: str | os.PathLike) -> FeatureStore:
    with open(path, encoding="utf-8") as fh:
        return loads_features(fh.read())


def save_features(store: FeatureStore, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_features(store))


load_deep_features = load_features


# ---------------------------------------------------------------------------
# synthetic leaves


@dataclass(frozen=True)
class LeafSpec:
    name: str = "leaf"
    aspect: float = 1.6
    lobes: int = 0
    lobe_depth: float = 0.0
    serration: float = 0.0
    teeth: int = 40
    stem_length: float = 0.15
    stem_width: float = 3.0
    tier: str = "low"
    color: tuple[int, int, int] = (70, 125, 45)

    def validate(self) -> None:
        if not 1.0 <= self.aspect <= 4.0:
            raise ValueError(f"{self.name}: aspect must be in [1, 4]")
        if not 0 <= self.lobes <= 16:
            raise ValueError(f"{self.name}: lobes must be in [0, 16]")
        if not 0.0 <= self.lobe_depth < 0.6:
            raise ValueError(f"{self.name}: lobe_depth must be in [0, 0.6)")
        if not 0.0 <= self.serration <= 0.15:
            raise ValueError(f"{self.name}: serration must be in [0, 0.15]")
        if not 0 <= self.teeth <= 120:
            raise ValueError(f"{self.name}: teeth must be in [0, 120]")
        if not 0.0 <= self.stem_length <= 0.4:
            raise ValueError(f"{self.name}: stem_length must be in [0, 0.4]")
        if not 0.0 <= self.stem_width <= 6.0:
            raise ValueError(f"{self.name}: stem_width must be in [0, 6] pixels")
        Tier(self.tier)
        if any(not 0 <= c <= 255 for c in self.color):
            raise ValueError(f"{self.name}: color channels must be in [0, 255]")


DEFAULT_CLASSES: tuple[LeafSpec, ...] = (
    LeafSpec("ovata", aspect=1.3),
    LeafSpec("lanceolata", aspect=2.8),
    LeafSpec("triloba", aspect=1.2, lobes=3, lobe_depth=0.3),
    LeafSpec("pentaloba", aspect=1.1, lobes=5, lobe_depth=0.35),
    LeafSpec("serrata", aspect=1.8, serration=0.08, teeth=36),
    LeafSpec("heptaloba", aspect=1.0, lobes=7, lobe_depth=0.25),
    LeafSpec("biloba", aspect=1.5, lobes=2, lobe_depth=0.4),
    LeafSpec("dentata", aspect=1.2, lobes=4, lobe_depth=0.2, serration=0.06, teeth=60),
)


def leaf_radius(spec: LeafSpec, theta: np.ndarray, phase: float = 0.0) -> np.ndarray:
    """Radial profile (unit semi-major axis) of a parametric leaf."""
    a, b = 1.0, 1.0 / spec.aspect
    base = a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
    lobed = 1.0 + spec.lobe_depth * np.cos(spec.lobes * theta)
    teeth = 1.0 + spec.serration * np.abs(np.sin(0.5 * spec.teeth * theta + phase))
    return base * lobed * teeth / (1.0 + spec.lobe_depth) / (1.0 + spec.serration)


def synth_leaf(
    spec: LeafSpec, size: int = 256, seed: int = 0, jitter: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Render a leaf on a near-white, mildly noisy background.

    Returns ``(rgb image, ground-truth blade mask)``; the stem is drawn but is
    not part of the ground truth. With ``jitter`` the seed also perturbs
    scale, orientation, position, color and serration phase.
    """
    spec.validate()
    if size < 32:
        raise ValueError("size must be >= 32")
    rng = np.random.default_rng(seed)
    if jitter:
        scale = rng.uniform(0.30, 0.36) * size
        tilt = math.radians(rng.uniform(-8, 8))
        shift = rng.uniform(-0.03, 0.03, size=2) * size
        phase = rng.uniform(0, math.pi)
        tint = rng.integers(-12, 13, size=3)
    else:
        scale, tilt, shift, phase, tint = 0.33 * size, 0.0, np.zeros(2), 0.0, np.zeros(3, dtype=int)
    cx, cy = size / 2 + shift[0], size / 2 + shift[1]

    ys, xs = np.mgrid[:size, :size].astype(np.float64)
    # leaf frame: major axis along x after undoing the tilt
    dx, dy = xs - cx, ys - cy
    u = dx * math.cos(tilt) + dy * math.sin(tilt)
    v = -dx * math.sin(tilt) + dy * math.cos(tilt)
    rho = np.hypot(u, v)
    theta = np.arctan2(v, u)
    mask = rho <= scale * leaf_radius(spec, theta, phase)

    stem = np.zeros_like(mask)
    if spec.stem_length > 0 and spec.stem_width > 0:
        # stem leaves the blade along the negative major axis
        base_u = -scale * float(leaf_radius(spec, np.array([math.pi]), phase)[0])
        stem = (u <= base_u + 2) & (u >= base_u - spec.stem_length * size) & (np.abs(v) <= spec.stem_width / 2)
        stem &= ~mask

    bg_level = rng.uniform(232, 248) if jitter else 240.0
    gradient = (xs / size - 0.5) * (rng.uniform(-10, 10) if jitter else 0.0)
    img = np.empty((size, size, 3))
    img[...] = (bg_level + gradient)[..., None]
    img += rng.normal(0, 3.0, size=img.shape)

    color = np.clip(np.array(spec.color) + tint, 0, 255)
    # soft venation shading: darker towards the rim, a faint midrib
    shade = 1.0 - 0.15 * np.clip(rho / scale, 0, 1) - 0.10 * np.exp(-(v**2) / 4.0) * (np.abs(u) < scale)
    leaf = color[None, None, :] * shade[..., None] + rng.normal(0, 4.0, size=img.shape)
    img[mask] = leaf[mask]
    img[stem] = np.array([90, 95, 40]) + rng.normal(0, 3.0, size=(int(stem.sum()), 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def _spec_from_dict(d: Mapping) -> LeafSpec:
    allowed = set(LeafSpec.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown leaf spec keys: {sorted(unknown)}")
    d = dict(d)
    if "color" in d:
        d["color"] = tuple(int(c) for c in d["color"])
    spec = LeafSpec(**d)
    spec.validate()
    return spec


def load_class_specs(path: str | os.PathLike) -> list[LeafSpec]:
    """Read a JSON list of leaf class specs (keys mirror :class:`LeafSpec`)."""
    import json

    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("classes", [])
    specs = [_spec_from_dict(d) for d in data]
    names = [s.name for s in specs]
    if len(set(names)) != len(names) or not specs:
        raise ValueError("class spec file must list at least one class with unique names")
    return specs
