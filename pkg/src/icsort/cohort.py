"""Domain types, synthetic cohort generation, and bit-exact cohort persistence.

The generator embeds the expert-described class archetypes so every
downstream claim is testable without clinical data:

* SOZ  -- one large activation cluster running from the brain boundary
          (through the white-matter band) into a ventricle; BOLD dominated by
          an in-band frequency above 0.073 Hz with irregular transients.
* RSN  -- 2..6 compact clusters in gray matter, clear of ventricles and of
          the white-matter band; smooth BOLD dominated by a low frequency.
* Noise -- scattered speckle over the whole frame plus rim arcs hugging the
          brain boundary; spiky broadband BOLD.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import anatomy
from .errors import CohortFormatError, ConfigError

FORMAT_VERSION = 1
IC_MAGIC = b"ICSL"
RNG_NAME = "numpy PCG64 via SeedSequence.spawn"


class ICLabel(enum.IntEnum):
    NOISE = 0
    RSN = 1
    SOZ = 2

    def __str__(self) -> str:  # "Noise" / "RSN" / "SOZ" in files and reports
        return _LABEL_NAMES[self]


_LABEL_NAMES = {ICLabel.NOISE: "Noise", ICLabel.RSN: "RSN", ICLabel.SOZ: "SOZ"}
_LABEL_BY_NAME = {name: lab for lab, name in _LABEL_NAMES.items()}


def label_from_name(name: str) -> ICLabel:
    try:
        return _LABEL_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown IC label {name!r}") from None


@dataclass(eq=False)
class IndependentComponent:
    ic_id: str
    slices: np.ndarray  # (n_slices, height, width) float32, >= 0
    bold: np.ndarray  # (bold_len,) float32
    tr_seconds: float
    truth: ICLabel

    def validate(self) -> None:
        if self.slices.ndim != 3 or self.slices.shape[0] < 1:
            raise ValueError(f"{self.ic_id}: slices must be a non-empty 3-D stack")
        if self.bold.ndim != 1:
            raise ValueError(f"{self.ic_id}: bold must be 1-D")
        if not np.isfinite(self.slices).all() or not np.isfinite(self.bold).all():
            raise ValueError(f"{self.ic_id}: non-finite values")


@dataclass(eq=False)
class Patient:
    patient_id: str
    ics: list[IndependentComponent]
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.ics:
            raise ValueError(f"{self.patient_id}: needs at least one IC")
        ids = [ic.ic_id for ic in self.ics]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.patient_id}: duplicate IC ids")


@dataclass(eq=False)
class Cohort:
    patients: list[Patient]
    manifest: dict

    def validate(self) -> None:
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate patient ids")
        for p in self.patients:
            p.validate()


@dataclass(frozen=True)
class GeneratorParams:
    n_patients: int = 52
    ics_per_patient: int = 100
    class_mix: tuple[float, float, float] = (0.55, 0.40, 0.05)  # noise, rsn, soz
    slice_dims: tuple[int, int, int] = (12, 64, 64)  # n_slices, height, width
    tr_seconds: float = 2.0
    bold_len: int = 300
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1 or self.ics_per_patient < 1:
            raise ConfigError("n_patients and ics_per_patient must be >= 1")
        mix = self.class_mix
        if len(mix) != 3 or any(f < 0 or f > 1 for f in mix):
            raise ConfigError("class_mix must be three fractions in [0, 1]")
        if abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"class_mix must sum to 1, got {sum(mix)}")
        n_slices, h, w = self.slice_dims
        if n_slices < 1:
            raise ConfigError("need at least one slice")
        if h < anatomy.MIN_SLICE_DIM or w < anatomy.MIN_SLICE_DIM:
            raise ConfigError(
                f"slice dims {h}x{w} cannot contain brain ellipse + ventricles "
                f"(minimum {anatomy.MIN_SLICE_DIM}x{anatomy.MIN_SLICE_DIM})"
            )
        if self.tr_seconds <= 0:
            raise ConfigError("tr_seconds must be positive")
        if self.bold_len < 1:
            raise ConfigError("bold_len must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "ics_per_patient": self.ics_per_patient,
            "class_mix": list(self.class_mix),
            "slice_dims": list(self.slice_dims),
            "tr_seconds": self.tr_seconds,
            "bold_len": self.bold_len,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        return cls(
            n_patients=int(d["n_patients"]),
            ics_per_patient=int(d["ics_per_patient"]),
            class_mix=tuple(float(x) for x in d["class_mix"]),
            slice_dims=tuple(int(x) for x in d["slice_dims"]),
            tr_seconds=float(d["tr_seconds"]),
            bold_len=int(d["bold_len"]),
            seed=int(d["seed"]),
        )


def class_counts(n_ics: int, mix: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder rounding of the class mix, forcing >= 1 SOZ when its
    fraction is positive (steal from the most populous class)."""
    floors = [math.floor(f * n_ics) for f in mix]
    remainders = [f * n_ics - fl for f, fl in zip(mix, floors)]
    short = n_ics - sum(floors)
    for idx in sorted(range(3), key=lambda i: (-remainders[i], i))[:short]:
        floors[idx] += 1
    if mix[2] > 0 and floors[2] == 0:
        floors[int(np.argmax(floors[:2]))] -= 1
        floors[2] = 1
    return floors[0], floors[1], floors[2]


# ---------------------------------------------------------------------------
# Archetype rendering
# ---------------------------------------------------------------------------

TEMPLATE_GAIN = 0.30  # template contribution to activation slices
BACKGROUND_NOISE_SD = 0.02


@lru_cache(maxsize=8)
def _placement_fields(height: int, width: int):
    """Distance fields used to keep RSN blobs clear of ventricles and of the
    white-matter band, and to draw rim artifacts along the brain edge."""
    geom = anatomy.slice_geometry(height, width)
    brain = geom.brain.mask(height, width)
    edge = brain & ~ndimage.binary_erosion(brain)
    edge_dist = ndimage.distance_transform_edt(~edge)
    vent = geom.ventricle_mask()
    keep_out = vent | (edge_dist <= anatomy.band_width(height, width))
    clearance = ndimage.distance_transform_edt(~keep_out)
    for arr in (edge_dist, clearance):
        arr.setflags(write=False)
    return geom, edge_dist, clearance


def _radial_blob(height: int, width: int, cy: float, cx: float, r_core: float) -> np.ndarray:
    """Plateau blob: 1 inside r_core, linear falloff to 0 at r_core + 2.

    The plateau keeps the >=60%-of-max binarization from shrinking the
    active footprint below the intended cluster size.
    """
    yy, xx = np.mgrid[0:height, 0:width]
    d = np.hypot(yy - cy, xx - cx)
    return np.clip((r_core + 2.0 - d) / 2.0, 0.0, 1.0)


def _capsule(height: int, width: int, p0, p1, r_core: float) -> np.ndarray:
    """Plateau capsule around the segment p0->p1 (row/col coordinates)."""
    yy, xx = np.mgrid[0:height, 0:width]
    v = np.array([p1[0] - p0[0], p1[1] - p0[1]], dtype=float)
    vv = float(v @ v)
    t = ((yy - p0[0]) * v[0] + (xx - p0[1]) * v[1]) / max(vv, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    d = np.hypot(yy - (p0[0] + t * v[0]), xx - (p0[1] + t * v[1]))
    return np.clip((r_core + 2.0 - d) / 2.0, 0.0, 1.0)


def _slice_band(rng: np.random.Generator, n_slices: int) -> slice:
    span = max(2, round(0.4 * n_slices)) if n_slices > 1 else 1
    span = min(span, n_slices)
    start = int(rng.integers(0, n_slices - span + 1))
    return slice(start, start + span)


def _soz_pattern(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    geom, _, _ = _placement_fields(height, width)
    vent = geom.ventricles[int(rng.integers(0, len(geom.ventricles)))]
    # Boundary point roughly on the chosen ventricle's side, +/- jitter.
    base = 0.0 if vent.cx > geom.brain.cx else np.pi
    angle = base + rng.uniform(-0.9, 0.9)
    p_edge = geom.brain.boundary_point(angle)
    r_core = 4.5 * min(height, width) / 64.0
    return _capsule(height, width, (vent.cy, vent.cx), p_edge, r_core)


def _rsn_pattern(rng: np.random.Generator, height: int, width: int, n_blobs: int) -> np.ndarray:
    geom, _, clearance = _placement_fields(height, width)
    scale = min(height, width) / 64.0
    pattern = np.zeros((height, width))
    centers: list[tuple[float, float]] = []
    placed = 0
    for _ in range(400):
        if placed == n_blobs:
            break
        r = rng.uniform(2.6, 4.2) * scale
        ang = rng.uniform(0, 2 * np.pi)
        u = rng.uniform(0.35, 0.72)
        cy = geom.brain.cy + u * geom.brain.ry * np.sin(ang)
        cx = geom.brain.cx + u * geom.brain.rx * np.cos(ang)
        iy, ix = int(round(cy)), int(round(cx))
        if not (0 <= iy < height and 0 <= ix < width):
            continue
        if clearance[iy, ix] <= r + 4.0:
            continue  # too close to ventricles or the white-matter band
        if any(np.hypot(cy - oy, cx - ox) <= 2 * r + 6.0 for oy, ox in centers):
            continue
        pattern = np.maximum(pattern, _radial_blob(height, width, cy, cx, r))
        centers.append((cy, cx))
        placed += 1
    return pattern


def _noise_pattern(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    geom, edge_dist, _ = _placement_fields(height, width)
    pattern = np.zeros((height, width))
    n_speckles = int(rng.integers(25, 60))
    rows = rng.integers(0, height, size=n_speckles)
    cols = rng.integers(0, width, size=n_speckles)
    pattern[rows, cols] = rng.uniform(0.7, 1.0, size=n_speckles)
    if rng.random() < 0.7:  # rim artifact arc along the brain boundary
        yy, xx = np.mgrid[0:height, 0:width]
        theta = np.arctan2(yy - geom.brain.cy, xx - geom.brain.cx)
        t0 = rng.uniform(-np.pi, np.pi)
        span = rng.uniform(0.5, 1.3)
        dt = np.mod(theta - t0, 2 * np.pi)
        arc = (edge_dist <= 1.0) & (dt <= span)
        pattern[arc] = rng.uniform(0.8, 1.0)
    return pattern


def _render_slices(
    rng: np.random.Generator, truth: ICLabel, n_slices: int, height: int, width: int
) -> np.ndarray:
    template = anatomy.template_slice(height, width)
    slices = np.empty((n_slices, height, width), dtype=np.float64)
    noise = rng.normal(0.0, BACKGROUND_NOISE_SD, size=slices.shape)
    slices[:] = TEMPLATE_GAIN * template + noise

    if truth == ICLabel.NOISE:
        for k in range(n_slices):
            slices[k] += _noise_pattern(rng, height, width)
    else:
        band = _slice_band(rng, n_slices)
        if truth == ICLabel.SOZ:
            pattern = _soz_pattern(rng, height, width)
        else:
            pattern = _rsn_pattern(rng, height, width, int(rng.integers(2, 7)))
        slices[band] += pattern
    return np.clip(slices, 0.0, None).astype(np.float32)


# ---------------------------------------------------------------------------
# BOLD archetypes
# ---------------------------------------------------------------------------

HF_CUTOFF_HZ = 0.073
BAND_HZ = (0.01, 0.1)


def _dominant_in_band(x: np.ndarray, tr: float, f_lo: float, f_hi: float) -> float:
    """Frequency of the periodogram maximum restricted to [f_lo, f_hi]."""
    n = len(x)
    freqs = np.fft.rfftfreq(n, d=tr)
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    if not sel.any():
        return 0.0
    return float(freqs[sel][np.argmax(power[sel])])


def _tone(rng: np.random.Generator, t: np.ndarray, f: float, amp: float) -> np.ndarray:
    return amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))


def _soz_bold(rng: np.random.Generator, n: int, tr: float) -> np.ndarray:
    t = np.arange(n) * tr
    for _ in range(6):
        f = rng.uniform(0.076, 0.097)
        env = 1.0 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.004, 0.012) * t + rng.uniform(0, 2 * np.pi))
        x = env * _tone(rng, t, f, 1.0)
        for _ in range(int(rng.integers(8, 17))):  # irregular sharp transients
            pos = rng.uniform(0, n - 1)
            w = rng.uniform(0.6, 1.4)
            x += rng.choice([-1.0, 1.0]) * rng.uniform(2.0, 4.0) * np.exp(
                -0.5 * ((np.arange(n) - pos) / w) ** 2
            )
        x += rng.normal(0, 0.08, size=n)
        if _dominant_in_band(x, tr, *BAND_HZ) > HF_CUTOFF_HZ:
            return x
    raise AssertionError("SOZ BOLD archetype failed the dominance predicate")


def _rsn_bold(rng: np.random.Generator, n: int, tr: float) -> np.ndarray:
    t = np.arange(n) * tr
    for _ in range(6):
        x = _tone(rng, t, rng.uniform(0.015, 0.055), 1.0)
        if rng.random() < 0.5:
            x += _tone(rng, t, rng.uniform(0.015, 0.060), 0.35)
        x += rng.normal(0, 0.04, size=n)
        peak = _dominant_in_band(x, tr, *BAND_HZ)
        if 0.0 < peak < HF_CUTOFF_HZ:
            return x
    raise AssertionError("RSN BOLD archetype failed the dominance predicate")


def _noise_bold(rng: np.random.Generator, n: int, tr: float) -> np.ndarray:
    # Spiky broadband plus either slow scanner drift or, for a minority, an
    # aliased physiological tone above the 0.073 Hz cutoff; that subset shows
    # high-frequency dominance the way motion/cardiac artifacts do.
    t = np.arange(n) * tr
    x = rng.normal(0, 1.0, size=n)
    if rng.random() < 0.25:
        x += _tone(rng, t, rng.uniform(0.078, 0.098), rng.uniform(0.5, 0.9))
    else:
        x += _tone(rng, t, rng.uniform(0.012, 0.06), rng.uniform(0.4, 0.9))
    for _ in range(int(rng.integers(4, 11))):
        x[int(rng.integers(0, n))] += rng.choice([-1.0, 1.0]) * rng.uniform(3.0, 6.0)
    return x


# ---------------------------------------------------------------------------
# Cohort generation
# ---------------------------------------------------------------------------

_AGE_GROUPS = ("0-5", "5-13", "13-18")


def _generate_patient(params: GeneratorParams, index: int, seed_seq: np.random.SeedSequence) -> Patient:
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    n_slices, height, width = params.slice_dims
    pid = f"P{index:03d}"

    n_noise, n_rsn, n_soz = class_counts(params.ics_per_patient, params.class_mix)
    truths = [ICLabel.NOISE] * n_noise + [ICLabel.RSN] * n_rsn + [ICLabel.SOZ] * n_soz
    order = rng.permutation(len(truths))

    ics = []
    for k, pos in enumerate(order):
        truth = truths[pos]
        slices = _render_slices(rng, truth, n_slices, height, width)
        maker = {ICLabel.NOISE: _noise_bold, ICLabel.RSN: _rsn_bold, ICLabel.SOZ: _soz_bold}[truth]
        bold = maker(rng, params.bold_len, params.tr_seconds).astype(np.float32)
        ics.append(
            IndependentComponent(
                ic_id=f"{pid}-ic{k:03d}",
                slices=slices,
                bold=bold,
                tr_seconds=params.tr_seconds,
                truth=truth,
            )
        )
    meta = {
        "age_group": _AGE_GROUPS[int(rng.integers(0, len(_AGE_GROUPS)))],
        "sex": "M" if rng.random() < 0.45 else "F",
    }
    return Patient(patient_id=pid, ics=ics, meta=meta)


def _manifest_header(params: GeneratorParams) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "rng": RNG_NAME,
        "seed": params.seed,
        "params": params.to_dict(),
    }


def generate_cohort(params: GeneratorParams) -> Cohort:
    """Deterministic synthetic cohort; identical params + seed give identical
    arrays bit-for-bit."""
    params.validate()
    seqs = np.random.SeedSequence(params.seed).spawn(params.n_patients)
    patients = [_generate_patient(params, i, seqs[i]) for i in range(params.n_patients)]
    cohort = Cohort(patients=patients, manifest=_manifest_header(params))
    cohort.validate()
    return cohort


def generate_to_dir(params: GeneratorParams, directory: str | Path) -> Path:
    """Stream generation patient-by-patient so memory stays bounded."""
    params.validate()
    directory = Path(directory)
    writer = _CohortWriter(directory, _manifest_header(params))
    seqs = np.random.SeedSequence(params.seed).spawn(params.n_patients)
    for i in range(params.n_patients):
        writer.add_patient(_generate_patient(params, i, seqs[i]))
    writer.finish()
    return directory


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHIIIIdB")  # magic, version, n_slices, h, w, bold_len, tr, label


def _encode_ic(ic: IndependentComponent) -> bytes:
    n_slices, height, width = ic.slices.shape
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            IC_MAGIC,
            FORMAT_VERSION,
            n_slices,
            height,
            width,
            len(ic.bold),
            float(ic.tr_seconds),
            int(ic.truth),
        )
    )
    buf.write(np.ascontiguousarray(ic.slices, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(ic.bold, dtype="<f4").tobytes())
    return buf.getvalue()


def _decode_ic(data: bytes, ic_id: str) -> IndependentComponent:
    if len(data) < _HEADER.size:
        raise CohortFormatError(f"{ic_id}: truncated IC file")
    magic, version, n_slices, height, width, bold_len, tr, label = _HEADER.unpack_from(data)
    if magic != IC_MAGIC:
        raise CohortFormatError(f"{ic_id}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CohortFormatError(f"{ic_id}: unsupported format version {version}")
    need = _HEADER.size + 4 * (n_slices * height * width + bold_len)
    if len(data) != need:
        raise CohortFormatError(f"{ic_id}: expected {need} bytes, found {len(data)}")
    off = _HEADER.size
    n_vox = n_slices * height * width
    slices = np.frombuffer(data, dtype="<f4", count=n_vox, offset=off).reshape(
        n_slices, height, width
    )
    bold = np.frombuffer(data, dtype="<f4", count=bold_len, offset=off + 4 * n_vox)
    return IndependentComponent(
        ic_id=ic_id,
        slices=slices.copy(),
        bold=bold.copy(),
        tr_seconds=tr,
        truth=ICLabel(label),
    )


class _CohortWriter:
    def __init__(self, directory: Path, header: dict):
        self.directory = Path(directory)
        (self.directory / "patients").mkdir(parents=True, exist_ok=True)
        self.header = header
        self.patient_entries: list[dict] = []
        self.label_rows: list[tuple[str, str]] = []

    def add_patient(self, patient: Patient) -> None:
        pdir = self.directory / "patients" / patient.patient_id
        pdir.mkdir(parents=True, exist_ok=True)
        entries = []
        for k, ic in enumerate(patient.ics):
            rel = f"patients/{patient.patient_id}/ic_{k:03d}.icsl"
            data = _encode_ic(ic)
            (self.directory / rel).write_bytes(data)
            entries.append(
                {
                    "file": rel,
                    "ic_id": ic.ic_id,
                    "sha256": hashlib.sha256(data).hexdigest(),
                }
            )
            self.label_rows.append((ic.ic_id, str(ic.truth)))
        self.patient_entries.append(
            {"patient_id": patient.patient_id, "meta": patient.meta, "ics": entries}
        )

    def finish(self) -> None:
        manifest = dict(self.header)
        manifest["patients"] = self.patient_entries
        (self.directory / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )
        lines = ["ic_id,truth"] + [f"{ic_id},{truth}" for ic_id, truth in self.label_rows]
        (self.directory / "labels.csv").write_text("\n".join(lines) + "\n")


def save_cohort(cohort: Cohort, directory: str | Path) -> Path:
    cohort.validate()
    writer = _CohortWriter(Path(directory), cohort.manifest)
    for patient in cohort.patients:
        writer.add_patient(patient)
    writer.finish()
    return Path(directory)


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise CohortFormatError(f"no manifest.json under {directory}")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CohortFormatError(
            f"unsupported cohort format version {manifest.get('format_version')}"
        )
    return manifest


def _load_patient(directory: Path, entry: dict) -> Patient:
    ics = []
    for ic_entry in entry["ics"]:
        path = directory / ic_entry["file"]
        if not path.exists():
            raise CohortFormatError(f"missing IC file {ic_entry['file']}")
        data = path.read_bytes()
        digest = hashlib.sha256(data).hexdigest()
        if digest != ic_entry["sha256"]:
            raise CohortFormatError(f"checksum mismatch for {ic_entry['file']}")
        ics.append(_decode_ic(data, ic_entry["ic_id"]))
    return Patient(patient_id=entry["patient_id"], ics=ics, meta=dict(entry.get("meta", {})))


def iter_patients(directory: str | Path):
    """Yield patients one at a time; peak memory stays at one patient."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    for entry in manifest["patients"]:
        yield _load_patient(directory, entry)


def load_cohort(directory: str | Path) -> Cohort:
    directory = Path(directory)
    manifest = read_manifest(directory)
    patients = [_load_patient(directory, e) for e in manifest["patients"]]
    header = {k: v for k, v in manifest.items() if k != "patients"}
    cohort = Cohort(patients=patients, manifest=header)
    cohort.validate()
    return cohort


# ---------------------------------------------------------------------------
# Equality helpers (bit-exact round-trip checks)
# ---------------------------------------------------------------------------


def ics_equal(a: IndependentComponent, b: IndependentComponent) -> bool:
    return (
        a.ic_id == b.ic_id
        and a.truth == b.truth
        and a.tr_seconds == b.tr_seconds
        and a.slices.dtype == b.slices.dtype
        and a.bold.dtype == b.bold.dtype
        and np.array_equal(a.slices, b.slices)
        and np.array_equal(a.bold, b.bold)
    )


def patients_equal(a: Patient, b: Patient) -> bool:
    return (
        a.patient_id == b.patient_id
        and a.meta == b.meta
        and len(a.ics) == len(b.ics)
        and all(ics_equal(x, y) for x, y in zip(a.ics, b.ics))
    )


def cohorts_equal(a: Cohort, b: Cohort) -> bool:
    return len(a.patients) == len(b.patients) and all(
        patients_equal(x, y) for x, y in zip(a.patients, b.patients)
    )
