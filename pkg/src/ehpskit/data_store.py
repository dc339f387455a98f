"""Instance records, JSON-lines storage, manifests and synthetic data.

Record line format (keys in this order, compact separators)::

    {"id", "image_ref", "bbox", "gender", "model_format", "split",
     "theta", "beta", "psi", "translation", "meta"}

``theta`` is a list of J [x, y, z] axis-angle triples; ``meta`` keys are
sorted. Floats are written with Python's shortest round-trip repr, so a
load/save cycle reproduces the file byte for byte.

A manifest is a small JSON document naming the records file and holding
its 64-bit FNV-1a checksum (over the raw file bytes) and per-split counts.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .body_model import NUM_BETAS, NUM_EXPR, CANONICAL_PARTS, FullPoseState
from .errors import InvalidArgument, ParseError
from .rng import derive_key, fnv1a64

GENDERS = ("neutral", "female", "male")
FORMATS = ("smplx", "smpl")
SPLITS = ("train", "val", "test")
HAND_COMPLEXITY = ("low", "mixed", "high")
NUM_JOINTS = len(CANONICAL_PARTS)
RECORD_KEYS = ("id", "image_ref", "bbox", "gender", "model_format", "split",
               "theta", "beta", "psi", "translation", "meta")

# Hand axis-angle spread (radians) per complexity level.
HAND_SIGMA = {"low": 0.04, "high": 0.2}
BODY_SIGMA = 0.2


@dataclass
class InstanceRecord:
    id: str
    state: FullPoseState
    gender: str = "neutral"
    model_format: str = "smplx"
    split: str = "train"
    image_ref: str | None = None
    bbox: tuple[float, float, float, float] | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def validate(self, num_joints: int = NUM_JOINTS) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise InvalidArgument("record id must be a non-empty string")
        if self.gender not in GENDERS:
            raise InvalidArgument(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.model_format not in FORMATS:
            raise InvalidArgument(f"model_format must be one of {FORMATS}, got {self.model_format!r}")
        if self.split not in SPLITS:
            raise InvalidArgument(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.image_ref is not None and not isinstance(self.image_ref, str):
            raise InvalidArgument("image_ref must be a string or null")
        if self.bbox is not None:
            if len(self.bbox) != 4 or not all(np.isfinite(self.bbox)):
                raise InvalidArgument("bbox must be four finite numbers (x, y, w, h)")
            if self.bbox[2] < 0 or self.bbox[3] < 0:
                raise InvalidArgument("bbox width and height must be non-negative")
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in self.meta.items()):
            raise InvalidArgument("meta must map text to text")
        self.state.validate()
        if self.state.theta.shape[0] != num_joints:
            raise InvalidArgument(f"theta has {self.state.theta.shape[0]} joints, expected {num_joints}")

    @property
    def supervises_hands(self) -> bool:
        """SMPL-format annotations carry no valid hand or face pose."""
        return self.model_format == "smplx"

    def to_dict(self) -> dict:
        s = self.state
        return {
            "id": self.id,
            "image_ref": self.image_ref,
            "bbox": None if self.bbox is None else [float(x) for x in self.bbox],
            "gender": self.gender,
            "model_format": self.model_format,
            "split": self.split,
            "theta": s.theta.tolist(),
            "beta": s.beta.tolist(),
            "psi": s.psi.tolist(),
            "translation": s.translation.tolist(),
            "meta": {k: self.meta[k] for k in sorted(self.meta)},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InstanceRecord":
        if not isinstance(doc, dict):
            raise InvalidArgument("record must be a JSON object")
        unknown = set(doc) - set(RECORD_KEYS)
        if unknown:
            raise InvalidArgument(f"unknown field(s): {', '.join(sorted(unknown))}")
        for key in ("id", "theta"):
            if key not in doc:
                raise InvalidArgument(f"missing field {key!r}")
        try:
            state = FullPoseState(
                np.asarray(doc["theta"], dtype=np.float64),
                np.asarray(doc.get("beta", [0.0] * NUM_BETAS), dtype=np.float64),
                np.asarray(doc.get("psi", [0.0] * NUM_EXPR), dtype=np.float64),
                np.asarray(doc.get("translation", [0.0] * 3), dtype=np.float64),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidArgument(f"pose arrays are not numeric: {exc}") from None
        bbox = doc.get("bbox")
        return cls(
            id=doc["id"],
            state=state,
            gender=doc.get("gender", "neutral"),
            model_format=doc.get("model_format", "smplx"),
            split=doc.get("split", "train"),
            image_ref=doc.get("image_ref"),
            bbox=None if bbox is None else tuple(float(x) for x in bbox),
            meta=dict(doc.get("meta") or {}),
        )

    def __eq__(self, other):
        if not isinstance(other, InstanceRecord):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def dumps_record(record: InstanceRecord) -> str:
    return json.dumps(record.to_dict(), separators=(",", ":"), allow_nan=False)


def records_bytes(records) -> bytes:
    return "".join(dumps_record(r) + "\n" for r in records).encode("utf-8")


def _check_unique(records) -> None:
    seen = set()
    for r in records:
        if r.id in seen:
            raise InvalidArgument(f"duplicate record id {r.id!r}")
        seen.add(r.id)


def parse_records(text: str, path: str | None = None, num_joints: int = NUM_JOINTS) -> list[InstanceRecord]:
    records, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = InstanceRecord.from_dict(json.loads(line))
            rec.validate(num_joints)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, lineno) from None
        except InvalidArgument as exc:
            raise ParseError(str(exc), path, lineno) from None
        if rec.id in seen:
            raise ParseError(f"duplicate record id {rec.id!r}", path, lineno)
        seen.add(rec.id)
        records.append(rec)
    return records


def load_records(path, num_joints: int = NUM_JOINTS) -> list[InstanceRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh.read(), str(path), num_joints)


def save_records(records, path) -> None:
    records = list(records)
    for r in records:
        r.validate(r.state.theta.shape[0])
    _check_unique(records)
    with open(path, "wb") as fh:
        fh.write(records_bytes(records))


def checksum(data: bytes) -> str:
    return f"{fnv1a64(data):016x}"


@dataclass
class DatasetManifest:
    dataset_id: str
    split_counts: dict[str, int]
    records_path: str  # relative to the manifest's directory
    checksum: str
    license_note: str = ""

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "split_counts": {s: int(self.split_counts.get(s, 0)) for s in SPLITS},
            "records": self.records_path,
            "checksum": self.checksum,
            "license_note": self.license_note,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        try:
            return cls(doc["dataset_id"], {k: int(v) for k, v in doc["split_counts"].items()},
                       doc["records"], doc["checksum"], doc.get("license_note", ""))
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidArgument(f"malformed manifest: {exc}") from None


def split_counts(records) -> dict[str, int]:
    counts = {s: 0 for s in SPLITS}
    for r in records:
        counts[r.split] += 1
    return counts


def write_dataset(records, manifest_path, dataset_id: str, license_note: str = "",
                  records_name: str | None = None) -> DatasetManifest:
    """Write ``<records_name>`` next to the manifest and the manifest itself."""
    records = list(records)
    records_name = records_name or f"{dataset_id}.jsonl"
    folder = os.path.dirname(os.path.abspath(manifest_path))
    save_records(records, os.path.join(folder, records_name))
    manifest = DatasetManifest(dataset_id, split_counts(records), records_name,
                               checksum(records_bytes(records)), license_note)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
        fh.write("\n")
    return manifest


def load_dataset(manifest_path, num_joints: int = NUM_JOINTS):
    """Load a manifest and its records, verifying checksum and split counts."""
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            manifest = DatasetManifest.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", str(manifest_path), exc.lineno) from None
    path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), manifest.records_path)
    with open(path, "rb") as fh:
        raw = fh.read()
    got = checksum(raw)
    if got != manifest.checksum:
        raise InvalidArgument(f"{path}: checksum {got} does not match manifest {manifest.checksum}")
    records = parse_records(raw.decode("utf-8"), path, num_joints)
    counts = split_counts(records)
    expected = {s: int(manifest.split_counts.get(s, 0)) for s in SPLITS}
    if counts != expected:
        raise InvalidArgument(f"{path}: split counts {counts} do not match manifest {expected}")
    return manifest, records


def load_any(path, num_joints: int = NUM_JOINTS):
    """Records from either a manifest (``.json``) or a bare JSON-lines file."""
    if str(path).endswith(".json"):
        return load_dataset(path, num_joints)[1]
    return load_records(path, num_joints)


def convert_gendered(records, adapter_f, adapter_m) -> list[InstanceRecord]:
    """Map gendered shape vectors into the neutral model's space.

    Neutral records pass through untouched. SMPL-format records are refused:
    the adapters are fitted between whole-body models of one topology.
    """
    records = list(records)
    smpl = [r.id for r in records if r.model_format == "smpl"]
    if smpl:
        raise InvalidArgument(f"cannot convert smpl-format record(s): {', '.join(smpl[:5])}")
    out = []
    for r in records:
        if r.gender == "neutral":
            out.append(r)
            continue
        adapter = adapter_f if r.gender == "female" else adapter_m
        beta = np.asarray(adapter(r.state.beta[None]), dtype=np.float64)[0]
        state = FullPoseState(r.state.theta.copy(), beta, r.state.psi.copy(), r.state.translation.copy())
        meta = dict(r.meta, converted_from=r.gender)
        out.append(replace(r, state=state, gender="neutral", meta=meta))
    return out


def _hand_joint_ids(part: str) -> np.ndarray:
    return np.array([j for j, p in enumerate(CANONICAL_PARTS) if p == part])


def _synthetic_record(seed: int, dataset_id: str, i: int, hand_complexity: str) -> InstanceRecord:
    rid = f"{dataset_id}-{i:06d}"
    rng = np.random.default_rng(derive_key(seed, rid))
    theta = np.zeros((NUM_JOINTS, 3))
    theta[0] = rng.normal(0.0, 0.5, 3)
    body = _hand_joint_ids("body")
    theta[body] = rng.normal(0.0, BODY_SIGMA, (body.size, 3))
    level = hand_complexity
    if level == "mixed":
        level = "high" if rng.random() < 0.5 else "low"
    for part in ("left_hand", "right_hand"):
        ids = _hand_joint_ids(part)
        theta[ids] = rng.normal(0.0, HAND_SIGMA[level], (ids.size, 3))
    state = FullPoseState(theta, rng.normal(0.0, 1.0, NUM_BETAS), rng.normal(0.0, 0.5, NUM_EXPR),
                          np.array([0.0, 0.0, 3.0]) + rng.normal(0.0, 0.3, 3))
    split = "val" if rng.random() < 0.2 else "train"
    return InstanceRecord(rid, state, split=split, image_ref=f"{rid}.jpg",
                          meta={"hand_complexity": level, "source": "synthetic"})


def gen_synthetic_records(seed: int, n: int, dataset_id: str, hand_complexity: str = "mixed") -> list[InstanceRecord]:
    """Deterministic synthetic whole-body records.

    ``mixed`` draws each record's hands from the low or high pool with equal odds.
    """
    if n < 0:
        raise InvalidArgument(f"n must be non-negative, got {n}")
    if hand_complexity not in HAND_COMPLEXITY:
        raise InvalidArgument(f"hand_complexity must be one of {HAND_COMPLEXITY}")
    return [_synthetic_record(seed, dataset_id, i, hand_complexity) for i in range(n)]


def perturb_records(records, seed: int, sigma: float = 0.05, jobs: int = 1) -> list[InstanceRecord]:
    """Noisy copies standing in for a method's predictions.

    Every record draws from its own stream keyed by its id, so the result
    does not depend on ``jobs`` or record order.
    """
    if sigma < 0:
        raise InvalidArgument("sigma must be non-negative")

    def one(r: InstanceRecord) -> InstanceRecord:
        rng = np.random.default_rng(derive_key(seed, r.id))
        s = r.state
        state = FullPoseState(
            s.theta + rng.normal(0.0, sigma, s.theta.shape),
            s.beta + rng.normal(0.0, 4.0 * sigma, s.beta.shape),
            s.psi + rng.normal(0.0, 4.0 * sigma, s.psi.shape),
            s.translation + rng.normal(0.0, 0.2 * sigma, 3),
        )
        return replace(r, state=state, meta=dict(r.meta))

    records = list(records)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, records))
    return [one(r) for r in records]
