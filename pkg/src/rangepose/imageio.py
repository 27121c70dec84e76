"""Range-grid file formats and corpus manifests.

RGZ-ASCII layout::

    rangegrid 1
    H W
    <H lines of W whitespace-separated decimals, ``nan`` for invalid>

Binary PGM (P5) is also accepted; a zero sample marks an invalid cell and
other samples are taken as raw counts.
"""

from __future__ import annotations

import enum
import math
import re
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .core import PoseClass, RangeImage, RangePoseError

RGZ_MAGIC = "rangegrid"
RGZ_VERSION = "1"


class FormatError(RangePoseError):
    pass


class MalformedHeader(FormatError):
    pass


class DimensionMismatch(FormatError):
    pass


class NonFiniteValue(FormatError):
    pass


class ManifestError(RangePoseError):
    pass


class MissingFrontalRef(ManifestError):
    pass


class MissingYRef(ManifestError):
    pass


class UnknownPoseLabel(ManifestError):
    pass


class MalformedManifest(ManifestError):
    pass


def _as_bytes(data) -> bytes:
    if isinstance(data, str):
        return data.encode("ascii")
    return bytes(data)


def load_grid(data: bytes | str) -> RangeImage:
    """Parse an RGZ-ASCII or binary PGM stream into a :class:`RangeImage`."""
    data = _as_bytes(data)
    if data[:2] == b"P5":
        return _load_pgm(data)
    return _load_rgz(data)


def _load_rgz(data: bytes) -> RangeImage:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader("RGZ stream is not ASCII") from exc
    tokens = text.split()
    if len(tokens) < 4 or tokens[0] != RGZ_MAGIC:
        raise MalformedHeader(f"expected '{RGZ_MAGIC} {RGZ_VERSION}' header")
    if tokens[1] != RGZ_VERSION:
        raise MalformedHeader(f"unsupported rangegrid version {tokens[1]!r}")
    try:
        h, w = int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise MalformedHeader("grid dimensions must be integers") from exc
    if h < 1 or w < 1:
        raise MalformedHeader(f"grid dimensions must be positive, got {h}x{w}")
    body = tokens[4:]
    if len(body) != h * w:
        raise DimensionMismatch(f"header says {h}x{w}={h * w} values, found {len(body)}")

    depth = np.empty(h * w, dtype=np.float64)
    valid = np.ones(h * w, dtype=bool)
    for i, tok in enumerate(body):
        if tok.lower() == "nan":
            depth[i] = np.nan
            valid[i] = False
            continue
        try:
            x = float(tok)
        except ValueError as exc:
            raise FormatError(f"cannot parse value {tok!r}") from exc
        if not math.isfinite(x):
            raise NonFiniteValue(f"non-finite value {tok!r} (use 'nan' for invalid cells)")
        depth[i] = x
    return RangeImage(depth.reshape(h, w), valid.reshape(h, w))


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)\s+(\d+)\s+(\d+)\s")


def _load_pgm(data: bytes) -> RangeImage:
    # comments are only tolerated directly after the magic number
    m = _PGM_HEADER.match(data)
    if not m:
        raise MalformedHeader("bad PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if w < 1 or h < 1 or not 0 < maxval <= 65535:
        raise MalformedHeader(f"bad PGM geometry {w}x{h} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    payload = data[m.end():]
    need = w * h * dtype.itemsize
    if len(payload) != need:
        raise DimensionMismatch(f"PGM payload is {len(payload)} bytes, expected {need}")
    raw = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    depth = raw.astype(np.float64)
    return RangeImage(depth, raw != 0)


def save_grid(img: RangeImage) -> bytes:
    """Canonical RGZ-ASCII; floats use the shortest round-tripping decimal."""
    lines = [f"{RGZ_MAGIC} {RGZ_VERSION}", f"{img.height} {img.width}"]
    for row, ok in zip(img.depth.tolist(), img.valid.tolist()):
        lines.append(" ".join(repr(x) if k else "nan" for x, k in zip(row, ok)))
    return ("\n".join(lines) + "\n").encode("ascii")


def save_pgm(img: RangeImage) -> bytes:
    """16-bit P5 export. Depths are rounded and clipped to 1..65535."""
    raw = np.clip(np.rint(img.filled(0.0)), 1, 65535).astype(">u2")
    raw[~img.valid] = 0
    header = f"P5\n{img.width} {img.height}\n65535\n".encode("ascii")
    return header + raw.tobytes()


def read_grid(path) -> RangeImage:
    with open(path, "rb") as fh:
        return load_grid(fh.read())


def write_grid(path, img: RangeImage) -> None:
    with open(path, "wb") as fh:
        fh.write(save_grid(img))


# --- manifests -------------------------------------------------------------


class Role(str, enum.Enum):
    FRONTAL_REF = "frontal_ref"
    Y_REF = "y_ref"
    PROBE = "probe"


@dataclass(frozen=True)
class PoseLabel:
    """Nominal pose of a corpus entry, in degrees.

    Composites are yaw first, then pitch.
    """

    pose: PoseClass
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    @classmethod
    def from_angles(cls, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> "PoseLabel":
        pose = label_for_angles(yaw, pitch, roll)
        if pose is None:
            raise UnknownPoseLabel(f"no pose class for yaw={yaw}, pitch={pitch}, roll={roll}")
        return cls(pose, float(yaw), float(pitch), float(roll))

    @classmethod
    def parse(cls, text: str) -> "PoseLabel":
        t = text.strip().lower()
        if t == "frontal":
            return cls(PoseClass.FRONTAL)
        axis, sep, rest = t.partition(":")
        if not sep:
            raise UnknownPoseLabel(f"unknown pose label {text!r}")
        try:
            if axis == "yx":
                yaw_s, slash, pitch_s = rest.partition("/")
                if not slash:
                    raise ValueError
                yaw, pitch = float(yaw_s), float(pitch_s)
                if yaw == 0 or pitch == 0:
                    raise ValueError
                return cls.from_angles(yaw=yaw, pitch=pitch)
            angle = float(rest)
        except (ValueError, UnknownPoseLabel):
            raise UnknownPoseLabel(f"unknown pose label {text!r}") from None
        if angle == 0 or not math.isfinite(angle):
            raise UnknownPoseLabel(f"single-axis label needs a nonzero angle: {text!r}")
        if axis == "x":
            return cls(PoseClass.ROTATED_X, pitch=angle)
        if axis == "y":
            return cls(PoseClass.ROTATED_Y, yaw=angle)
        if axis == "z":
            return cls(PoseClass.ROTATED_Z, roll=angle)
        raise UnknownPoseLabel(f"unknown pose axis in {text!r}")

    @property
    def axis(self) -> str:
        """Report bucket name: the pose class with composites merged."""
        return "YX" if self.pose in (PoseClass.POSITIVE_YX, PoseClass.NEGATIVE_YX) else self.pose.value

    @property
    def angle_text(self) -> str:
        if self.pose is PoseClass.FRONTAL:
            return "0"
        if self.pose is PoseClass.ROTATED_X:
            return _signed(self.pitch)
        if self.pose is PoseClass.ROTATED_Y:
            return _signed(self.yaw)
        if self.pose is PoseClass.ROTATED_Z:
            return _signed(self.roll)
        return f"{_signed(self.yaw)}/{_signed(self.pitch)}"

    def __str__(self) -> str:
        if self.pose is PoseClass.FRONTAL:
            return "frontal"
        return f"{self.axis.lower()}:{self.angle_text}"


def _signed(x: float) -> str:
    return f"{x:+g}"


def label_for_angles(yaw: float, pitch: float, roll: float) -> PoseClass | None:
    """Ground-truth class of an angle triple; None for unsupported combinations."""
    nz = (yaw != 0, pitch != 0, roll != 0)
    if nz == (False, False, False):
        return PoseClass.FRONTAL
    if nz == (True, False, False):
        return PoseClass.ROTATED_Y
    if nz == (False, True, False):
        return PoseClass.ROTATED_X
    if nz == (False, False, True):
        return PoseClass.ROTATED_Z
    if nz == (True, True, False):
        return PoseClass.POSITIVE_YX if pitch > 0 else PoseClass.NEGATIVE_YX
    return None


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: str
    role: Role
    label: PoseLabel

    def to_line(self) -> str:
        return f"{self.path} {self.subject_id} {self.role.value} {self.label}"


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        validate_manifest(self.entries)

    def subjects(self) -> list[str]:
        return list(dict.fromkeys(e.subject_id for e in self.entries))

    def probes(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role is Role.PROBE]

    def frontal_ref(self, subject: str) -> ManifestEntry:
        return next(e for e in self.entries if e.subject_id == subject and e.role is Role.FRONTAL_REF)

    def y_ref(self, subject: str, yaw: float) -> ManifestEntry | None:
        for e in self.entries:
            if e.subject_id == subject and e.role is Role.Y_REF and e.label.yaw == yaw:
                return e
        return None

    def dumps(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.entries)


def validate_manifest(entries) -> None:
    by_subject = defaultdict(list)
    for e in entries:
        by_subject[e.subject_id].append(e)
    for subject, items in by_subject.items():
        frontals = [e for e in items if e.role is Role.FRONTAL_REF]
        probes = [e for e in items if e.role is Role.PROBE]
        if probes and len(frontals) != 1:
            raise MissingFrontalRef(
                f"subject {subject!r} has {len(frontals)} frontal_ref entries, needs exactly one"
            )
        for e in items:
            if e.role is Role.Y_REF and e.label.pose is not PoseClass.ROTATED_Y:
                raise MalformedManifest(f"y_ref {e.path!r} must carry a y:<angle> label")
            if e.role is Role.FRONTAL_REF and e.label.pose is not PoseClass.FRONTAL:
                raise MalformedManifest(f"frontal_ref {e.path!r} must be labelled frontal")
        yrefs = [e.label.yaw for e in items if e.role is Role.Y_REF]
        if len(set(yrefs)) != len(yrefs):
            raise MalformedManifest(f"subject {subject!r} has two y_ref entries at the same yaw")
        for p in probes:
            if p.label.pose in (PoseClass.POSITIVE_YX, PoseClass.NEGATIVE_YX) and p.label.yaw not in yrefs:
                raise MissingYRef(
                    f"subject {subject!r}: probe {p.path!r} needs a y_ref at yaw {p.label.yaw:+g}"
                )


def load_manifest(data: bytes | str) -> CorpusManifest:
    """Parse ``<path> <subject> <role> <pose-label>`` lines; ``#`` starts a comment."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 4:
            raise MalformedManifest(f"line {lineno}: expected 4 fields, got {len(fields)}")
        path, subject, role, label = fields
        try:
            role = Role(role)
        except ValueError:
            raise MalformedManifest(f"line {lineno}: unknown role {role!r}") from None
        entries.append(ManifestEntry(path, subject, role, PoseLabel.parse(label)))
    return CorpusManifest(tuple(entries))
