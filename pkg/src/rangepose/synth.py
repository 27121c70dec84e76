"""Parametric synthetic faces rendered as range images with known landmarks.

The face lives in its own frame ``(h, w, z)``: ``h`` runs between the eyes,
``w`` runs forehead-to-chin and ``z`` points at the sensor, with the origin at
the head centre.  The surface is the front cap of a sphere about that centre,
cut to an elliptical footprint, plus a Gaussian nose and two Gaussian pits at
the inner eye corners.  The pits are elliptical concave (H > 0, K > 0) and
carry the strongest Gaussian curvature on the face.

A pose rotates the face about the head centre: yaw about the vertical axis,
then pitch about the eye axis, then roll about the optical axis.  Rendering
is orthographic with the nearest surface winning, one ray per pixel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import EyeAxis, PixelCoord, PoseClass, RangeImage, RangePoseError
from .imageio import (
    CorpusManifest,
    ManifestEntry,
    PoseLabel,
    Role,
    label_for_angles,
    load_manifest,
    save_grid,
)

MAX_ANGLE = 60.0


class InvalidParams(RangePoseError):
    pass


class IOFailure(RangePoseError):
    pass


@dataclass(frozen=True)
class SynthFaceParams:
    grid: int = 101
    eye_axis: str = "rows"
    # face: a cap of a sphere centred on the head centre, cut to an ellipse
    head_radius: float = 30.0
    face_half_width: float = 27.0
    face_half_height: float = 29.0
    # nose bump, apex relative to the face centre
    nose_height: float = 14.0
    nose_width: float = 4.5
    nose_length: float = 5.5
    apex_h: float = 0.0
    apex_w: float = 0.0
    # inner eye-corner pits, mirrored about h = 0
    corner_h: float = 7.0
    corner_w: float = -12.0
    corner_depth: float = 3.0
    corner_width: float = 3.0
    # pose, degrees
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0
    # degradations
    noise_sigma: float = 0.0
    spike_rate: float = 0.0
    spike_amp: float = 25.0
    seed: int = 0

    def validate(self) -> None:
        if self.grid < 3:
            raise InvalidParams("grid must be at least 3")
        try:
            EyeAxis(self.eye_axis)
        except ValueError:
            raise InvalidParams(f"eye_axis must be 'rows' or 'cols', got {self.eye_axis!r}") from None
        for name in ("yaw_deg", "pitch_deg", "roll_deg"):
            if not abs(getattr(self, name)) <= MAX_ANGLE:
                raise InvalidParams(f"|{name}| must be <= {MAX_ANGLE}")
        positive = ("head_radius", "face_half_width", "face_half_height", "nose_height",
                    "nose_width", "nose_length", "corner_width")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be positive")
        if max(self.face_half_width, self.face_half_height) >= self.head_radius:
            raise InvalidParams("face footprint must lie inside the head sphere")
        if self.corner_depth < 0:
            raise InvalidParams("corner_depth must be non-negative")
        if self.noise_sigma < 0:
            raise InvalidParams("noise_sigma must be non-negative")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise InvalidParams("seed must be a non-negative integer")
        if not 0.0 <= self.spike_rate <= 1.0:
            raise InvalidParams("spike_rate must lie in [0, 1]")
        if (self.apex_h / self.face_half_width) ** 2 + (self.apex_w / self.face_half_height) ** 2 >= 1:
            raise InvalidParams("nose apex lies outside the face")

    def posed(self, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0, **kw) -> "SynthFaceParams":
        return replace(self, yaw_deg=yaw, pitch_deg=pitch, roll_deg=roll, **kw)

    def jittered(self, rng: np.random.Generator) -> "SynthFaceParams":
        """A different individual: face geometry perturbed by a few percent."""
        j = lambda x, rel: float(x * (1.0 + rng.uniform(-rel, rel)))
        # the footprint scales with the head so it stays inside the sphere
        k = j(1.0, 0.05)
        room = 0.999 * self.head_radius * k
        return replace(
            self,
            head_radius=self.head_radius * k,
            face_half_width=min(j(self.face_half_width * k, 0.02), room),
            face_half_height=min(j(self.face_half_height * k, 0.02), room),
            nose_height=j(self.nose_height, 0.08),
            nose_width=j(self.nose_width, 0.08),
            nose_length=j(self.nose_length, 0.08),
            corner_h=j(self.corner_h, 0.06),
            corner_w=j(self.corner_w, 0.06),
            corner_depth=j(self.corner_depth, 0.10),
            corner_width=j(self.corner_width, 0.06),
        )


@dataclass(frozen=True)
class GroundTruth:
    """Projected landmark positions.  ``*_xy`` are sub-pixel (u, v)."""

    apex: PixelCoord
    apex_xy: tuple[float, float]
    apex_depth: float
    apex_visible: bool
    sockets: tuple[PixelCoord, PixelCoord]
    sockets_xy: tuple[tuple[float, float], tuple[float, float]]
    sockets_visible: tuple[bool, bool]
    label: PoseClass | None
    spikes: tuple[PixelCoord, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "apex": list(self.apex),
            "apex_xy": list(self.apex_xy),
            "apex_depth": self.apex_depth,
            "apex_visible": self.apex_visible,
            "sockets": [list(p) for p in self.sockets],
            "sockets_xy": [list(p) for p in self.sockets_xy],
            "sockets_visible": list(self.sockets_visible),
            "label": None if self.label is None else self.label.value,
            "spikes": [list(p) for p in self.spikes],
        }


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rz(roll) @ Rx(pitch) @ Ry(yaw) acting on (h, w, z) column vectors, degrees.

    Positive yaw moves a point in front of the pivot towards +h, positive
    pitch towards +w.
    """
    y, p, r = np.radians([yaw, pitch, roll])
    Ry = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    Rx = np.array([[1, 0, 0], [0, np.cos(p), np.sin(p)], [0, -np.sin(p), np.cos(p)]])
    Rz = np.array([[np.cos(r), -np.sin(r), 0], [np.sin(r), np.cos(r), 0], [0, 0, 1]])
    return Rz @ Rx @ Ry


class FaceModel:
    """Height field of one face, measured from the head centre."""

    def __init__(self, p: SynthFaceParams):
        self.p = p

    def footprint(self, h, w):
        p = self.p
        return (h / p.face_half_width) ** 2 + (w / p.face_half_height) ** 2

    def height(self, h, w):
        """Surface ``z`` at ``(h, w)``; NaN outside the face footprint."""
        p = self.p
        rho2 = self.footprint(h, w)
        with np.errstate(invalid="ignore"):
            sphere = np.sqrt(p.head_radius ** 2 - h * h - w * w)
        nose = p.nose_height * np.exp(
            -0.5 * (((h - p.apex_h) / p.nose_width) ** 2 + ((w - p.apex_w) / p.nose_length) ** 2)
        )
        s2 = 2.0 * p.corner_width ** 2
        dw2 = (w - p.corner_w) ** 2
        # left + right added first so mirrored points see bit-identical sums
        pits = np.exp(-((h - p.corner_h) ** 2 + dw2) / s2) + np.exp(-((h + p.corner_h) ** 2 + dw2) / s2)
        z = sphere + nose - p.corner_depth * pits
        return np.where(rho2 <= 1.0, z, np.nan)

    def apex(self) -> np.ndarray:
        p = self.p
        return np.array([p.apex_h, p.apex_w, float(self.height(p.apex_h, p.apex_w))])

    def corners(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.p
        return tuple(np.array([h, p.corner_w, float(self.height(h, p.corner_w))]) for h in (-p.corner_h, p.corner_h))

    def z_range(self) -> tuple[float, float]:
        """Bounds on surface z over the footprint."""
        p = self.p
        lo = np.sqrt(p.head_radius ** 2 - max(p.face_half_width, p.face_half_height) ** 2)
        return float(lo - 2.0 * p.corner_depth - 1.0), float(p.head_radius + p.nose_height + 1.0)


def _to_pixels(p: SynthFaceParams, hw: np.ndarray) -> np.ndarray:
    """(..., 2) rotated-frame (h, w) to (u, v) float pixel coordinates."""
    c = (p.grid - 1) / 2.0
    uv = hw + c
    return uv if p.eye_axis == EyeAxis.ROWS.value else uv[..., ::-1]


def _from_pixels(p: SynthFaceParams, uv: np.ndarray) -> np.ndarray:
    c = (p.grid - 1) / 2.0
    hw = uv if p.eye_axis == EyeAxis.ROWS.value else uv[..., ::-1]
    return hw - c


def project_point(p: SynthFaceParams, point: np.ndarray) -> tuple[np.ndarray, float]:
    """Face-frame point to float (u, v) and depth under the pose of ``p``."""
    q = rotation_matrix(p.yaw_deg, p.pitch_deg, p.roll_deg) @ np.asarray(point, dtype=np.float64)
    return _to_pixels(p, q[:2]), float(q[2])


def render_depth(p: SynthFaceParams, step: float = 0.5, bisect_iters: int = 30) -> np.ndarray:
    """Noise-free rendering; NaN where no face surface is seen.

    The face is treated as a solid shell between its surface and the lowest
    rim height.  A pixel whose ray enters the shell through its side rather
    than through the surface is left empty.
    """
    model = FaceModel(p)
    R = rotation_matrix(p.yaw_deg, p.pitch_deg, p.roll_deg)
    n = p.grid
    uu, vv = np.indices((n, n), dtype=np.float64)
    hw = _from_pixels(p, np.stack([uu, vv], axis=-1))
    hp, wp = hw[..., 0].ravel(), hw[..., 1].ravel()

    if p.yaw_deg == 0 and p.pitch_deg == 0:
        # in-plane rotation only: the surface is still a graph over the image
        h = R[0, 0] * hp + R[1, 0] * wp
        w = R[0, 1] * hp + R[1, 1] * wp
        return model.height(h, w).reshape(n, n)

    # ray through a pixel: rotated point (hp, wp, t), face point R^T (hp, wp, t)
    Rt = R.T
    base = Rt[:, 0:1] * hp + Rt[:, 1:2] * wp  # (3, N)
    dirz = Rt[:, 2]
    z_lo, z_hi = model.z_range()
    t_a = (z_lo - base[2]) / dirz[2]
    t_b = (z_hi - base[2]) / dirz[2]
    t_top = np.maximum(t_a, t_b)
    t_bot = np.minimum(t_a, t_b)

    def inside(t, idx):
        q = base[:, idx] + dirz[:, None] * t
        f = model.height(q[0], q[1])
        with np.errstate(invalid="ignore"):
            return (q[2] <= f) & (q[2] >= z_lo)

    N = hp.size
    hit_t = np.full(N, np.nan)
    out_t = t_top.copy()
    t = t_top.copy()
    active = np.arange(N)
    while active.size:
        t_next = t[active] - step
        keep = t_next >= t_bot[active] - step
        active, t_next = active[keep], t_next[keep]
        if not active.size:
            break
        ins = inside(t_next, active)
        found = active[ins]
        hit_t[found] = t_next[ins]
        out_t[found] = t[found]
        t[active] = t_next
        active = active[~ins]

    found = np.nonzero(np.isfinite(hit_t))[0]
    lo, hi = hit_t[found], out_t[found]  # lo inside, hi outside
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        ins = inside(mid, found)
        lo = np.where(ins, mid, lo)
        hi = np.where(ins, hi, mid)
    q = base[:, found] + dirz[:, None] * lo
    on_surface = np.abs(q[2] - model.height(q[0], q[1])) < 1e-4
    depth = np.full(N, np.nan)
    depth[found[on_surface]] = lo[on_surface]
    return depth.reshape(n, n)


def _visible(depth: np.ndarray, uv: np.ndarray, z: float) -> bool:
    u, v = int(round(uv[0])), int(round(uv[1]))
    if not (0 <= u < depth.shape[0] and 0 <= v < depth.shape[1]):
        return False
    d = depth[u, v]
    return bool(np.isfinite(d) and abs(d - z) < 1.0)


def _pixel(uv: np.ndarray) -> PixelCoord:
    return PixelCoord(int(np.floor(uv[0] + 0.5)), int(np.floor(uv[1] + 0.5)))


def generate(params: SynthFaceParams) -> tuple[RangeImage, GroundTruth]:
    """Render a face, degrade it, and report where its landmarks project."""
    params.validate()
    p = params
    model = FaceModel(p)
    depth = render_depth(p)

    apex_uv, apex_z = project_point(p, model.apex())
    socket_uv, socket_z = zip(*(project_point(p, c) for c in model.corners()))

    valid = np.isfinite(depth)
    clean = depth.copy()
    rng = np.random.default_rng(p.seed)
    noise = rng.standard_normal(depth.shape)
    if p.noise_sigma > 0:
        depth = depth + p.noise_sigma * noise
    spike_draw = rng.random(depth.shape)
    spike_sign = np.where(rng.random(depth.shape) < 0.5, -1.0, 1.0)
    spiked = valid & (spike_draw < p.spike_rate)
    depth = np.where(spiked, depth + spike_sign * p.spike_amp, depth)

    truth = GroundTruth(
        apex=_pixel(apex_uv),
        apex_xy=(float(apex_uv[0]), float(apex_uv[1])),
        apex_depth=apex_z,
        apex_visible=_visible(clean, apex_uv, apex_z),
        sockets=(_pixel(socket_uv[0]), _pixel(socket_uv[1])),
        sockets_xy=tuple((float(s[0]), float(s[1])) for s in socket_uv),
        sockets_visible=tuple(_visible(clean, s, z) for s, z in zip(socket_uv, socket_z)),
        label=label_for_angles(p.yaw_deg, p.pitch_deg, p.roll_deg),
        spikes=tuple(PixelCoord(int(u), int(v)) for u, v in zip(*np.nonzero(spiked))),
    )
    return RangeImage(np.where(valid, depth, np.nan), valid), truth


# --- corpora ---------------------------------------------------------------


def _labels(axis: str, angles) -> tuple[PoseLabel, ...]:
    return tuple(PoseLabel.parse(f"{axis}:{a:+g}") for a in angles)


SINGLE_AXIS = (
    _labels("x", (5, -5, 18, -18, 40, -40))
    + _labels("y", (10, -10, 38, -38, 40, -40))
    + _labels("z", (18, -18, 38, -38, 40, -40))
)
YAW_LADDER = _labels("y", (10, 20, 30))
COMPOSITES = (PoseLabel.parse("yx:+42/+10"), PoseLabel.parse("yx:+42/-10"))


def merge_schedules(*schedules) -> tuple[PoseLabel, ...]:
    """Concatenate schedules, dropping repeated labels (first occurrence wins)."""
    return tuple(dict.fromkeys(lab for s in schedules for lab in s))


FULL_SCHEDULE = merge_schedules(SINGLE_AXIS, YAW_LADDER, COMPOSITES)


def subject_seed(seed: int, subject: int, *extra: int) -> int:
    ss = np.random.SeedSequence([seed, subject, *extra])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def subject_params(base: SynthFaceParams, seed: int, subject: int) -> SynthFaceParams:
    return base.jittered(np.random.default_rng(subject_seed(seed, subject)))


def _file_stem(label: PoseLabel) -> str:
    if label.pose is PoseClass.FRONTAL:
        return "frontal"
    text = f"{label.axis.lower()}_{label.angle_text}"
    return text.replace("/", "_").replace("+", "p").replace("-", "m")


def make_corpus(
    schedule,
    subjects: int,
    out_dir,
    seed: int = 0,
    base: SynthFaceParams | None = None,
    y_refs: bool = True,
) -> CorpusManifest:
    """Write a labelled synthetic corpus and its manifest.

    Per subject: a frontal reference, one pure-yaw reference for every yaw
    that appears in a composite probe (when ``y_refs``), and one probe per
    scheduled label.  Files are ``<out_dir>/sNNN/<label>.rgz``; the manifest
    is ``manifest.txt`` and landmark truth goes to ``truth.json``.
    """
    base = base or SynthFaceParams()
    schedule = tuple(schedule)
    out = Path(out_dir)
    lines = []
    truth = {}

    composite_yaws = sorted(
        {lab.yaw for lab in schedule if lab.pose in (PoseClass.POSITIVE_YX, PoseClass.NEGATIVE_YX)}
    )
    try:
        out.mkdir(parents=True, exist_ok=True)
        for s in range(subjects):
            subject = f"s{s:03d}"
            face = subject_params(base, seed, s)
            jobs = [(Role.FRONTAL_REF, PoseLabel(PoseClass.FRONTAL))]
            if y_refs:
                jobs += [(Role.Y_REF, PoseLabel(PoseClass.ROTATED_Y, yaw=y)) for y in composite_yaws]
            jobs += [(Role.PROBE, lab) for lab in schedule]
            (out / subject).mkdir(exist_ok=True)
            for k, (role, lab) in enumerate(jobs):
                stem = _file_stem(lab)
                if role is Role.Y_REF:
                    stem = "ref_" + stem
                elif role is Role.FRONTAL_REF:
                    stem = "ref_frontal"
                rel = f"{subject}/{stem}.rgz"
                params = face.posed(lab.yaw, lab.pitch, lab.roll, seed=subject_seed(seed, s, k + 1))
                img, gt = generate(params)
                (out / rel).write_bytes(save_grid(img))
                lines.append(ManifestEntry(rel, subject, role, lab).to_line())
                truth[rel] = gt.to_dict()
        text = "".join(line + "\n" for line in lines)
        (out / "manifest.txt").write_text(text)
        (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write corpus to {out}: {exc}") from exc
    return load_manifest(text)


def params_to_dict(p: SynthFaceParams) -> dict:
    return asdict(p)
