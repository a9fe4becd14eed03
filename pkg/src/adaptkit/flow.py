"""Appearance-flow warping, synthetic ground-truth flows and keypoint distillation.

A flow field stores, for every target pixel ``(i, j)``, the absolute source
coordinates ``(F_x, F_y)`` to sample from. Sampling is bilinear over the four
floor/ceil neighbours; neighbours outside the image contribute zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .nn import MLP
from .tensor import Tensor


class ShapeMismatch(ValueError):
    pass


def _sampling_terms(flow: np.ndarray, height: int, width: int):
    fx, fy = flow[..., 0], flow[..., 1]
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    dx, dy = fx - x0, fy - y0
    corners = []
    # the sign is d(weight)/d(coordinate) for the floor (-1) and ceil (+1) neighbour
    for oy, wy, sy in ((0, 1.0 - dy, -1.0), (1, dy, 1.0)):
        for ox, wx, sx in ((0, 1.0 - dx, -1.0), (1, dx, 1.0)):
            yy, xx = y0 + oy, x0 + ox
            valid = (yy >= 0) & (yy < height) & (xx >= 0) & (xx < width)
            corners.append((np.clip(yy, 0, height - 1), np.clip(xx, 0, width - 1), valid, wy, wx, sy, sx))
    return corners


def bilinear_warp(image, flow) -> Tensor:
    """Resample ``image`` at the source coordinates in ``flow``.

    Unbatched: image (H, W) or (H, W, C) with flow (H, W, 2). Batched: image
    (B, H, W) or (B, H, W, C) with flow (B, H, W, 2). Differentiable in both.
    """
    image = image if isinstance(image, Tensor) else Tensor(image)
    flow = flow if isinstance(flow, Tensor) else Tensor(flow)
    if flow.ndim not in (3, 4) or flow.shape[-1] != 2:
        raise ShapeMismatch(f"flow must be (H, W, 2) or (B, H, W, 2), got {flow.shape}")
    batched = flow.ndim == 4
    if image.ndim == flow.ndim:
        channels = True
    elif image.ndim == flow.ndim - 1:
        channels = False
    else:
        raise ShapeMismatch(f"image shape {image.shape} incompatible with flow shape {flow.shape}")
    img = image.data if channels else image.data[..., None]
    fl = flow.data
    if not batched:
        img, fl = img[None], fl[None]
    b, h, w, c = img.shape
    if fl.shape != (b, h, w, 2):
        raise ShapeMismatch(f"flow shape {flow.shape} does not match image shape {image.shape}")
    if not np.all(np.isfinite(fl)):
        raise T.NonFiniteError("flow field has non-finite entries")
    bidx = np.broadcast_to(np.arange(b)[:, None, None], (b, h, w))
    corners = _sampling_terms(fl, h, w)
    out = np.zeros((b, h, w, c))
    gathered = []
    for yy, xx, valid, wy, wx, _, _ in corners:
        vals = img[bidx, yy, xx] * valid[..., None]
        gathered.append(vals)
        out += vals * (wy * wx)[..., None]

    def bw(g):
        g4 = g.reshape(b, h, w, c)
        if image.requires_grad:
            gi = np.zeros((b, h, w, c))
            for yy, xx, valid, wy, wx, _, _ in corners:
                np.add.at(gi, (bidx, yy, xx), g4 * (wy * wx * valid)[..., None])
            image._accum(gi.reshape(image.shape))
        if flow.requires_grad:
            gfx = np.zeros((b, h, w))
            gfy = np.zeros((b, h, w))
            for (yy, xx, valid, wy, wx, sy, sx), vals in zip(corners, gathered):
                gv = (g4 * vals).sum(axis=-1)
                gfx += gv * wy * sx
                gfy += gv * wx * sy
            flow._accum(np.stack([gfx, gfy], axis=-1).reshape(flow.shape))

    return T.custom_op("bilinear_warp", out.reshape(image.shape), (image, flow), bw)


def identity_flow(height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return np.stack([xs, ys], axis=-1)


# -- transforms (3x3 homogeneous, mapping source (x, y) to target (x, y)) -----------
def translation(dx: float, dy: float) -> np.ndarray:
    return np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])


def rotation(degrees: float, center: tuple[float, float]) -> np.ndarray:
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    cx, cy = center
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return translation(cx, cy) @ rot @ translation(-cx, -cy)


def scaling(factor: float, center: tuple[float, float]) -> np.ndarray:
    cx, cy = center
    return translation(cx, cy) @ np.diag([factor, factor, 1.0]) @ translation(-cx, -cy)


def synthetic_flow(transform: np.ndarray, height: int, width: int) -> np.ndarray:
    """Exact flow for a target view produced by ``transform`` from the source view."""
    transform = np.asarray(transform, dtype=float)
    if transform.shape != (3, 3):
        raise ValueError(f"transform must be 3x3, got {transform.shape}")
    if abs(np.linalg.det(transform[:2, :2])) < 1e-12:
        raise ValueError("transform is not invertible")
    inv = np.linalg.inv(transform)
    grid = identity_flow(height, width)
    homog = np.concatenate([grid, np.ones((height, width, 1))], axis=-1)
    src = homog @ inv.T
    return src[..., :2] / src[..., 2:3]


# -- losses ------------------------------------------------------------------------------
class DistillLosses(NamedTuple):
    total: Tensor
    flow: Tensor
    image: Tensor


def distill_loss(flow_kpt, flow_pix, source, target, lam: float = 1.0) -> DistillLosses:
    """Mean-L1 flow matching against the teacher plus ``lam`` times mean-L1 reconstruction."""
    flow_kpt = flow_kpt if isinstance(flow_kpt, Tensor) else Tensor(flow_kpt)
    flow_pix = flow_pix if isinstance(flow_pix, Tensor) else Tensor(flow_pix)
    target = target if isinstance(target, Tensor) else Tensor(target)
    if flow_kpt.shape != flow_pix.shape:
        raise ShapeMismatch(f"student flow {flow_kpt.shape} vs teacher flow {flow_pix.shape}")
    l_flow = T.absolute(flow_kpt - flow_pix).mean()
    pred = bilinear_warp(source, flow_kpt)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"warped image {pred.shape} vs target {target.shape}")
    l_image = T.absolute(pred - target).mean()
    return DistillLosses(l_flow + T.scale(l_image, lam), l_flow, l_image)


def l1_recon_error(pred, target) -> float:
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=float)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).mean())


# -- synthetic shapes -------------------------------------------------------------------------
def viewpoint_code(index: int, bins: int = 4) -> np.ndarray:
    if not 0 <= index < bins:
        raise ValueError(f"viewpoint bin {index} outside 0..{bins - 1}")
    code = np.zeros(bins)
    code[index] = 1.0
    return code


def render_polygon(vertices: np.ndarray, size: int, supersample: int = 4) -> np.ndarray:
    """Anti-aliased fill of a simple polygon (vertices in pixel coordinates, (x, y))."""
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    px = (xs[..., None, None] + offs[None, None, None, :]).reshape(size, size, -1)
    py = (ys[..., None, None] + offs[None, None, :, None]).reshape(size, size, -1)
    inside = np.zeros(px.shape, dtype=bool)
    vx, vy = vertices[:, 0], vertices[:, 1]
    n = len(vertices)
    for k in range(n):
        x1, y1, x2, y2 = vx[k], vy[k], vx[(k + 1) % n], vy[(k + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside.mean(axis=-1)


@dataclass
class ShapeViews:
    """Paired source/target views of procedural polygons."""

    source: np.ndarray  # (B, H, W)
    target: np.ndarray  # (B, H, W)
    keypoints: np.ndarray  # (B, K, 2), source-view polygon vertices
    view: np.ndarray  # (B, bins) one-hot
    flow: np.ndarray  # (B, H, W, 2) ground truth

    def __len__(self):
        return len(self.source)

    def subset(self, idx) -> ShapeViews:
        return ShapeViews(self.source[idx], self.target[idx], self.keypoints[idx], self.view[idx], self.flow[idx])


@dataclass
class ShapesConfig:
    n_examples: int = 600
    size: int = 16
    n_keypoints: int = 6
    bins: int = 4
    kind: str = "rotate"  # or "translate"
    seed: int = 0
    rotations: tuple = (-50.0, -20.0, 20.0, 50.0)
    radius_range: tuple = (2.5, 5.0)
    margin: float = 5.0
    shifts: tuple = ((-2, 0), (2, 0), (0, -2), (0, 2))


def _view_transform(cfg: ShapesConfig, view: int, center) -> np.ndarray:
    if cfg.kind == "translate":
        return translation(*cfg.shifts[view])
    if cfg.kind == "rotate":
        return rotation(cfg.rotations[view], center)
    raise ValueError(f"unknown shape transform kind {cfg.kind!r}")


def make_shape_views(cfg: ShapesConfig) -> ShapeViews:
    """Random star-shaped polygons and their views under a viewpoint-dependent transform.

    The target view is rendered from the transformed polygon, so the ground-truth
    flow is exact for translations and approximate only by resampling for
    rotations.
    """
    rng = np.random.default_rng(cfg.seed)
    s, k = cfg.size, cfg.n_keypoints
    src, tgt, kps, views, flows = [], [], [], [], []
    margin = cfg.margin
    for _ in range(cfg.n_examples):
        center = rng.uniform(margin, s - 1 - margin, size=2)
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=k)) + rng.uniform(0, 2 * np.pi)
        radii = rng.uniform(*cfg.radius_range, size=k)
        verts = center + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        v = int(rng.integers(cfg.bins))
        A = _view_transform(cfg, v, center)
        moved = np.column_stack([verts, np.ones(k)]) @ A.T
        src.append(render_polygon(verts, s))
        tgt.append(render_polygon(moved[:, :2], s))
        kps.append(verts)
        views.append(viewpoint_code(v, cfg.bins))
        flows.append(synthetic_flow(A, s, s))
    return ShapeViews(np.array(src), np.array(tgt), np.array(kps), np.array(views), np.array(flows))


# -- teacher / student predictors -----------------------------------------------------------------
class FlowPredictor:
    """MLP from a flat input vector to a dense flow (identity grid plus predicted offset)."""

    def __init__(self, in_dim: int, size: int, hidden: int, rng: np.random.Generator, name: str):
        self.size = size
        self.net = MLP([in_dim, hidden, size * size * 2], rng, activation="tanh", name=name)
        last = self.net.layers[-1]
        last.weight.data *= 0.1
        self.base = identity_flow(size, size)

    def __call__(self, inputs) -> Tensor:
        x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
        offset = self.net(x).reshape(x.shape[0], self.size, self.size, 2)
        return offset + self.base

    @property
    def params(self) -> list[Tensor]:
        return self.net.params


def teacher_inputs(views: ShapeViews) -> np.ndarray:
    return np.concatenate([views.source.reshape(len(views), -1), views.view], axis=1)


def student_inputs(views: ShapeViews, size: int) -> np.ndarray:
    # keypoints scaled to roughly [-1, 1]
    kp = (views.keypoints.reshape(len(views), -1) - size / 2) / (size / 2)
    return np.concatenate([kp, views.view], axis=1)


@dataclass
class DistillConfig:
    shapes: ShapesConfig = field(default_factory=ShapesConfig)
    n_test: int = 200
    hidden: int = 128
    teacher_steps: int = 1500
    student_steps: int = 1500
    batch_size: int = 32
    lr: float = 3e-3
    lam: float = 1.0
    teacher_flow_weight: float = 1.0
    log_every: int = 100
    seed: int = 0


@dataclass
class DistillResult:
    teacher: FlowPredictor
    student: FlowPredictor
    metrics: list[dict]
    teacher_error: float
    student_error: float
    oracle_error: float


def _eval_error(predict, inputs, views: ShapeViews) -> float:
    with _no_grad(predict.params):
        flow = predict(inputs).data
    return l1_recon_error(bilinear_warp(views.source, flow).data, views.target)


class _no_grad:
    def __init__(self, params):
        self.params = params

    def __enter__(self):
        self.saved = [p.requires_grad for p in self.params]
        for p in self.params:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p, s in zip(self.params, self.saved):
            p.requires_grad = s


def train_flow_predictors(cfg: DistillConfig, student: FlowPredictor | None = None) -> DistillResult:
    """Train the image-input teacher, then distil a keypoint-input student from it.

    The teacher minimises mean-L1 reconstruction plus ``teacher_flow_weight``
    times mean-L1 to the ground-truth flow. The student minimises
    :func:`distill_loss` against the frozen teacher's flow.
    """
    data = make_shape_views(cfg.shapes)
    n_train = len(data) - cfg.n_test
    if n_train <= 0:
        raise ValueError("n_test leaves no training examples")
    train, test = data.subset(slice(0, n_train)), data.subset(slice(n_train, None))
    rng = np.random.default_rng(cfg.seed)
    size = cfg.shapes.size
    t_in, s_in = teacher_inputs(train), student_inputs(train, size)
    teacher = FlowPredictor(t_in.shape[1], size, cfg.hidden, rng, name="teacher")
    if student is None:
        student = FlowPredictor(s_in.shape[1], size, cfg.hidden, rng, name="student")
    metrics: list[dict] = []

    opt = T.Adam(teacher.params, cfg.lr)
    for step in range(cfg.teacher_steps):
        idx = rng.integers(0, n_train, size=cfg.batch_size)
        flow = teacher(t_in[idx])
        recon = T.absolute(bilinear_warp(train.source[idx], flow) - train.target[idx]).mean()
        loss = recon + T.scale(T.absolute(flow - train.flow[idx]).mean(), cfg.teacher_flow_weight)
        _check_loss(loss, "teacher", step)
        opt.step(T.grad(loss, teacher.params))
        if step % cfg.log_every == 0 or step == cfg.teacher_steps - 1:
            metrics.append({"phase": "teacher", "step": step, "loss": loss.item(), "l1_image": recon.item()})

    with _no_grad(teacher.params):
        teacher_flows = teacher(t_in).data
    opt = T.Adam(student.params, cfg.lr)
    for step in range(cfg.student_steps):
        idx = rng.integers(0, n_train, size=cfg.batch_size)
        out = distill_loss(student(s_in[idx]), teacher_flows[idx], train.source[idx], train.target[idx], cfg.lam)
        _check_loss(out.total, "student", step)
        if step % cfg.log_every == 0 or step == cfg.student_steps - 1:
            metrics.append({"phase": "student", "step": step, "loss": out.total.item(), "l1_flow": out.flow.item(), "l1_image": out.image.item()})
        opt.step(T.grad(out.total, student.params))

    teacher_err = _eval_error(teacher, teacher_inputs(test), test)
    student_err = _eval_error(student, student_inputs(test, size), test)
    oracle_err = l1_recon_error(bilinear_warp(test.source, test.flow).data, test.target)
    return DistillResult(teacher, student, metrics, teacher_err, student_err, oracle_err)


def _check_loss(loss: Tensor, phase: str, step: int) -> None:
    if not math.isfinite(loss.item()):
        raise T.NonFiniteError(f"{phase} loss is non-finite at step {step}")
