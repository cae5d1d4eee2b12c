"""Boundary attack and its region-parameterized siblings (patch, frame,
whole-image iterated FGSM).

The boundary attack grows a w-pixel border mask one pixel per outer
iteration while the step size decays geometrically toward a floor; each
width gets a short run of masked FGSM steps that restart from the clean
image. The comparison attacks drop the outer loop: a fixed region, a fixed
step size and a longer inner budget.

A model here is anything with ``predict(image) -> int`` and
``loss_gradient(image, true_label) -> Tensor``; ModelGraph satisfies this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Protocol

import numpy as np

from .metrics import psnr_single
from .tensor import DOMAIN_255, PixelDomain, ShapeMismatchError, Tensor, elementwise_sign

EPSILON_FLOOR_TOL = 1e-12  # slack for the "step size reached its floor" test


class AttackError(ValueError):
    pass


class CleanMisclassifiedError(AttackError):
    """The clean input is already misclassified; nothing to attack."""


class RegionError(AttackError):
    """Region does not fit the image or selects nothing."""


class AttackableModel(Protocol):
    def predict(self, image: Tensor) -> int: ...

    def loss_gradient(self, image: Tensor, true_label: int) -> Tensor: ...


@dataclass(frozen=True)
class AttackRegion:
    """Attackable area: a border of given width, a rectangle, or everything.

    kind is one of "boundary", "frame", "patch", "whole". boundary and frame
    share the same border geometry; they differ in how the attack drives
    them (frame is randomly initialized and run at a static step size).
    """

    kind: str
    width: int = 0  # boundary / frame
    top: int = 0  # patch
    left: int = 0
    height: int = 0
    pwidth: int = 0

    def __post_init__(self):
        if self.kind not in ("boundary", "frame", "patch", "whole"):
            raise RegionError(f"unknown region kind {self.kind!r}")
        if self.kind in ("boundary", "frame") and self.width < 1:
            raise RegionError(f"{self.kind} width must be >= 1, got {self.width}")
        if self.kind == "patch" and (self.height < 1 or self.pwidth < 1):
            raise RegionError("patch extents must be >= 1")

    def descriptor(self) -> str:
        if self.kind in ("boundary", "frame"):
            return f"{self.kind}{self.width}"
        if self.kind == "patch":
            return f"patch{self.height}x{self.pwidth}+{self.top}+{self.left}"
        return "whole"


def boundary(width: int) -> AttackRegion:
    return AttackRegion("boundary", width=width)


def frame(width: int) -> AttackRegion:
    return AttackRegion("frame", width=width)


def patch(top: int, left: int, height: int, width: int) -> AttackRegion:
    return AttackRegion("patch", top=top, left=left, height=height, pwidth=width)


def whole() -> AttackRegion:
    return AttackRegion("whole")


@dataclass(frozen=True)
class AttackConfig:
    """Knobs of the attack family.

    epsilon0/minimum are the initial and floor step sizes; the step decays
    by ``decay`` per outer iteration and is clamped at the floor. max_width
    is exclusive (widths 1 .. max_width-1 are tried). inner_limit bounds the
    FGSM steps per width (comparison attacks conventionally use 50).
    """

    epsilon0: float
    minimum: float
    decay: float = 0.75
    max_width: int = 40
    inner_limit: int = 15
    psnr_threshold: float = 40.0
    pixel_domain: PixelDomain = DOMAIN_255
    clip: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.minimum <= self.epsilon0:
            raise AttackError(f"need 0 < minimum <= epsilon0, got {self.minimum}, {self.epsilon0}")
        if not 0 < self.decay < 1:
            raise AttackError(f"decay must be in (0, 1), got {self.decay}")
        if self.inner_limit < 1:
            raise AttackError("inner_limit must be >= 1")
        if self.max_width < 2:
            raise AttackError("max_width must be >= 2")


class TraceEntry(NamedTuple):
    width: int | str  # pixel width, or a region descriptor for region attacks
    epsilon: float
    inner_steps: int
    flipped: bool
    psnr_at_flip: float | None


@dataclass
class AttackOutcome:
    """Result of one attack run; success is re-verified at construction."""

    adversarial: Tensor
    success: bool
    adversarial_label: int | None
    final_width: int | str
    final_epsilon: float
    total_steps: int
    psnr: float
    trace: list[TraceEntry] = field(default_factory=list)


def epsilon_schedule(epsilon0: float, minimum: float, decay: float, k: int) -> float:
    """Step size at outer iteration k: max(minimum, epsilon0 * decay**k)."""
    return max(minimum, epsilon0 * decay**k)


def region_mask(shape: tuple, region: AttackRegion) -> Tensor:
    """0/1 float32 mask of attackable elements for an (H, W, C) image.

    boundary/frame(w) selects rows/cols < w or >= H-w / W-w across all
    channels; when 2w >= min(H, W) the border covers the whole image.
    """
    if len(shape) != 3:
        raise RegionError(f"mask needs an (H,W,C) shape, got {shape}")
    h, w, c = shape
    mask = np.zeros((h, w, c), dtype=np.float32)
    if region.kind == "whole":
        mask[:] = 1.0
    elif region.kind in ("boundary", "frame"):
        bw = region.width
        mask[:bw, :, :] = 1.0
        mask[max(h - bw, 0) :, :, :] = 1.0
        mask[:, :bw, :] = 1.0
        mask[:, max(w - bw, 0) :, :] = 1.0
    else:  # patch
        if (
            region.top < 0
            or region.left < 0
            or region.top + region.height > h
            or region.left + region.pwidth > w
        ):
            raise RegionError(
                f"patch {region.descriptor()} does not fit an {h}x{w} image"
            )
        mask[region.top : region.top + region.height, region.left : region.left + region.pwidth, :] = 1.0
    if not mask.any():
        raise RegionError(f"region {region.descriptor()} selects no elements")
    return mask


def masked_fgsm_step(
    model: AttackableModel,
    m_cur: Tensor,
    mask: Tensor,
    true_label: int,
    epsilon: float,
    cfg: AttackConfig,
) -> Tensor:
    """One signed-gradient step restricted to the masked elements.

    Masked-out elements are returned bit-identical to ``m_cur``; masked
    elements move by exactly +-epsilon (or 0 where the gradient is 0),
    clipped to the pixel domain when cfg.clip is set.
    """
    if m_cur.shape != mask.shape:
        raise ShapeMismatchError(f"mask shape {mask.shape} != image shape {m_cur.shape}")
    if epsilon <= 0:
        raise AttackError(f"epsilon must be positive, got {epsilon}")
    g = model.loss_gradient(m_cur, true_label)
    out = m_cur.copy()
    sel = mask > 0
    moved = m_cur[sel] + np.float32(epsilon) * elementwise_sign(g[sel])
    if cfg.clip:
        moved = np.clip(moved, np.float32(cfg.pixel_domain.lo), np.float32(cfg.pixel_domain.hi))
    out[sel] = moved
    return out


def _at_floor(epsilon: float, cfg: AttackConfig) -> bool:
    return epsilon <= cfg.minimum + EPSILON_FLOOR_TOL


def _verified_outcome(model, true_label, outcome: AttackOutcome) -> AttackOutcome:
    if outcome.success:
        label = model.predict(outcome.adversarial)
        if label == true_label:
            raise AttackError("bookkeeping error: success recorded but prediction did not flip")
        outcome.adversarial_label = label
    return outcome


def boundary_attack(
    model: AttackableModel, m: Tensor, true_label: int, cfg: AttackConfig
) -> AttackOutcome:
    """Grow the attacked border until the label flips.

    Width starts at 1. Each width restarts from the clean image and runs up
    to cfg.inner_limit masked FGSM steps. On a flip: stop everything when
    PSNR(clean, current) exceeds cfg.psnr_threshold or the step size has
    reached its floor, otherwise move on to the next width. The step size
    for width w is epsilon_schedule at k = w - 1. Returns the last flipped
    iterate if any flip happened, else the final failed iterate.
    """
    if model.predict(m) != true_label:
        raise CleanMisclassifiedError("clean input is not classified as true_label")
    trace: list[TraceEntry] = []
    total_steps = 0
    last_flip = None  # (iterate, width, epsilon, psnr)
    w_final, eps_final, m_cur = 1, cfg.epsilon0, m.copy()
    stop = False
    for w in range(1, cfg.max_width):
        eps = epsilon_schedule(cfg.epsilon0, cfg.minimum, cfg.decay, w - 1)
        w_final, eps_final = w, eps
        mask = region_mask(m.shape, boundary(w))
        m_cur = m.copy()
        flipped = False
        steps = 0
        for _ in range(cfg.inner_limit):
            m_cur = masked_fgsm_step(model, m_cur, mask, true_label, eps, cfg)
            steps += 1
            total_steps += 1
            if model.predict(m_cur) != true_label:
                flipped = True
                p = psnr_single(m, m_cur, cfg.pixel_domain)
                last_flip = (m_cur, w, eps, p)
                trace.append(TraceEntry(w, eps, steps, True, p))
                if p > cfg.psnr_threshold or _at_floor(eps, cfg):
                    stop = True
                break
        if not flipped:
            trace.append(TraceEntry(w, eps, steps, False, None))
        if stop:
            break
    if last_flip is not None:
        adv, w_flip, eps_flip, p_flip = last_flip
        outcome = AttackOutcome(
            adversarial=adv,
            success=True,
            adversarial_label=None,
            final_width=w_flip,
            final_epsilon=eps_flip,
            total_steps=total_steps,
            psnr=p_flip,
            trace=trace,
        )
    else:
        outcome = AttackOutcome(
            adversarial=m_cur,
            success=False,
            adversarial_label=None,
            final_width=w_final,
            final_epsilon=eps_final,
            total_steps=total_steps,
            psnr=psnr_single(m, m_cur, cfg.pixel_domain),
            trace=trace,
        )
    return _verified_outcome(model, true_label, outcome)


def region_attack(
    model: AttackableModel,
    m: Tensor,
    true_label: int,
    region: AttackRegion,
    cfg: AttackConfig,
) -> AttackOutcome:
    """Single-region attack: no outer loop, static step size cfg.minimum.

    patch/frame regions are first overwritten with uniform random values over
    the pixel domain (seeded by cfg.seed); whole starts from the clean image
    (plain iterated FGSM). Runs up to cfg.inner_limit steps, stopping at the
    first flip.
    """
    if region.kind not in ("patch", "frame", "whole"):
        raise RegionError(f"region attack takes patch/frame/whole, got {region.kind!r}")
    if model.predict(m) != true_label:
        raise CleanMisclassifiedError("clean input is not classified as true_label")
    mask = region_mask(m.shape, region)
    m_cur = m.copy()
    if region.kind in ("patch", "frame"):
        rng = np.random.default_rng(cfg.seed)
        sel = mask > 0
        m_cur[sel] = rng.uniform(
            cfg.pixel_domain.lo, cfg.pixel_domain.hi, size=int(sel.sum())
        ).astype(np.float32)
    eps = cfg.minimum
    flipped = False
    steps = 0
    p_flip = None
    for _ in range(cfg.inner_limit):
        m_cur = masked_fgsm_step(model, m_cur, mask, true_label, eps, cfg)
        steps += 1
        if model.predict(m_cur) != true_label:
            flipped = True
            p_flip = psnr_single(m, m_cur, cfg.pixel_domain)
            break
    desc = region.descriptor()
    trace = [TraceEntry(desc, eps, steps, flipped, p_flip)]
    outcome = AttackOutcome(
        adversarial=m_cur,
        success=flipped,
        adversarial_label=None,
        final_width=region.width if region.kind == "frame" else desc,
        final_epsilon=eps,
        total_steps=steps,
        psnr=p_flip if flipped else psnr_single(m, m_cur, cfg.pixel_domain),
        trace=trace,
    )
    return _verified_outcome(model, true_label, outcome)


def fixed_width_attack(
    model: AttackableModel, m: Tensor, true_label: int, width: int, cfg: AttackConfig
) -> AttackOutcome:
    """Inner loop only, at one fixed border width.

    Uses the step size the full attack would use at that width
    (epsilon_schedule at k = width - 1). Used by the attention reports to
    show what a specific width does to a sample, successful or not.
    """
    if model.predict(m) != true_label:
        raise CleanMisclassifiedError("clean input is not classified as true_label")
    eps = epsilon_schedule(cfg.epsilon0, cfg.minimum, cfg.decay, width - 1)
    mask = region_mask(m.shape, boundary(width))
    m_cur = m.copy()
    flipped = False
    steps = 0
    p_flip = None
    for _ in range(cfg.inner_limit):
        m_cur = masked_fgsm_step(model, m_cur, mask, true_label, eps, cfg)
        steps += 1
        if model.predict(m_cur) != true_label:
            flipped = True
            p_flip = psnr_single(m, m_cur, cfg.pixel_domain)
            break
    outcome = AttackOutcome(
        adversarial=m_cur,
        success=flipped,
        adversarial_label=None,
        final_width=width,
        final_epsilon=eps,
        total_steps=steps,
        psnr=p_flip if flipped else psnr_single(m, m_cur, cfg.pixel_domain),
        trace=[TraceEntry(width, eps, steps, flipped, p_flip)],
    )
    return _verified_outcome(model, true_label, outcome)


def with_seed(cfg: AttackConfig, seed: int) -> AttackConfig:
    return replace(cfg, seed=seed)


def default_epsilons(domain: PixelDomain) -> tuple[float, float]:
    """Conventional (epsilon0, minimum) for the two supported pixel ranges."""
    if math.isclose(domain.hi, 1.0):
        return 0.02, 0.01
    return 10.0, 3.0
