"""The optimizer family: SGD, SAM, LookSAM, C-Flat, and C-Flat Turbo.

Every optimizer is a pure step function ``(objective, theta, batch, cfg,
state) -> (theta_next, GradientBundle, state)``.  Vocabulary used
throughout (all flat float64 vectors):

* ``grad``            gradient at theta
* ``sam_grad``        gradient at the ascent point theta + rho*grad/|grad|
* ``proxy_grad``      gradient at the proxy point theta_p, offset from
                      theta along the normalized sharpness increment
* ``proxy_sam_grad``  gradient at the proxy's own ascent point
* ``flat_grad``       (rho/rho_fd) * (proxy_sam_grad - proxy_grad), the
                      flatness-promoting direction
* ``sharp_ortho``     component of sam_grad orthogonal to grad
* ``flat_ortho``      component of flat_grad orthogonal to proxy_grad

C-Flat descends along ``sam_grad + flat_weight * flat_grad`` and costs 4
gradient evaluations per step.  Turbo refreshes ``sharp_ortho`` and
``flat_ortho`` only every ``k`` steps and reconstructs the expensive
directions in between as ``v + surrogate_scale * (|v|/|ortho|) * ortho``
(2 evaluations per surrogate step).  Two gates control when the
regularizers apply at all: an EMA trigger on squared gradient norms and a
per-task linear schedule that widens ``k`` for later tasks.

Step functions share the same arithmetic helpers in the same order, so
the documented mode collapses (turbo with k=1 vs. C-Flat, flat_weight=0
vs. SAM, ...) hold bit-for-bit, not just approximately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import Batch, Objective
from .vectors import NORM_FLOOR, axpy, dot, l2_norm, sq_norm

MODE_SGD = "sgd"
MODE_SAM = "sam"
MODE_LOOKSAM = "looksam"
MODE_CFLAT = "cflat"
MODE_TURBO = "turbo"
MODES = (MODE_SGD, MODE_SAM, MODE_LOOKSAM, MODE_CFLAT, MODE_TURBO)


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters shared by the whole family.

    Ranges are enforced at construction.  ``rho_fd`` defaults to ``rho``
    so the flatness direction carries a unit finite-difference factor;
    it stays configurable because the factor is otherwise absorbed into
    ``flat_weight``.  ``trigger_mult=inf`` makes the trigger never fire.
    """

    mode: str = MODE_TURBO
    lr: float = 0.05                 # eta
    rho: float = 0.05                # perturbation radius
    rho_fd: float | None = None      # finite-difference step, default rho
    flat_weight: float = 0.2         # lambda
    surrogate_scale: float = 0.8     # beta
    ema_decay: float = 0.9           # delta
    k0: int = 5                      # initial turbo interval
    sched_slope: float = 10.0        # c in k_t = k0 + c*t/N
    total_tasks: int = 1             # N
    trigger_mult: float = 1.0        # m in  |g|^2 >= mu + m*sigma
    use_scheduler: bool = False
    use_trigger: bool = False
    # Keep running the proxy/flatness pipeline (with a degenerate proxy
    # point) when the sharpness gate fails; False short-circuits it.
    proxy_when_untriggered: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.rho_fd is not None and not self.rho_fd > 0:
            raise ValueError("rho_fd must be > 0")
        if self.flat_weight < 0:
            raise ValueError("flat_weight must be >= 0")
        if self.surrogate_scale < 0:
            raise ValueError("surrogate_scale must be >= 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in (0, 1)")
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if self.sched_slope < 0:
            raise ValueError("sched_slope must be >= 0")
        if self.total_tasks < 1:
            raise ValueError("total_tasks must be >= 1")
        if not (self.trigger_mult >= 0 or math.isinf(self.trigger_mult)):
            raise ValueError("trigger_mult must be >= 0")

    @property
    def fd_step(self) -> float:
        return self.rho if self.rho_fd is None else self.rho_fd


@dataclass
class EmaState:
    """EMA mean and squared-deviation trackers of |grad|^2 and |proxy_grad|^2."""

    mu_sharp: float = 0.0
    sigma_sharp: float = 1e-8
    mu_flat: float = 0.0
    sigma_flat: float = 1e-8


@dataclass
class TurboState:
    """Per-run optimizer state; single-owner, reset at task boundaries."""

    ema: EmaState = field(default_factory=EmaState)
    cached_sharp_ortho: np.ndarray | None = None
    cached_flat_ortho: np.ndarray | None = None
    step_in_task: int = 0
    task_index: int = 0
    current_k: int = 1
    eval_count: int = 0

    def reset_task(self, task_index: int) -> None:
        # directions cached on an earlier task are stale on a new one
        self.task_index = task_index
        self.step_in_task = 0
        self.cached_sharp_ortho = None
        self.cached_flat_ortho = None
        self.ema = EmaState()


@dataclass
class GradientBundle:
    """Per-step gradients plus provenance flags for diagnostics."""

    grad: np.ndarray | None = None
    sam_grad: np.ndarray | None = None
    proxy_grad: np.ndarray | None = None
    proxy_sam_grad: np.ndarray | None = None
    flat_grad: np.ndarray | None = None
    sharp_ortho: np.ndarray | None = None   # set only when freshly cached
    flat_ortho: np.ndarray | None = None
    update_dir: np.ndarray | None = None
    sharp_triggered: bool = False
    flat_triggered: bool = False
    sharp_cached: bool = False
    flat_cached: bool = False
    sharp_simulated: bool = False
    flat_simulated: bool = False
    evals: int = 0


def make_state(cfg: OptimizerConfig) -> TurboState:
    return TurboState(current_k=cfg.k0)


def _grad(obj: Objective, theta: np.ndarray, batch: Batch, state: TurboState | None):
    g = obj.gradient(theta, batch)
    if state is not None:
        state.eval_count += 1
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    return g


def sam_perturbation(grad: np.ndarray, rho: float) -> np.ndarray:
    """rho * grad/|grad|; the zero vector when |grad| is degenerate."""
    norm = l2_norm(grad)
    if norm < NORM_FLOOR:
        return np.zeros_like(grad)
    return (rho / norm) * grad


def sam_gradient(
    obj: Objective,
    theta: np.ndarray,
    batch: Batch,
    rho: float,
    state: TurboState | None = None,
    grad: np.ndarray | None = None,
):
    """Gradient pair (grad, sam_grad); 2 evaluations, 1 if grad is passed in."""
    if grad is None:
        grad = _grad(obj, theta, batch, state)
    sam_grad = _grad(obj, axpy(1.0, sam_perturbation(grad, rho), theta), batch, state)
    return grad, sam_grad


def proxy_point(
    theta: np.ndarray, grad: np.ndarray, sam_grad: np.ndarray, rho: float
) -> np.ndarray:
    """theta stepped rho along the normalized sharpness increment."""
    incr = sam_grad - grad
    norm = l2_norm(incr)
    if norm < NORM_FLOOR:
        return theta
    return axpy(rho / norm, incr, theta)


def flatness_gradient(
    obj: Objective,
    theta_p: np.ndarray,
    batch: Batch,
    rho: float,
    rho_fd: float,
    state: TurboState | None = None,
    proxy_grad: np.ndarray | None = None,
):
    """(proxy_grad, proxy_sam_grad, flat_grad) at the proxy point.

    2 evaluations, 1 if proxy_grad is passed in.  flat_grad is the
    finite-difference form (rho/rho_fd) * (proxy_sam_grad - proxy_grad);
    degenerate proxy gradients yield a zero flat_grad without the second
    evaluation.
    """
    if rho_fd <= 0:
        raise ValueError("rho_fd must be > 0")
    if proxy_grad is None:
        proxy_grad = _grad(obj, theta_p, batch, state)
    norm = l2_norm(proxy_grad)
    if norm < NORM_FLOOR:
        return proxy_grad, proxy_grad, np.zeros_like(proxy_grad)
    ascent = axpy(rho_fd / norm, proxy_grad, theta_p)
    proxy_sam_grad = _grad(obj, ascent, batch, state)
    flat_grad = (rho / rho_fd) * (proxy_sam_grad - proxy_grad)
    return proxy_grad, proxy_sam_grad, flat_grad


def orthogonal_component(v: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """v minus its projection onto ref; v unchanged for degenerate ref."""
    ref_sq = sq_norm(ref)
    if ref_sq < NORM_FLOOR * NORM_FLOOR:
        return v
    return axpy(-dot(v, ref) / ref_sq, ref, v)


def simulate_sharpness(
    grad: np.ndarray, cached_ortho: np.ndarray, scale: float
) -> np.ndarray:
    """grad + scale * (|grad|/|ortho|) * ortho, reusing the cached direction."""
    g_norm = l2_norm(grad)
    o_norm = l2_norm(cached_ortho)
    if o_norm < NORM_FLOOR or g_norm < NORM_FLOOR:
        return grad
    return axpy(scale * g_norm / o_norm, cached_ortho, grad)


def simulate_flatness(
    proxy_grad: np.ndarray, cached_ortho: np.ndarray, scale: float
) -> np.ndarray:
    return simulate_sharpness(proxy_grad, cached_ortho, scale)


def ema_update(ema: EmaState, which: str, sq: float, decay: float) -> EmaState:
    """mu first, then sigma against the freshly updated mu (order frozen)."""
    if which == "sharp":
        mu = decay * ema.mu_sharp + (1.0 - decay) * sq
        ema.mu_sharp = mu
        ema.sigma_sharp = decay * ema.sigma_sharp + (1.0 - decay) * (sq - mu) ** 2
    elif which == "flat":
        mu = decay * ema.mu_flat + (1.0 - decay) * sq
        ema.mu_flat = mu
        ema.sigma_flat = decay * ema.sigma_flat + (1.0 - decay) * (sq - mu) ** 2
    else:
        raise ValueError(f"unknown EMA track {which!r}")
    return ema


def trigger(ema: EmaState, which: str, sq: float, mult: float) -> bool:
    """Gate: squared norm at or above mu + mult*sigma (inclusive)."""
    if which == "sharp":
        return sq >= ema.mu_sharp + mult * ema.sigma_sharp
    if which == "flat":
        return sq >= ema.mu_flat + mult * ema.sigma_flat
    raise ValueError(f"unknown EMA track {which!r}")


def scheduled_k(k0: int, slope: float, task_index: int, total_tasks: int) -> int:
    """floor(k0 + slope * t/N), clamped to at least 1."""
    return max(1, int(math.floor(k0 + slope * task_index / total_tasks)))


def _finish(theta, update_dir, bundle, cfg, state):
    bundle.update_dir = update_dir
    theta_next = axpy(-cfg.lr, update_dir, theta)
    state.step_in_task += 1
    return theta_next, bundle, state


def sgd_step(obj, theta, batch, cfg, state):
    evals0 = state.eval_count
    grad = _grad(obj, theta, batch, state)
    bundle = GradientBundle(grad=grad)
    bundle.evals = state.eval_count - evals0
    return _finish(theta, grad, bundle, cfg, state)


def sam_step(obj, theta, batch, cfg, state):
    evals0 = state.eval_count
    grad, sam_grad = sam_gradient(obj, theta, batch, cfg.rho, state=state)
    bundle = GradientBundle(grad=grad, sam_grad=sam_grad)
    bundle.evals = state.eval_count - evals0
    return _finish(theta, sam_grad, bundle, cfg, state)


def _current_k(cfg: OptimizerConfig, state: TurboState) -> int:
    if cfg.use_scheduler:
        k = scheduled_k(cfg.k0, cfg.sched_slope, state.task_index, cfg.total_tasks)
    else:
        k = cfg.k0
    state.current_k = k
    return k


def looksam_step(obj, theta, batch, cfg, state):
    evals0 = state.eval_count
    k = _current_k(cfg, state)
    bundle = GradientBundle()
    cache = state.step_in_task % k == 0 or state.cached_sharp_ortho is None
    if cache:
        grad, sam_grad = sam_gradient(obj, theta, batch, cfg.rho, state=state)
        state.cached_sharp_ortho = orthogonal_component(sam_grad, grad)
        bundle.sharp_ortho = state.cached_sharp_ortho
        bundle.sharp_cached = True
    else:
        grad = _grad(obj, theta, batch, state)
        sam_grad = simulate_sharpness(
            grad, state.cached_sharp_ortho, cfg.surrogate_scale
        )
        bundle.sharp_simulated = True
    bundle.grad = grad
    bundle.sam_grad = sam_grad
    bundle.evals = state.eval_count - evals0
    return _finish(theta, sam_grad, bundle, cfg, state)


def cflat_step(obj, theta, batch, cfg, state):
    """Full objective descent: 4 evaluations, every step."""
    evals0 = state.eval_count
    grad, sam_grad = sam_gradient(obj, theta, batch, cfg.rho, state=state)
    theta_p = proxy_point(theta, grad, sam_grad, cfg.rho)
    proxy_grad, proxy_sam_grad, flat_grad = flatness_gradient(
        obj, theta_p, batch, cfg.rho, cfg.fd_step, state=state
    )
    bundle = GradientBundle(
        grad=grad,
        sam_grad=sam_grad,
        proxy_grad=proxy_grad,
        proxy_sam_grad=proxy_sam_grad,
        flat_grad=flat_grad,
        # free by-products, recorded for the landscape diagnostics
        sharp_ortho=orthogonal_component(sam_grad, grad),
        flat_ortho=orthogonal_component(flat_grad, proxy_grad),
    )
    update_dir = axpy(cfg.flat_weight, flat_grad, sam_grad)
    bundle.evals = state.eval_count - evals0
    return _finish(theta, update_dir, bundle, cfg, state)


def turbo_step(obj, theta, batch, cfg, state):
    """One C-Flat Turbo iteration.

    Cache steps (``step_in_task % k == 0``, so the first step of a task
    always refreshes) recompute the perturbed gradients and store the
    orthogonal components; the steps in between reuse them through the
    surrogate reconstruction.  With the trigger enabled, each regularizer
    applies only when its tracked squared norm clears the EMA gate.

    Evaluations per step: 1 (grad) + 1 if the sharpness branch caches
    + 1 for the proxy gradient when the sharpness branch ran + 1 if the
    flatness branch caches.  Both branches gated off costs exactly 1.
    """
    evals0 = state.eval_count
    k = _current_k(cfg, state)
    j = state.step_in_task
    grad = _grad(obj, theta, batch, state)
    bundle = GradientBundle(grad=grad)
    update_dir = grad

    g_sq = sq_norm(grad)
    ema_update(state.ema, "sharp", g_sq, cfg.ema_decay)
    sharp_on = (not cfg.use_trigger) or trigger(
        state.ema, "sharp", g_sq, cfg.trigger_mult
    )
    bundle.sharp_triggered = sharp_on

    sam_grad = None
    if sharp_on:
        if j % k == 0 or state.cached_sharp_ortho is None:
            _, sam_grad = sam_gradient(
                obj, theta, batch, cfg.rho, state=state, grad=grad
            )
            state.cached_sharp_ortho = orthogonal_component(sam_grad, grad)
            bundle.sharp_ortho = state.cached_sharp_ortho
            bundle.sharp_cached = True
        else:
            sam_grad = simulate_sharpness(
                grad, state.cached_sharp_ortho, cfg.surrogate_scale
            )
            bundle.sharp_simulated = True
        bundle.sam_grad = sam_grad
        update_dir = sam_grad

    if sharp_on or cfg.proxy_when_untriggered:
        if sharp_on:
            theta_p = proxy_point(theta, grad, sam_grad, cfg.rho)
            proxy_grad = _grad(obj, theta_p, batch, state)
        else:
            # degenerate proxy: sam_grad collapses to grad, so theta_p is
            # theta and the proxy gradient is grad itself (no new eval)
            theta_p = theta
            proxy_grad = grad
        bundle.proxy_grad = proxy_grad

        p_sq = sq_norm(proxy_grad)
        ema_update(state.ema, "flat", p_sq, cfg.ema_decay)
        flat_on = (not cfg.use_trigger) or trigger(
            state.ema, "flat", p_sq, cfg.trigger_mult
        )
        bundle.flat_triggered = flat_on

        if flat_on:
            if j % k == 0 or state.cached_flat_ortho is None:
                _, proxy_sam_grad, flat_grad = flatness_gradient(
                    obj,
                    theta_p,
                    batch,
                    cfg.rho,
                    cfg.fd_step,
                    state=state,
                    proxy_grad=proxy_grad,
                )
                state.cached_flat_ortho = orthogonal_component(flat_grad, proxy_grad)
                bundle.proxy_sam_grad = proxy_sam_grad
                bundle.flat_ortho = state.cached_flat_ortho
                bundle.flat_cached = True
            else:
                flat_grad = simulate_flatness(
                    proxy_grad, state.cached_flat_ortho, cfg.surrogate_scale
                )
                bundle.flat_simulated = True
            bundle.flat_grad = flat_grad
            update_dir = axpy(cfg.flat_weight, flat_grad, update_dir)

    bundle.evals = state.eval_count - evals0
    return _finish(theta, update_dir, bundle, cfg, state)


_STEP_FNS = {
    MODE_SGD: sgd_step,
    MODE_SAM: sam_step,
    MODE_LOOKSAM: looksam_step,
    MODE_CFLAT: cflat_step,
    MODE_TURBO: turbo_step,
}


def step(obj, theta, batch, cfg: OptimizerConfig, state: TurboState):
    """Dispatch one optimizer step for cfg.mode."""
    return _STEP_FNS[cfg.mode](obj, theta, batch, cfg, state)
