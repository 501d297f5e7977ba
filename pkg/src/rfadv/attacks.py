"""Adversarial perturbations against the modulation classifier.

Three families share one l2-ball projected-gradient core:

* ``pgd``: one perturbation per frame.
* ``craft_uaa``: a single universal perturbation, accumulated from inner
  PGD runs on randomly phase-rotated training frames.
* ``craft_cuaa``: one universal perturbation per source class.

Perturbations are complex vectors; their l2 norm is the norm of the
``(L, 2)`` real view.
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import circular_shift, phase_rotate
from .neural import Model, loss_and_grad_input, predict

log = logging.getLogger(__name__)

PERTURBATION_MAGIC = b"RFADVP1"


class PerturbationKind(enum.IntEnum):
    PER_SAMPLE = 0
    UNIVERSAL = 1
    PER_CLASS = 2


UNIVERSAL_KEY = 0


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    steps: int = 50
    step_size: float = 0.05
    norm: str = "l2"
    targeted: int | None = None
    seed: int = 0
    # universal crafting
    inner_steps: int = 10
    max_epochs: int = 5
    target_fooling_rate: float = 0.8
    craft_size: int = 512
    val_size: int = 128
    batch_size: int = 32
    min_class_count: int = 64

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.steps < 1 or self.inner_steps < 1:
            raise ValueError("step counts must be at least 1")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.norm != "l2":
            raise ValueError(f"only the l2 norm is supported, got {self.norm!r}")


@dataclass
class Perturbation:
    kind: PerturbationKind
    vectors: dict[int, np.ndarray]
    epsilon_used: float
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = PerturbationKind(self.kind)
        for key, v in self.vectors.items():
            n = l2norm(v)
            if n > self.epsilon_used + 1e-9:
                raise ValueError(f"perturbation {key} has norm {n} > epsilon {self.epsilon_used}")

    def __getitem__(self, key) -> np.ndarray:
        if self.kind is PerturbationKind.UNIVERSAL and key is None:
            key = UNIVERSAL_KEY
        try:
            return self.vectors[int(key)]
        except (KeyError, TypeError):
            raise KeyError(f"no {self.kind.name.lower()} perturbation for key {key!r}") from None

    @property
    def universal(self) -> np.ndarray:
        return self[UNIVERSAL_KEY]

    def stack(self, keys) -> np.ndarray:
        return np.stack([self[k] for k in keys])


# ---------------------------------------------------------------- basics


def l2norm(r, axis=None):
    """l2 norm of the real view; per frame when ``axis=-1``."""
    return np.sqrt(np.sum(np.abs(np.asarray(r)) ** 2, axis=axis))


def project_l2(r, epsilon: float) -> np.ndarray:
    """Radially shrink ``r`` (or each row of a stack) into the l2 ball of radius ``epsilon``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    r = np.asarray(r)
    n = l2norm(r, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(n > epsilon, epsilon / n, 1.0)
    # guard the rounding of epsilon / n
    out = r * (scale[..., None] if r.ndim > 1 else scale)
    over = l2norm(out, axis=-1) > epsilon
    if np.any(over):
        out = np.where(over[..., None] if r.ndim > 1 else over, out * (1 - 1e-12), out)
    return out


def _complex_grad(g: np.ndarray) -> np.ndarray:
    return g[..., 0] + 1j * g[..., 1]


def _unit(g: np.ndarray):
    n = l2norm(g, axis=-1)
    safe = np.where(n > 0, n, 1.0)
    return g / safe[:, None], n > 0


def _pgd_batch(model: Model, x, labels, *, epsilon, steps, step_size, targeted, stop_early=False,
               reference=None):
    """Core loop on a ``(B, L)`` stack.  Returns ``(r, final_pred)``.

    Untargeted: ascend the loss of ``labels``.  Targeted: descend it.
    With ``stop_early`` a frame freezes once it is fooled, meaning its
    prediction differs from ``reference`` (untargeted) or equals the
    target (targeted).
    """
    x = np.asarray(x)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(x),))
    ref = labels if reference is None else np.asarray(reference)
    r = np.zeros(x.shape, dtype=np.complex128)
    active = np.ones(len(x), dtype=bool)
    pred = None
    for _ in range(steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        _, scores, g = loss_and_grad_input(model, x[idx] + r[idx], labels[idx])
        cur = np.argmax(scores, axis=1)
        if stop_early:
            done = cur == labels[idx] if targeted else cur != ref[idx]
            active[idx[done]] = False
            idx, g = idx[~done], g[~done]
            if idx.size == 0:
                break
        d, nonzero = _unit(_complex_grad(g).astype(np.complex128))
        sign = -1.0 if targeted else 1.0
        # zero gradient: keep r for that frame
        r[idx] = project_l2(r[idx] + sign * step_size * d * nonzero[:, None], epsilon)
    return r


def pgd_vectors(model: Model, x, y, cfg: AttackConfig, batch_size: int = 128) -> np.ndarray:
    """Per-frame PGD perturbations as a ``(B, L)`` complex stack."""
    x = np.atleast_2d(np.asarray(x))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(x),))
    labels = y if cfg.targeted is None else np.full(len(x), cfg.targeted)
    out = np.empty(x.shape, dtype=np.complex128)
    for i in range(0, len(x), batch_size):
        out[i:i + batch_size] = _pgd_batch(
            model, x[i:i + batch_size], labels[i:i + batch_size], epsilon=cfg.epsilon,
            steps=cfg.steps, step_size=cfg.step_size, targeted=cfg.targeted is not None)
    return out


def pgd(model: Model, x, y, cfg: AttackConfig, ids=None) -> Perturbation:
    """Projected gradient attack on one frame or a stack; keys are ``ids`` (default 0..B-1)."""
    r = pgd_vectors(model, x, y, cfg)
    ids = range(len(r)) if ids is None else ids
    return Perturbation(PerturbationKind.PER_SAMPLE, {int(i): v for i, v in zip(ids, r)}, cfg.epsilon)


# ---------------------------------------------------------------- universal


def fooling_rate(model: Model, frames, r, target: int | None = None) -> float:
    """Untargeted: fraction whose label changes.  Targeted: fraction labelled ``target``."""
    adv = predict(model, np.asarray(frames) + r)
    if target is not None:
        return float(np.mean(adv == target))
    return float(np.mean(adv != predict(model, frames)))


def _frames_of(data):
    return np.asarray(getattr(data, "frames", data))


def craft_uaa(model: Model, data, cfg: AttackConfig) -> Perturbation:
    """Universal perturbation from randomly rotated training frames.

    Frames are visited in shuffled mini-batches.  Each frame gets a fresh
    random phase; frames that ``v`` does not yet fool get a short PGD run
    started from ``x + v``, and the resulting steps are added to ``v``
    before re-projecting onto the epsilon ball.  ``batch_size=1`` is the
    strictly sequential algorithm.  Stops when the fooling rate on a
    validation slice reaches the target, else after ``max_epochs`` and
    returns the best ``v`` seen (``info['converged']`` is then False).
    """
    frames = _frames_of(data)
    if len(frames) == 0:
        raise ValueError("no frames to craft from")
    rng = np.random.default_rng(cfg.seed)
    pool = rng.permutation(len(frames))
    craft = frames[pool[: cfg.craft_size]]
    val = frames[pool[: cfg.val_size]] if len(frames) <= cfg.craft_size else \
        frames[pool[cfg.craft_size: cfg.craft_size + cfg.val_size]]
    targeted = cfg.targeted is not None
    L = frames.shape[1]
    v = np.zeros(L, dtype=np.complex128)
    best_v, best_rate = v.copy(), -1.0
    converged = False
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        epochs_run = epoch + 1
        order = rng.permutation(len(craft))
        for start in range(0, len(order), cfg.batch_size):
            xb = craft[order[start:start + cfg.batch_size]]
            xr = phase_rotate(xb, rng.uniform(-np.pi, np.pi, len(xb)))
            clean = predict(model, xr)
            adv = predict(model, xr + v)
            need = adv != cfg.targeted if targeted else adv == clean
            if not np.any(need):
                continue
            labels = np.full(int(need.sum()), cfg.targeted) if targeted else clean[need]
            dv = _pgd_batch(model, xr[need] + v, labels, epsilon=cfg.epsilon, steps=cfg.inner_steps,
                            step_size=cfg.step_size, targeted=targeted, stop_early=True)
            v = project_l2(v + dv.sum(axis=0), cfg.epsilon)
        rate = fooling_rate(model, val, v, cfg.targeted)
        log.debug("uaa epoch %d fooling rate %.3f", epoch, rate)
        if rate > best_rate:
            best_rate, best_v = rate, v.copy()
        if rate >= cfg.target_fooling_rate:
            converged = True
            break
    if not converged:
        log.warning("universal perturbation reached fooling rate %.3f < target %.2f",
                    best_rate, cfg.target_fooling_rate)
    return Perturbation(PerturbationKind.UNIVERSAL, {UNIVERSAL_KEY: best_v}, cfg.epsilon,
                        {"fooling_rate": best_rate, "converged": converged, "epochs": epochs_run})


def class_seed(seed: int, c: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(c,)).generate_state(1)[0])


def craft_cuaa(model: Model, data, cfg: AttackConfig, classes=None) -> Perturbation:
    """One universal perturbation per source class of ``data`` (needs ``frames`` and ``labels``)."""
    frames, labels = _frames_of(data), np.asarray(data.labels)
    classes = np.unique(labels) if classes is None else classes
    vectors, info = {}, {}
    for c in classes:
        sel = frames[labels == c]
        if len(sel) < cfg.min_class_count:
            log.warning("class %d has %d frames (< %d); skipped", c, len(sel), cfg.min_class_count)
            info[int(c)] = {"skipped": True, "count": len(sel)}
            continue
        p = craft_uaa(model, sel, replace(cfg, seed=class_seed(cfg.seed, int(c))))
        vectors[int(c)] = p.universal
        info[int(c)] = p.info
    return Perturbation(PerturbationKind.PER_CLASS, vectors, cfg.epsilon, info)


# ---------------------------------------------------------------- application


def apply(x, pert: Perturbation, key=None, time_shift=0, phase=0.0) -> np.ndarray:
    """``x + shift(rotate(r))`` where ``r`` is the vector stored under ``key``.

    For a ``(B, L)`` stack, ``key``, ``time_shift`` and ``phase`` may each be
    one value per frame.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        r = pert[key]
    else:
        keys = np.broadcast_to(np.asarray(UNIVERSAL_KEY if key is None else key), (len(x),))
        r = pert.stack(keys)
    return x + circular_shift(phase_rotate(r, phase), time_shift)


def control_gwn(r, rng: np.random.Generator | None = None) -> np.ndarray:
    """Complex Gaussian noise rescaled to exactly the l2 norm of ``r``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    r = np.asarray(r)
    n = rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape)
    return n * (l2norm(r) / l2norm(n))


def control_shuffle(r, rng: np.random.Generator | None = None) -> np.ndarray:
    """``r`` with its samples randomly permuted in time."""
    rng = rng if rng is not None else np.random.default_rng(0)
    r = np.asarray(r)
    return r[rng.permutation(r.shape[-1])]


# ---------------------------------------------------------------- targeted efficacy


@dataclass
class TargetedMatrix:
    """``A[s, t]``: fraction of source-class frames classified as ``t`` after the attack toward ``t``.

    The diagonal holds the clean per-class accuracy.
    """

    A: np.ndarray
    counts: np.ndarray
    kind: str = ""

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    def display(self) -> np.ndarray:
        out = self.A.copy()
        np.fill_diagonal(out, 0.0)
        return out

    def mean_off_diagonal(self) -> float:
        C = len(self.A)
        mask = ~np.eye(C, dtype=bool) & self.present[:, None]
        return float(self.A[mask].mean()) if mask.any() else float("nan")


def targeted_matrix(model: Model, data, attack_kind: str, cfg: AttackConfig, *, craft_data=None,
                    num_classes: int | None = None, targets=None) -> TargetedMatrix:
    """Targeted efficacy for every (source, target) pair.

    ``data`` is evaluated; universal attacks are crafted on ``craft_data``
    (defaults to ``data``).  PGD crafts one perturbation per frame and
    target, UAA one per target, CUAA one per (source, target).  ``targets``
    restricts the work to some columns; each column depends only on its
    own derived seed, so a partial run reproduces those columns exactly.
    """
    frames, labels = _frames_of(data), np.asarray(data.labels)
    craft_data = data if craft_data is None else craft_data
    cf, cl = _frames_of(craft_data), np.asarray(craft_data.labels)
    C = num_classes or model.num_classes
    A = np.zeros((C, C))
    counts = np.array([np.sum(labels == s) for s in range(C)])
    clean = predict(model, frames)
    for s in range(C):
        if counts[s]:
            A[s, s] = np.mean(clean[labels == s] == s)
        else:
            log.warning("source class %d absent from evaluation data", s)
    kind = attack_kind.lower()
    if kind not in ("pgd", "uaa", "cuaa"):
        raise ValueError(f"unknown attack kind {attack_kind!r}")
    for t in range(C) if targets is None else targets:
        tcfg = replace(cfg, targeted=t, seed=class_seed(cfg.seed, t))
        if kind == "pgd":
            sel = labels != t
            r = pgd_vectors(model, frames[sel], labels[sel], tcfg)
            hit = predict(model, frames[sel] + r) == t
            for s in range(C):
                if s != t and counts[s]:
                    A[s, t] = np.mean(hit[labels[sel] == s])
        elif kind == "uaa":
            v = craft_uaa(model, cf, tcfg).universal
            hit = predict(model, frames + v) == t
            for s in range(C):
                if s != t and counts[s]:
                    A[s, t] = np.mean(hit[labels == s])
        elif kind == "cuaa":
            for s in range(C):
                if s == t or not counts[s]:
                    continue
                pool = cf[cl == s]
                if len(pool) < cfg.min_class_count:
                    log.warning("class %d too small to craft toward %d", s, t)
                    continue
                scfg = replace(tcfg, seed=class_seed(tcfg.seed, s))
                v = craft_uaa(model, pool, scfg).universal
                A[s, t] = np.mean(predict(model, frames[labels == s] + v) == t)
    return TargetedMatrix(A, counts, kind)


# ---------------------------------------------------------------- persistence


def save_perturbation(pert: Perturbation, path) -> None:
    """Write RFADVP1: magic, u8 kind, f64 epsilon, u32 count, then per vector
    i64 key, u32 length, interleaved float32 I/Q.  Little-endian.

    Vectors are nudged inward when float32 rounding would push them past epsilon.
    """
    chunks = [PERTURBATION_MAGIC, struct.pack("<BdI", int(pert.kind), pert.epsilon_used, len(pert.vectors))]
    for key in sorted(pert.vectors):
        v = np.asarray(pert.vectors[key])
        iq = np.stack([v.real, v.imag], axis=-1).astype("<f4")
        n = np.sqrt(np.sum(iq.astype(np.float64) ** 2))
        if n > pert.epsilon_used:
            iq = (np.stack([v.real, v.imag], axis=-1) * (pert.epsilon_used / n) * (1 - 1e-6)).astype("<f4")
        chunks.append(struct.pack("<qI", int(key), len(v)))
        chunks.append(iq.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_perturbation(path) -> Perturbation:
    data = Path(path).read_bytes()
    if not data.startswith(PERTURBATION_MAGIC):
        raise ValueError(f"{path}: bad magic, not an RFADVP1 perturbation file")
    pos = len(PERTURBATION_MAGIC)
    try:
        kind, eps, count = struct.unpack_from("<BdI", data, pos)
        pos += 13
        vectors = {}
        for _ in range(count):
            key, n = struct.unpack_from("<qI", data, pos)
            pos += 12
            if pos + 8 * n > len(data):
                raise ValueError("payload truncated")
            iq = np.frombuffer(data, dtype="<f4", count=2 * n, offset=pos).reshape(n, 2)
            pos += 8 * n
            vectors[key] = iq[:, 0].astype(np.float64) + 1j * iq[:, 1].astype(np.float64)
    except struct.error as exc:
        raise ValueError(f"{path}: truncated perturbation file") from exc
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return Perturbation(PerturbationKind(kind), vectors, eps)
