"""Experiment orchestration: configuration, seed derivation, sweeps and reports.

Every command takes an :class:`ExperimentConfig`, returns a :class:`Report`
and, when asked, writes it as a CSV with a fixed header plus a JSON
manifest that records the full configuration and every derived seed.
Random streams are derived from ``(master seed, command, axis index,
frame index)``, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .attacks import (
    AttackConfig,
    Perturbation,
    PerturbationKind,
    apply,
    control_gwn,
    control_shuffle,
    craft_cuaa,
    craft_uaa,
    l2norm,
    load_perturbation,
    pgd,
    pgd_vectors,
    save_perturbation,
    targeted_matrix,
)
from .data import Dataset, check_loopback, generate_dataset, load_dataset, save_dataset
from .modem import SCHEMES, ModScheme
from .neural import TrainConfig, accuracy, build_model, load_model, predict, save_model, train
from .receiver import BerReport, decode_chain

log = logging.getLogger(__name__)

CONDITIONS = ("clean", "pgd", "uaa", "cuaa", "gwn", "shuffle")
ATTACK_KINDS = ("pgd", "uaa", "cuaa")


# ---------------------------------------------------------------- configuration


@dataclass
class ExperimentConfig:
    """Everything a command needs.  Relative paths resolve against ``base_dir``."""

    train_data: str = "data/train.rfadvd"
    test_data: str = "data/test.rfadvd"
    model: str = "model.rfadvm"
    perturbation: str = "perturbation.rfadvp"
    out: str = "results"
    seed: int = 0
    threads: int = 1
    # dataset
    schemes: list[str] = field(default_factory=lambda: [s.name for s in SCHEMES])
    frames_per_class: int = 250
    test_frames_per_class: int = 100
    frame_len: int = 1024
    # training
    train: dict = field(default_factory=dict)
    model_options: dict = field(default_factory=dict)
    resume: bool = False
    # attacks
    attack_kind: str = "uaa"
    attack: dict = field(default_factory=lambda: {"epsilon": 8.0})
    conditions: list[str] = field(default_factory=lambda: list(CONDITIONS))
    eval_per_class: int | None = None
    # sweeps
    epsilons: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 6.0, 8.0])
    pan_db: list[float] = field(default_factory=lambda: [10.0, 5.0, 0.0, -5.0, -10.0, -15.0, -20.0])
    snr_db: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 30.0])
    perturbation_db: float = -14.0
    targeted_kinds: list[str] = field(default_factory=lambda: ["pgd", "uaa", "cuaa"])
    targeted_per_class: int = 10
    targeted_attack: dict = field(default_factory=dict)
    trials: int = 1
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{**d, "base_dir": str(d.get("base_dir", base_dir))})
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        for name in self.schemes:
            ModScheme.from_name(name)
        if self.frames_per_class < 1 or self.test_frames_per_class < 1:
            raise ValueError("frames per class must be at least 1")
        bad = set(self.conditions) - set(CONDITIONS)
        if bad:
            raise ValueError(f"unknown conditions {sorted(bad)}; choose from {CONDITIONS}")
        if self.attack_kind not in ATTACK_KINDS:
            raise ValueError(f"attack_kind must be pgd, uaa or cuaa, got {self.attack_kind!r}")
        try:
            for kind in ATTACK_KINDS:
                self.attack_config(kind)
                self.attack_config(kind, targeted=True)
            TrainConfig(**self.train)
        except TypeError as exc:
            raise ValueError(f"bad attack or training settings: {exc}") from exc

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def out_path(self, filename: str) -> Path:
        return self.path("out") / filename

    def attack_config(self, kind: str | None = None, targeted: bool = False, **overrides) -> AttackConfig:
        """Attack settings for ``kind``.

        ``attack`` (then ``targeted_attack`` when ``targeted``) may hold a
        sub-dict per attack kind, e.g. ``{"epsilon": 4, "cuaa": {"craft_size": 128}}``;
        a kind's sub-dict overrides the shared keys.
        """
        kw = _for_kind(self.attack, kind)
        if targeted:
            kw.update(_for_kind(self.targeted_attack, kind))
        kw.update(overrides)
        return AttackConfig(**kw)

    def train_config(self) -> TrainConfig:
        kw = dict(self.train)
        kw.setdefault("seed", derive_seed(self.seed, "train", 0))
        return TrainConfig(**kw)

    def scheme_list(self) -> list[ModScheme]:
        return [ModScheme.from_name(n) for n in self.schemes]


def _for_kind(d: dict, kind: str | None) -> dict:
    out = {k: v for k, v in d.items() if k not in ATTACK_KINDS}
    if kind is not None:
        out.update(d.get(kind, {}))
    return out


def derive_seed(master: int, command: str, axis: int = 0, frame: int = 0) -> int:
    """Stable 64-bit seed for one (command, axis point, frame) cell."""
    key = (zlib.crc32(command.encode()), int(axis), int(frame))
    return int(np.random.SeedSequence(int(master), spawn_key=key).generate_state(1, np.uint64)[0])


def derive_rng(master: int, command: str, axis: int = 0, frame: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, command, axis, frame))


def psr_db(epsilon: float, frame_len: int) -> float:
    """Perturbation-to-signal ratio of an l2 budget on unit-power frames."""
    return 20 * math.log10(epsilon / math.sqrt(frame_len))


def epsilon_for_psr(level_db: float, frame_len: int) -> float:
    return math.sqrt(frame_len) * 10 ** (level_db / 20)


# ---------------------------------------------------------------- reports


REPORT_FIELDS = ("experiment", "condition", "scheme", "epsilon", "psr_db", "pan_db", "snr_db", "shift",
                 "metric", "value", "trials", "seed")


@dataclass
class ReportRow:
    experiment: str
    condition: str
    metric: str
    value: float
    scheme: str = ""
    epsilon: float = math.nan
    psr_db: float = math.nan
    pan_db: float = math.nan
    snr_db: float = math.nan
    shift: str = ""
    trials: int = 1
    seed: int = 0

    def as_csv(self) -> dict:
        out = {}
        for k in REPORT_FIELDS:
            v = getattr(self, k)
            if isinstance(v, float):
                v = "" if math.isnan(v) else repr(v)
            out[k] = v
        return out


@dataclass
class Report:
    command: str
    rows: list[ReportRow] = field(default_factory=list)
    seeds: dict[str, int] = field(default_factory=dict)
    artifacts: dict[str, Any] = field(default_factory=dict)

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)

    def extend(self, rows: Iterable[ReportRow]) -> None:
        self.rows.extend(rows)

    def select(self, **match) -> list[ReportRow]:
        def ok(r):
            for k, v in match.items():
                got = getattr(r, k)
                if isinstance(v, float) and isinstance(got, float):
                    if not (got == v or (math.isnan(got) and math.isnan(v))):
                        return False
                elif got != v:
                    return False
            return True
        return [r for r in self.rows if ok(r)]

    def value(self, **match) -> float:
        rows = self.select(**match)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {match}")
        return rows[0].value

    def write(self, cfg: ExperimentConfig, name: str | None = None) -> Path:
        """Write ``<out>/<name>.csv`` and its ``.manifest.json`` sidecar."""
        out = cfg.path("out")
        out.mkdir(parents=True, exist_ok=True)
        name = name or self.command.replace("-", "_")
        path = out / f"{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow(r.as_csv())
        manifest = {"command": self.command, "master_seed": cfg.seed, "derived_seeds": self.seeds,
                    "seed_rule": "SeedSequence(master, spawn_key=(crc32(command), axis, frame))",
                    "rows": len(self.rows), "config": cfg.to_dict()}
        (out / f"{name}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def _pool_map(fn: Callable, items: list, threads: int) -> list:
    """Ordered map; every item must carry its own derived seed."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- shared helpers


def _require(cfg: ExperimentConfig, *names: str) -> None:
    missing = [str(cfg.path(n)) for n in names if not cfg.path(n).exists()]
    if missing:
        raise FileNotFoundError(f"missing input file(s): {', '.join(missing)}")


def load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    _require(cfg, "train_data", "test_data")
    return load_dataset(cfg.path("train_data")), load_dataset(cfg.path("test_data"))


def eval_set(cfg: ExperimentConfig, test: Dataset, per_class: int | None = None) -> Dataset:
    n = per_class if per_class is not None else cfg.eval_per_class
    return test if n is None else test.per_class(n)


def class_keyed(pert: Perturbation, labels) -> np.ndarray:
    """Stack of per-class vectors for ``labels``; classes without a vector get zeros."""
    L = len(next(iter(pert.vectors.values())))
    zero = np.zeros(L, dtype=complex)
    return np.stack([pert.vectors.get(int(c), zero) for c in labels])


def perturb(frames, labels, pert: Perturbation) -> np.ndarray:
    """Synchronised application: universal, per-class (by true label) or per-sample (by row)."""
    frames = np.asarray(frames)
    if pert.kind is PerturbationKind.UNIVERSAL:
        return frames + pert.universal
    if pert.kind is PerturbationKind.PER_CLASS:
        return frames + class_keyed(pert, labels)
    return frames + pert.stack(range(len(frames)))


def complex_noise(shape, sigma, rng) -> np.ndarray:
    """Circular complex Gaussian noise with ``E|n|^2 = sigma^2`` per sample."""
    s = np.asarray(sigma, dtype=float)
    if s.ndim:
        s = s[:, None]
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (s / np.sqrt(2))


def gwn_like(vectors, rng) -> np.ndarray:
    """One fresh Gaussian vector per row, each scaled to that row's l2 norm."""
    vectors = np.atleast_2d(vectors)
    return np.stack([control_gwn(v, rng) for v in vectors])


def _acc_row(exp, cond, value, **kw) -> ReportRow:
    return ReportRow(exp, cond, "accuracy", float(value), **kw)


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: ExperimentConfig, write: bool = True) -> Report:
    """Train and test splits from one seed; the test split continues each class's stream."""
    rep = Report("generate")
    seed = derive_seed(cfg.seed, "generate")
    rep.seeds["dataset"] = seed
    schemes = cfg.scheme_list()
    train_ds = generate_dataset(schemes, cfg.frames_per_class, frame_len=cfg.frame_len, seed=seed)
    test_ds = generate_dataset(schemes, cfg.test_frames_per_class, frame_len=cfg.frame_len, seed=seed,
                               first_frame=cfg.frames_per_class)
    for name, ds in (("train", train_ds), ("test", test_ds)):
        errors = check_loopback(ds, max_per_class=4)
        if errors:
            raise RuntimeError(f"{name} split fails the clean loopback check ({errors} bit errors)")
        rep.add(ReportRow("generate", name, "records", float(len(ds)), seed=seed))
        rep.add(ReportRow("generate", name, "loopback_bit_errors", float(errors), seed=seed))
    rep.artifacts.update(train=train_ds, test=test_ds)
    if write:
        for attr, ds in (("train_data", train_ds), ("test_data", test_ds)):
            cfg.path(attr).parent.mkdir(parents=True, exist_ok=True)
            save_dataset(ds, cfg.path(attr))
        rep.write(cfg)
    return rep


def cmd_train(cfg: ExperimentConfig, write: bool = True, data=None) -> Report:
    """Train (or resume) the classifier; writes the model and a per-epoch CSV."""
    train_ds, test_ds = data if data is not None else load_splits(cfg)
    rep = Report("train")
    tcfg = cfg.train_config()
    init_seed = derive_seed(cfg.seed, "train", 1)
    rep.seeds.update(train=tcfg.seed, init=init_seed)
    if cfg.resume and cfg.path("model").exists():
        model = load_model(cfg.path("model")).astype(np.float32)
    else:
        model = build_model(train_ds.num_classes, train_ds.frame_len, seed=init_seed,
                            **cfg.model_options).astype(np.float32)
    t0 = time.perf_counter()
    model, history = train(model, train_ds.frames, train_ds.labels, tcfg, val=(test_ds.frames, test_ds.labels))
    elapsed = time.perf_counter() - t0
    for m in history:
        for metric in ("loss", "accuracy", "val_accuracy"):
            rep.add(ReportRow("train", f"epoch {m.epoch}", metric, float(getattr(m, metric)), seed=tcfg.seed))
    held_out = accuracy(model, test_ds.frames, test_ds.labels)
    rep.add(_acc_row("train", "held-out clean", held_out, seed=tcfg.seed))
    rep.add(ReportRow("train", "wall clock", "seconds", elapsed, seed=tcfg.seed))
    rep.artifacts.update(model=model, history=history, seconds=elapsed)
    if write:
        cfg.path("model").parent.mkdir(parents=True, exist_ok=True)
        save_model(model, cfg.path("model"))
        out = cfg.path("out")
        out.mkdir(parents=True, exist_ok=True)
        with (out / "train_epochs.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "accuracy", "val_accuracy"])
            for m in history:
                w.writerow([m.epoch, repr(m.loss), repr(m.accuracy), repr(m.val_accuracy)])
        rep.write(cfg)
    return rep


def _model_and_data(cfg, model=None, data=None):
    if model is None:
        _require(cfg, "model")
        model = load_model(cfg.path("model")).astype(np.float32)
    train_ds, test_ds = data if data is not None else load_splits(cfg)
    return model, train_ds, test_ds


def craft(kind: str, model, train_ds: Dataset, acfg: AttackConfig, eval_ds: Dataset | None = None) -> Perturbation:
    """Craft a perturbation of ``kind``; universal kinds learn from ``train_ds``."""
    if kind == "uaa":
        return craft_uaa(model, train_ds, acfg)
    if kind == "cuaa":
        return craft_cuaa(model, train_ds, acfg)
    if kind == "pgd":
        if eval_ds is None:
            raise ValueError("per-sample attacks need the frames they attack")
        return pgd(model, eval_ds.frames, eval_ds.labels, acfg)
    raise ValueError(f"unknown attack kind {kind!r}")


def cmd_attack(cfg: ExperimentConfig, write: bool = True, model=None, data=None) -> Report:
    """Craft ``attack_kind`` at the configured epsilon and save it."""
    model, train_ds, test_ds = _model_and_data(cfg, model, data)
    ev = eval_set(cfg, test_ds)
    seed = derive_seed(cfg.seed, "attack")
    acfg = cfg.attack_config(cfg.attack_kind, seed=seed)
    pert = craft(cfg.attack_kind, model, train_ds, acfg, ev)
    rep = Report("attack", seeds={"attack": seed})
    eps = acfg.epsilon
    clean = predict(model, ev.frames)
    adv = predict(model, perturb(ev.frames, ev.labels, pert))
    kw = dict(epsilon=eps, psr_db=psr_db(eps, ev.frame_len), seed=seed)
    rep.add(_acc_row("attack", "clean", np.mean(clean == ev.labels), **kw))
    rep.add(_acc_row("attack", cfg.attack_kind, np.mean(adv == ev.labels), **kw))
    rep.add(ReportRow("attack", cfg.attack_kind, "fooling_rate", float(np.mean(adv != clean)), **kw))
    rep.artifacts["perturbation"] = pert
    if write:
        cfg.path("perturbation").parent.mkdir(parents=True, exist_ok=True)
        save_perturbation(pert, cfg.path("perturbation"))
        rep.write(cfg)
    return rep


def _sweep_point(model, train_ds, ev, cfg, i, eps):
    seed = derive_seed(cfg.seed, "sweep-eps", i)
    acfg = {k: cfg.attack_config(k, epsilon=eps, seed=seed) for k in ATTACK_KINDS}
    kw = dict(epsilon=eps, psr_db=psr_db(eps, ev.frame_len), seed=seed)
    rows, perts = [], {}
    conds = set(cfg.conditions)
    y = ev.labels
    if "clean" in conds:
        rows.append(_acc_row("sweep-eps", "clean", accuracy(model, ev.frames, y), **kw))
    if "pgd" in conds:
        r = pgd_vectors(model, ev.frames, y, acfg["pgd"])
        perts["pgd"] = r
        rows.append(_acc_row("sweep-eps", "pgd", accuracy(model, ev.frames + r, y), **kw))
    if conds & {"uaa", "gwn", "shuffle"}:
        v = craft_uaa(model, train_ds, acfg["uaa"])
        perts["uaa"] = v
        if "uaa" in conds:
            rows.append(_acc_row("sweep-eps", "uaa", accuracy(model, ev.frames + v.universal, y), **kw))
        crng = derive_rng(cfg.seed, "sweep-eps-controls", i)
        if "gwn" in conds:
            g = gwn_like(np.broadcast_to(v.universal, ev.frames.shape), crng)
            rows.append(_acc_row("sweep-eps", "gwn", accuracy(model, ev.frames + g, y), **kw))
        if "shuffle" in conds:
            s = control_shuffle(v.universal, crng)
            rows.append(_acc_row("sweep-eps", "shuffle", accuracy(model, ev.frames + s, y), **kw))
    if "cuaa" in conds:
        p = craft_cuaa(model, train_ds, acfg["cuaa"])
        perts["cuaa"] = p
        rows.append(_acc_row("sweep-eps", "cuaa", accuracy(model, ev.frames + class_keyed(p, y), y), **kw))
    return rows, perts, seed


def cmd_sweep_eps(cfg: ExperimentConfig, write: bool = True, model=None, data=None) -> Report:
    """Held-out accuracy against epsilon for every attack and control condition."""
    model, train_ds, test_ds = _model_and_data(cfg, model, data)
    ev = eval_set(cfg, test_ds)
    rep = Report("sweep-eps")
    results = _pool_map(lambda a: _sweep_point(model, train_ds, ev, cfg, *a),
                        list(enumerate(cfg.epsilons)), cfg.threads)
    for (i, eps), (rows, perts, seed) in zip(enumerate(cfg.epsilons), results):
        rep.extend(rows)
        rep.seeds[f"eps[{i}]={eps}"] = seed
        rep.artifacts[eps] = perts
    if write:
        rep.write(cfg)
    return rep


def cmd_sweep_pan(cfg: ExperimentConfig, write: bool = True, model=None, data=None, perts=None) -> Report:
    """Accuracy against post-perturbation noise at a fixed epsilon.

    Noise is set from the nominal perturbation deviation ``epsilon / sqrt(L)``
    so the same noise level applies to every condition, including the
    clean-plus-noise baseline.  Each point averages ``trials`` noise draws,
    shared by all conditions.  ``perts`` may supply already crafted
    ``{"pgd": (B, L) array, "uaa": Perturbation, "cuaa": Perturbation}``.
    """
    model, train_ds, test_ds = _model_and_data(cfg, model, data)
    ev = eval_set(cfg, test_ds)
    seed = derive_seed(cfg.seed, "sweep-pan")
    acfg = {k: cfg.attack_config(k, seed=seed) for k in ATTACK_KINDS}
    eps = acfg["uaa"].epsilon
    perts = dict(perts or {})
    if "pgd" not in perts:
        perts["pgd"] = pgd_vectors(model, ev.frames, ev.labels, acfg["pgd"])
    if "uaa" not in perts:
        perts["uaa"] = craft_uaa(model, train_ds, acfg["uaa"])
    if "cuaa" not in perts:
        perts["cuaa"] = craft_cuaa(model, train_ds, acfg["cuaa"])
    eps = perts["uaa"].epsilon_used
    adv = {"baseline": ev.frames,
           "pgd": ev.frames + perts["pgd"],
           "uaa": ev.frames + perts["uaa"].universal,
           "cuaa": ev.frames + class_keyed(perts["cuaa"], ev.labels)}
    sigma_a = eps / math.sqrt(ev.frame_len)
    rep = Report("sweep-pan", seeds={"craft": seed})

    def point(arg):
        j, pan = arg
        sigma = 0.0 if math.isinf(pan) and pan > 0 else sigma_a * 10 ** (-pan / 20)
        trials = cfg.trials if sigma else 1
        s = derive_seed(cfg.seed, "sweep-pan", j + 1)
        rng = np.random.default_rng(s)
        # paired design: every condition sees the same noise draws
        noise = [complex_noise(ev.frames.shape, sigma, rng) for _ in range(trials)] if sigma else [0.0]
        rows = []
        for cond, frames in adv.items():
            acc = float(np.mean([accuracy(model, frames + n, ev.labels) for n in noise]))
            rows.append(_acc_row("sweep-pan", cond, acc, epsilon=eps, psr_db=psr_db(eps, ev.frame_len),
                                 pan_db=float(pan), seed=s, trials=trials))
        return rows

    for rows in _pool_map(point, list(enumerate(cfg.pan_db)), cfg.threads):
        rep.extend(rows)
    rep.artifacts["perturbations"] = perts
    if write:
        rep.write(cfg)
    return rep


def cmd_targeted(cfg: ExperimentConfig, write: bool = True, model=None, data=None, targets=None) -> Report:
    """Targeted efficacy matrices, one C x C CSV per attack kind."""
    model, train_ds, test_ds = _model_and_data(cfg, model, data)
    ev = test_ds.per_class(cfg.targeted_per_class)
    rep = Report("targeted")
    names = [s.name for s in ev.schemes]
    for k, kind in enumerate(cfg.targeted_kinds):
        seed = derive_seed(cfg.seed, "targeted", k)
        rep.seeds[kind] = seed
        acfg = cfg.attack_config(kind, targeted=True, seed=seed)
        tm = targeted_matrix(model, ev, kind, acfg, craft_data=train_ds, targets=targets)
        rep.artifacts[kind] = tm
        kw = dict(epsilon=acfg.epsilon, psr_db=psr_db(acfg.epsilon, ev.frame_len), seed=seed)
        rep.add(ReportRow("targeted", kind, "mean_off_diagonal", tm.mean_off_diagonal(), **kw))
        if write:
            out = cfg.path("out")
            out.mkdir(parents=True, exist_ok=True)
            with (out / f"targeted_{kind}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["source"] + names)
                for s, row in enumerate(tm.display()):
                    w.writerow([names[s]] + [repr(float(a)) for a in row])
    if write:
        rep.write(cfg)
    return rep


def cmd_ber(cfg: ExperimentConfig, write: bool = True, model=None, data=None, pert=None) -> Report:
    """Decoding cost of the perturbation against equal-norm controls.

    The universal perturbation sits ``perturbation_db`` below the signal.
    Conditions clean / gwn / shuffle / adversarial are decoded with no
    extra noise and at every SNR of the AWGN sweep.  Rows are per scheme
    plus an aggregate, and classifier accuracy is reported per condition.
    """
    model, train_ds, test_ds = _model_and_data(cfg, model, data)
    ev = eval_set(cfg, test_ds)
    eps = epsilon_for_psr(cfg.perturbation_db, ev.frame_len)
    seed = derive_seed(cfg.seed, "ber")
    if pert is None:
        pert = craft_uaa(model, train_ds, cfg.attack_config("uaa", epsilon=eps, seed=seed))
    v = pert.universal
    crng = derive_rng(cfg.seed, "ber-controls")
    conds = {"clean": np.zeros_like(ev.frames, dtype=complex),
             "gwn": gwn_like(np.broadcast_to(v, ev.frames.shape), crng),
             "shuffle": np.broadcast_to(control_shuffle(v, crng), ev.frames.shape),
             "adversarial": np.broadcast_to(v, ev.frames.shape)}
    rep = Report("ber", seeds={"craft": seed})
    kw = dict(epsilon=eps, psr_db=psr_db(eps, ev.frame_len))
    for cond, r in conds.items():
        rep.add(_acc_row("ber", cond, accuracy(model, ev.frames + r, ev.labels), seed=seed, **kw))
    snrs = [math.inf] + list(cfg.snr_db)

    def point(arg):
        j, snr = arg
        rows = []
        for k, (cond, r) in enumerate(conds.items()):
            s = derive_seed(cfg.seed, "ber", j + 1, k)
            rng = np.random.default_rng(s)
            report = BerReport()
            for i in range(len(ev)):
                scheme = ev.schemes[ev.labels[i]]
                tx = ev.frames[i].astype(complex)
                rx = tx + r[i]
                if not math.isinf(snr):
                    rx = rx + complex_noise(rx.shape, math.sqrt(np.mean(np.abs(tx) ** 2) * 10 ** (-snr / 10)), rng)
                report.add(decode_chain(tx, ev.bits[i], rx, scheme, ev.shape))
            snr_v = math.inf if math.isinf(snr) else float(snr)
            for name, e in sorted(report.per_scheme().items()):
                rows.append(ReportRow("ber", cond, "ber", e.ber, scheme=name, snr_db=snr_v, trials=e.bits_compared,
                                      seed=s, **kw))
            rows.append(ReportRow("ber", cond, "ber", report.ber, scheme="all", snr_db=snr_v,
                                  trials=sum(e.bits_compared for e in report.entries), seed=s, **kw))
        return rows

    for rows in _pool_map(point, list(enumerate(snrs)), cfg.threads):
        rep.extend(rows)
    rep.artifacts["perturbation"] = pert
    if write:
        rep.write(cfg)
    return rep


def cmd_smartjam(cfg: ExperimentConfig, write: bool = True, model=None, data=None, pert=None) -> Report:
    """Synchronised against unsynchronised (random shift and phase) application."""
    model, train_ds, test_ds = _model_and_data(cfg, model, data)
    if pert is None:
        _require(cfg, "perturbation")
        pert = load_perturbation(cfg.path("perturbation"))
    if pert.kind is PerturbationKind.PER_SAMPLE:
        raise ValueError("smart jamming needs a time-invariant (universal or per-class) perturbation, "
                         "not per-sample vectors")
    ev = eval_set(cfg, test_ds)
    L = ev.frame_len
    keys = ev.labels if pert.kind is PerturbationKind.PER_CLASS else None
    if keys is not None:
        present = set(pert.vectors)
        keep = np.flatnonzero([int(c) in present for c in ev.labels])
        ev, keys = ev.subset(keep), ev.labels[keep]
    clean = predict(model, ev.frames)
    eps = pert.epsilon_used
    kw = dict(epsilon=eps, psr_db=psr_db(eps, L))
    rep = Report("smartjam")
    sync = predict(model, apply(ev.frames, pert, keys, 0, 0.0))
    rep.add(ReportRow("smartjam", "synchronized", "fooling_rate", float(np.mean(sync != clean)), shift="0", **kw))
    rep.add(_acc_row("smartjam", "synchronized", np.mean(sync == ev.labels), shift="0", **kw))
    frame_log = []

    def trial(t):
        seeds = [derive_seed(cfg.seed, "smartjam", t, i) for i in range(len(ev))]
        draws = [np.random.default_rng(s) for s in seeds]
        shifts = np.array([int(g.integers(0, L)) for g in draws])
        phases = np.array([g.uniform(-np.pi, np.pi) for g in draws])
        pred = predict(model, apply(ev.frames, pert, keys, shifts, phases))
        return seeds, shifts, phases, pred

    fooled, accs = [], []
    for t, (seeds, shifts, phases, pred) in enumerate(_pool_map(trial, list(range(cfg.trials)), cfg.threads)):
        fooled.append(np.mean(pred != clean))
        accs.append(np.mean(pred == ev.labels))
        frame_log += [(t, i, s, k, p) for i, (s, k, p) in enumerate(zip(seeds, shifts, phases))]
    rep.add(ReportRow("smartjam", "randomized", "fooling_rate", float(np.mean(fooled)), shift="uniform[0,L)",
                      trials=cfg.trials, **kw))
    rep.add(_acc_row("smartjam", "randomized", np.mean(accs), shift="uniform[0,L)", trials=cfg.trials, **kw))
    rep.seeds["frame_rule"] = derive_seed(cfg.seed, "smartjam", 0, 0)
    rep.artifacts.update(frames=frame_log, clean_accuracy=float(np.mean(clean == ev.labels)))
    if write:
        rep.write(cfg)
        with (cfg.path("out") / "smartjam_frames.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "frame", "seed", "shift", "phase"])
            w.writerows((t, i, s, k, repr(float(p))) for t, i, s, k, p in frame_log)
    return rep


COMMANDS: dict[str, Callable[..., Report]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "attack": cmd_attack,
    "sweep-eps": cmd_sweep_eps,
    "sweep-pan": cmd_sweep_pan,
    "targeted": cmd_targeted,
    "ber": cmd_ber,
    "smartjam": cmd_smartjam,
}
