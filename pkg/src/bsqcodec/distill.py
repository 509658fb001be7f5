"""Four-stage causal distillation at desk scale.

A frozen non-causal twin of the encoder (symmetric conv padding,
full-context attention) acts as the teacher; the causal student is
aligned to it stage by stage:

1. positional-embedding conv alone,
2. feature extractor + attention body with per-layer weighted losses,
3. compressor/quantizer/decompressor on frozen encoder features, and the
   decoder on teacher features,
4. joint fine-tune through the quantizer against the teacher output, with
   the refiner closing the remaining gap.

Ablation toggles reproduce the "w/o refiner" and "w/o stage-4" variants.
All randomness derives from one seed, so reports are bit-reproducible.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tz
from .codec import CodecConfig, CodecModel, EncoderStack, encode_offline
from .layers import Module
from .metrics import TokenHistogram, code_usage
from .quantizer import bsq_ste
from .tensor import Adam, DTYPE, Tensor, mse_loss, no_grad


class TrainingDiverged(RuntimeError):
    def __init__(self, stage: int, step: int):
        super().__init__(f"stage {stage} diverged (non-finite loss) at step {step}")
        self.stage = stage
        self.step = step


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SignalItem:
    wave_in: np.ndarray   # float32 at sample_rate_in
    wave_out: np.ndarray  # the same signal rendered at sample_rate_out


def _render(components, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for comp in components:
        kind = comp["kind"]
        env = np.clip((t - comp["start"]) / comp["rise"], 0.0, 1.0)
        env *= np.clip((comp["stop"] - t) / comp["rise"], 0.0, 1.0)
        if kind == "chirp":
            phase = 2 * np.pi * (comp["f0"] * t + 0.5 * comp["slope"] * t * t)
            out += comp["amp"] * env * np.sin(phase + comp["phi"])
        elif kind == "am":
            mod = 1.0 + comp["depth"] * np.sin(2 * np.pi * comp["fm"] * t + comp["phi_m"])
            out += comp["amp"] * env * mod * np.sin(2 * np.pi * comp["fc"] * t + comp["phi"])
        else:  # band-limited noise as a dense sinusoid sum (renderable at any rate)
            for f, phi in zip(comp["freqs"], comp["phis"]):
                out += comp["amp"] * env * np.sin(2 * np.pi * f * t + phi)
    return out


def _draw_components(rng: np.random.Generator, duration: float) -> list[dict]:
    comps = []
    for _ in range(rng.integers(2, 4)):
        f0 = rng.uniform(120.0, 2500.0)
        comps.append(dict(kind="chirp", f0=f0, slope=rng.uniform(-800.0, 1500.0),
                          amp=rng.uniform(0.3, 1.0), phi=rng.uniform(0, 2 * np.pi),
                          start=rng.uniform(0, 0.4) * duration,
                          stop=rng.uniform(0.6, 1.0) * duration,
                          rise=rng.uniform(0.02, 0.1) * duration))
    for _ in range(rng.integers(1, 3)):
        comps.append(dict(kind="am", fc=rng.uniform(200.0, 3000.0),
                          fm=rng.uniform(2.0, 16.0), depth=rng.uniform(0.3, 0.9),
                          amp=rng.uniform(0.2, 0.7), phi=rng.uniform(0, 2 * np.pi),
                          phi_m=rng.uniform(0, 2 * np.pi),
                          start=0.0, stop=duration, rise=0.05 * duration))
    for _ in range(rng.integers(1, 3)):
        lo = rng.uniform(400.0, 4000.0)
        n = 24
        comps.append(dict(kind="noise",
                          freqs=rng.uniform(lo, lo + rng.uniform(200.0, 1500.0), size=n),
                          phis=rng.uniform(0, 2 * np.pi, size=n),
                          amp=rng.uniform(0.05, 0.25) / math.sqrt(n),
                          start=rng.uniform(0, 0.5) * duration,
                          stop=rng.uniform(0.5, 1.0) * duration,
                          rise=rng.uniform(0.02, 0.08) * duration))
    return comps


def make_synthetic_dataset(seed: int, n_items: int, duration_s: float,
                           cfg: CodecConfig) -> list[SignalItem]:
    """Deterministic bank of chirp/AM/noise mixtures, rendered at both the
    codec input rate and the decoder output rate from the same parameters."""
    rng = np.random.default_rng(seed)
    n_in = int(round(duration_s * cfg.sample_rate_in))
    n_out = int(round(duration_s * cfg.sample_rate_out))
    if n_in < cfg.samples_per_frame:
        raise ValueError("duration must cover at least one frame")
    t_in = np.arange(n_in, dtype=np.float64) / cfg.sample_rate_in
    t_out = np.arange(n_out, dtype=np.float64) / cfg.sample_rate_out
    items = []
    for _ in range(n_items):
        comps = _draw_components(rng, duration_s)
        w_in = _render(comps, t_in)
        w_out = _render(comps, t_out)
        peak = max(np.abs(w_in).max(), 1e-9)
        scale = 0.7 / peak
        items.append(SignalItem((w_in * scale).astype(DTYPE), (w_out * scale).astype(DTYPE)))
    return items


# ---------------------------------------------------------------------------
# teacher
# ---------------------------------------------------------------------------


class Teacher(Module):
    """Frozen full-context encoder twin used as the distillation target."""

    def __init__(self, cfg: CodecConfig, seed: int):
        rng = np.random.default_rng(seed)
        self.encoder = EncoderStack(cfg, rng, centered=True)
        self.encoder.set_trainable(False)

    def checksum(self) -> float:
        return float(sum(np.sum(np.abs(t.data), dtype=np.float64)
                         for t in self.encoder.param_tensors()))


def copy_encoder_weights(teacher: Teacher, student: CodecModel) -> None:
    """Initialize the student encoder from the teacher (the causal conversion
    starting point), except the positional embedding, which stage 1 learns
    from scratch."""
    src = dict(teacher.encoder.named_params())
    for name, t in student.encoder.named_params():
        if name.startswith("posemb."):
            continue
        t.data = src[name].data.copy()


def param_checksum(module: Module) -> float:
    return float(sum(np.sum(np.abs(t.data), dtype=np.float64)
                     for t in module.param_tensors()))


# ---------------------------------------------------------------------------
# plans and reports
# ---------------------------------------------------------------------------


def stage2_layer_weights(n_layers: int) -> tuple[float, ...]:
    """Reversed linear schedule: deepest layer 1.0, one step of 0.1 per layer up."""
    return tuple(1.0 - 0.1 * (n_layers - l) for l in range(1, n_layers + 1))


@dataclass
class StagePlan:
    stage: int
    steps: int
    lr: float
    eval_every: int = 20
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_stop: int = 9
    lr_reset: bool = False
    layer_weights: tuple[float, ...] | None = None


@dataclass
class StageReport:
    stage: int
    name: str
    loss_curve: list[float] = field(default_factory=list)
    eval_steps: list[int] = field(default_factory=list)
    eval_curve: list[float] = field(default_factory=list)
    heldout_start: float = 0.0
    heldout_end: float = 0.0
    per_layer: dict[str, float] = field(default_factory=dict)
    skipped: bool = False


@dataclass
class DistillReport:
    seed: int
    ablation: str  # "full" | "no_refiner" | "no_stage4"
    stages: list[StageReport] = field(default_factory=list)
    final_heldout_l2: float = float("nan")
    code_usage_pct: float = float("nan")

    def stage_named(self, stage: int, name: str) -> StageReport:
        for s in self.stages:
            if s.stage == stage and s.name == name:
                return s
        raise KeyError(f"no stage {stage}/{name} in report")


class _Plateau:
    """Halve the lr after `patience` evals without improvement; stop after
    `stop` of them. Optionally reset the lr once instead of stopping."""

    def __init__(self, plan: StagePlan):
        self.plan = plan
        self.lr = plan.lr
        self.best = float("inf")
        self.bad = 0
        self.resets_left = 1 if plan.lr_reset else 0

    def on_eval(self, value: float) -> bool:
        """Returns True when training should stop."""
        if value < self.best - 1e-12:
            self.best = value
            self.bad = 0
            return False
        self.bad += 1
        if self.bad % self.plan.plateau_patience == 0:
            self.lr *= self.plan.plateau_factor
        if self.bad >= self.plan.plateau_stop:
            if self.resets_left:
                self.resets_left -= 1
                self.lr = self.plan.lr
                self.bad = 0
                return False
            return True
        return False


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class DistillSettings:
    """Desk-scale training knobs; every acceptance run uses the defaults."""

    train_items: int = 24
    heldout_items: int = 8
    item_seconds: float = 1.28
    stage1: StagePlan = field(default_factory=lambda: StagePlan(1, 600, 5e-3))
    stage2: StagePlan = field(default_factory=lambda: StagePlan(2, 300, 1e-3))
    stage3_bottleneck: StagePlan = field(default_factory=lambda: StagePlan(3, 350, 2e-3))
    stage3_decoder: StagePlan = field(default_factory=lambda: StagePlan(3, 350, 1e-3))
    stage4: StagePlan = field(default_factory=lambda: StagePlan(4, 300, 2e-4))


class DistillPipeline:
    """Owns the student, the frozen teacher, the synthetic corpora, and the
    per-item teacher caches; runs stages in order."""

    def __init__(self, cfg: CodecConfig, seed: int, settings: DistillSettings | None = None,
                 student: CodecModel | None = None):
        self.cfg = cfg
        self.seed = seed
        self.settings = settings or DistillSettings()
        self.student = student if student is not None else CodecModel(cfg, seed=seed)
        self.teacher = Teacher(cfg, seed=seed + 7919)
        if student is None:
            copy_encoder_weights(self.teacher, self.student)
        s = self.settings
        self.train_items = make_synthetic_dataset(seed + 1, s.train_items, s.item_seconds, cfg)
        self.heldout_items = make_synthetic_dataset(seed + 2, s.heldout_items, s.item_seconds, cfg)
        self._cache: dict[tuple[str, int, int], np.ndarray] = {}

    # -- cached frozen forwards ------------------------------------------------

    def _items(self, heldout: bool) -> list[SignalItem]:
        return self.heldout_items if heldout else self.train_items

    def _teacher_extract(self, idx: int, heldout: bool) -> np.ndarray:
        key = ("t_ext", idx, heldout)
        if key not in self._cache:
            item = self._items(heldout)[idx]
            with no_grad():
                self._cache[key] = self.teacher.encoder.extract(
                    Tensor(item.wave_in[None, :])).data
        return self._cache[key]

    def _teacher_posemb(self, idx: int, heldout: bool) -> np.ndarray:
        key = ("t_pe", idx, heldout)
        if key not in self._cache:
            feats = self._teacher_extract(idx, heldout)
            with no_grad():
                self._cache[key] = self.teacher.encoder.posemb_forward(Tensor(feats)).data
        return self._cache[key]

    def _teacher_layers(self, idx: int, heldout: bool) -> list[np.ndarray]:
        key = ("t_layers", idx, heldout)
        if key not in self._cache:
            item = self._items(heldout)[idx]
            with no_grad():
                outs = self.teacher.encoder.layer_outputs(Tensor(item.wave_in[None, :]))
            self._cache[key] = [o.data for o in outs]
        return self._cache[key]

    def _teacher_feats(self, idx: int, heldout: bool) -> np.ndarray:
        return self._teacher_layers(idx, heldout)[-1]

    def _student_feats_frozen(self, idx: int, heldout: bool) -> np.ndarray:
        key = ("s_feat", idx, heldout)
        if key not in self._cache:
            item = self._items(heldout)[idx]
            with no_grad():
                self._cache[key] = self.student.encode_features(
                    Tensor(item.wave_in[None, :])).data
        return self._cache[key]

    def invalidate_student_cache(self) -> None:
        self._cache = {k: v for k, v in self._cache.items() if not k[0].startswith("s_")}

    def snapshot(self) -> dict[str, np.ndarray]:
        return self.student.state_arrays()

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.student.load_arrays(snap)
        self.invalidate_student_cache()

    # -- generic training loop ---------------------------------------------------

    def _train(self, report: StageReport, plan: StagePlan, params: list[Tensor],
               loss_fn, eval_fn) -> None:
        """SGD loop with plateau lr decay and best-held-out weight restore."""
        opt = Adam(params, lr=plan.lr)
        sched = _Plateau(plan)
        order_rng = np.random.default_rng(self.seed + 31 * plan.stage + len(report.name))
        n = len(self.train_items)
        report.heldout_start = eval_fn()
        report.eval_steps.append(0)
        report.eval_curve.append(report.heldout_start)
        best = report.heldout_start
        best_arrays = [p.data.copy() for p in params]
        for step in range(plan.steps):
            idx = int(order_rng.integers(0, n))
            loss = loss_fn(idx)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(plan.stage, step)
            report.loss_curve.append(value)
            opt.zero_grad()
            loss.backward()
            opt.lr = sched.lr
            opt.step()
            if (step + 1) % plan.eval_every == 0:
                ev = eval_fn()
                report.eval_steps.append(step + 1)
                report.eval_curve.append(ev)
                if ev < best:
                    best = ev
                    best_arrays = [p.data.copy() for p in params]
                if sched.on_eval(ev):
                    break
        for p, arr in zip(params, best_arrays):
            p.data = arr
        report.heldout_end = eval_fn()

    # -- stage losses --------------------------------------------------------------

    def _posemb_l2(self, heldout: bool) -> float:
        total = 0.0
        items = self._items(heldout)
        with no_grad():
            for i in range(len(items)):
                feats = self._teacher_extract(i, heldout)
                out = self.student.encoder.posemb_forward(Tensor(feats))
                total += mse_loss(out, Tensor(self._teacher_posemb(i, heldout))).item()
        return total / len(items)

    def stage1_posemb(self, plan: StagePlan | None = None) -> StageReport:
        """Distill the causal positional-embedding conv against the teacher's."""
        plan = plan or self.settings.stage1
        report = StageReport(1, "posemb")
        enc = self.student.encoder
        params = [enc.posemb.w, enc.posemb.b]

        def loss_fn(i):
            feats = self._teacher_extract(i, heldout=False)
            out = enc.posemb_forward(Tensor(feats))
            return mse_loss(out, Tensor(self._teacher_posemb(i, heldout=False)))

        self._train(report, plan, params, loss_fn, lambda: self._posemb_l2(heldout=True))
        # stage-1 is the last time the posemb trains
        enc.posemb.w.requires_grad = False
        enc.posemb.b.requires_grad = False
        return report

    def _encoder_params(self) -> list[Tensor]:
        enc = self.student.encoder
        params = []
        for conv in enc.extractor:
            params += [conv.w, conv.b]
        params += enc.posemb_norm.param_tensors()
        for attn, ffn in zip(enc.attn_layers, enc.ffn_layers):
            params += attn.param_tensors() + ffn.param_tensors()
        return params

    def _stage2_l2(self, weights, heldout: bool) -> float:
        items = self._items(heldout)
        total = 0.0
        with no_grad():
            for i in range(len(items)):
                outs = self.student.encoder.layer_outputs(Tensor(items[i].wave_in[None, :]))
                t_outs = self._teacher_layers(i, heldout)
                total += sum(w * mse_loss(s, Tensor(t)).item()
                             for w, s, t in zip(weights, outs, t_outs))
        return total / len(items)

    def stage2_encoder(self, plan: StagePlan | None = None) -> StageReport:
        """Per-layer weighted distillation of the attention body + extractor."""
        plan = plan or self.settings.stage2
        weights = plan.layer_weights or stage2_layer_weights(self.cfg.encoder_layers)
        report = StageReport(2, "encoder")
        report.per_layer = {f"weight_layer{l+1}": w for l, w in enumerate(weights)}

        def loss_fn(i):
            outs = self.student.encoder.layer_outputs(
                Tensor(self.train_items[i].wave_in[None, :]))
            t_outs = self._teacher_layers(i, heldout=False)
            loss = None
            for w, s, t in zip(weights, outs, t_outs):
                term = mse_loss(s, Tensor(t)) * w
                loss = term if loss is None else loss + term
            return loss

        self._train(report, plan, self._encoder_params(), loss_fn,
                    lambda: self._stage2_l2(weights, heldout=True))
        self.invalidate_student_cache()
        return report

    def _bottleneck_l2(self, heldout: bool, quantized: bool = True) -> float:
        items = self._items(heldout)
        total = 0.0
        with no_grad():
            for i in range(len(items)):
                feats = self._student_feats_frozen(i, heldout)
                recon = self.student.bottleneck(Tensor(feats), quantized=quantized)
                total += mse_loss(recon, Tensor(feats)).item()
        return total / len(items)

    def _decoder_l2(self, heldout: bool) -> float:
        items = self._items(heldout)
        total = 0.0
        with no_grad():
            for i in range(len(items)):
                wav = self.student.decoder.forward(Tensor(self._teacher_feats(i, heldout)))
                total += mse_loss(wav, Tensor(items[i].wave_out[: wav.shape[0]])).item()
        return total / len(items)

    def stage3_bottleneck(self, plan: StagePlan | None = None,
                          decoder_plan: StagePlan | None = None,
                          quantized: bool = True) -> tuple[StageReport, StageReport]:
        """Train compressor/quantizer/decompressor on frozen encoder features,
        and the decoder on teacher features (waveform L2).

        ``quantized=False`` is a sanity toggle that trains the relaxed
        bottleneck (identity instead of the quantizer); its reconstruction
        loss lower-bounds the quantized run.
        """
        plan = plan or self.settings.stage3_bottleneck
        decoder_plan = decoder_plan or self.settings.stage3_decoder
        rep_b = StageReport(3, "bottleneck" if quantized else "bottleneck_relaxed")
        comp_params = self.student.compressor.param_tensors() + \
            self.student.decompressor.param_tensors()

        def loss_b(i):
            feats = self._student_feats_frozen(i, heldout=False)
            recon = self.student.bottleneck(Tensor(feats), quantized=quantized)
            return mse_loss(recon, Tensor(feats))

        self._train(rep_b, plan, comp_params, loss_b,
                    lambda: self._bottleneck_l2(True, quantized=quantized))

        rep_d = StageReport(3, "decoder")

        def loss_d(i):
            wav = self.student.decoder.forward(Tensor(self._teacher_feats(i, heldout=False)))
            target = self.train_items[i].wave_out[: wav.shape[0]]
            return mse_loss(wav, Tensor(target))

        self._train(rep_d, decoder_plan, self.student.decoder.param_tensors(), loss_d,
                    lambda: self._decoder_l2(True))
        return rep_b, rep_d

    def heldout_feature_l2(self, use_refiner: bool) -> float:
        """The Table-3-style comparable: held-out L2 between the features the
        decoder would consume and the teacher output."""
        total = 0.0
        with no_grad():
            for i, item in enumerate(self.heldout_items):
                feats = self.student.encode_features(Tensor(item.wave_in[None, :]))
                recon = self.student.bottleneck(feats, quantized=True)
                if use_refiner:
                    recon = self.student.refiner.forward(recon)
                total += mse_loss(recon, Tensor(self._teacher_feats(i, True))).item()
        return total / len(self.heldout_items)

    def stage4_joint(self, plan: StagePlan | None = None,
                     use_refiner: bool = True) -> StageReport:
        """Joint fine-tune of encoder + bottleneck (+ refiner) against the
        teacher output, through the straight-through quantizer."""
        plan = plan or self.settings.stage4
        report = StageReport(4, "joint" if use_refiner else "joint_no_refiner")
        params = self._encoder_params() + \
            self.student.compressor.param_tensors() + \
            self.student.decompressor.param_tensors()
        if use_refiner:
            params += self.student.refiner.param_tensors()

        def loss_fn(i):
            feats = self.student.encode_features(Tensor(self.train_items[i].wave_in[None, :]))
            recon = self.student.bottleneck(feats, quantized=True)
            if use_refiner:
                recon = self.student.refiner.forward(recon)
            return mse_loss(recon, Tensor(self._teacher_feats(i, heldout=False)))

        self._train(report, plan, params, loss_fn,
                    lambda: self.heldout_feature_l2(use_refiner))
        report.per_layer["bypass_refiner_l2"] = self.heldout_feature_l2(False)
        self.invalidate_student_cache()
        return report

    def heldout_code_usage(self) -> float:
        """Fraction of the codebook exercised by the held-out set, in percent."""
        toks = []
        for item in self.heldout_items:
            toks.append(encode_offline(self.student, item.wave_in).indices)
        hist = TokenHistogram.from_tokens(np.concatenate(toks), self.cfg.codebook_size)
        return code_usage(hist)

    def run(self, use_refiner: bool = True, run_stage4: bool = True) -> DistillReport:
        ablation = "full" if (use_refiner and run_stage4) else (
            "no_stage4" if not run_stage4 else "no_refiner")
        report = DistillReport(seed=self.seed, ablation=ablation)
        report.stages.append(self.stage1_posemb())
        report.stages.append(self.stage2_encoder())
        rep_b, rep_d = self.stage3_bottleneck()
        report.stages += [rep_b, rep_d]
        if run_stage4:
            report.stages.append(self.stage4_joint(use_refiner=use_refiner))
        else:
            report.stages.append(StageReport(4, "joint", skipped=True))
        report.final_heldout_l2 = self.heldout_feature_l2(use_refiner and run_stage4)
        report.code_usage_pct = self.heldout_code_usage()
        return report


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def save_report(report: DistillReport, out_dir: str) -> None:
    """Key-value summary plus one CSV per stage loss/eval curve."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [
        f"seed={report.seed}",
        f"ablation={report.ablation}",
        f"final_heldout_l2={report.final_heldout_l2!r}",
        f"code_usage_pct={report.code_usage_pct!r}",
    ]
    for s in report.stages:
        tag = f"stage{s.stage}_{s.name}"
        if s.skipped:
            lines.append(f"{tag}_skipped=true")
            continue
        lines.append(f"{tag}_heldout_start={s.heldout_start!r}")
        lines.append(f"{tag}_heldout_end={s.heldout_end!r}")
        for key, val in s.per_layer.items():
            lines.append(f"{tag}_{key}={val!r}")
        with open(os.path.join(out_dir, f"loss_{tag}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            for i, v in enumerate(s.loss_curve):
                writer.writerow([i, repr(v)])
        with open(os.path.join(out_dir, f"eval_{tag}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "heldout_l2"])
            for st, v in zip(s.eval_steps, s.eval_curve):
                writer.writerow([st, repr(v)])
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
