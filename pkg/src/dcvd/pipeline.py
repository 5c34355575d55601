"""Training, evaluation, prediction, ablation and sweeps."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import TrainConfig, save_config
from .dataset import CodeFunction
from .explain import ChatCompletionProvider, Explainer, FixtureProvider
from .features import Featurizer, Sample, build_vocab, collate, n_kinds
from .metrics import FunctionPrediction, MetricsReport, RankingRecord, build_report
from .model import DCVD
from .supervisor import LossBreakdown
from .tokenization import Vocab

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dcvd-checkpoint/1"


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def make_explainer(cfg: TrainConfig) -> Explainer:
    if cfg.provider == "live":
        provider = ChatCompletionProvider(cfg.provider_base_url, cfg.provider_model)
    else:
        provider = FixtureProvider()
    return Explainer(provider, cfg.cache_dir, cache_only=cfg.cache_only)


def lr_lambda(warmup: int, total: int, cycles: int) -> Callable[[int], float]:
    """Linear warmup, then cosine decay restarted ``cycles`` times."""
    def f(step: int) -> float:
        if step < warmup:
            return (step + 1) / (warmup + 1)
        progress = (step - warmup) / max(1, total - warmup)
        if progress >= 1:
            return 0.0
        return 0.5 * (1 + math.cos(math.pi * ((cycles * progress) % 1.0)))
    return f


def state_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class PredictionBundle:
    y_hat_f: float
    line_scores: list[float | None] | None
    line_probs: list[float | None] | None

    def ranked_lines(self) -> list[dict]:
        """Scored lines by descending score; ``line`` is 1-based for display."""
        if self.line_scores is None:
            return []
        order = RankingRecord.from_scores(self.line_scores, ()).order
        return [{"rank": r, "line": l + 1, "score": self.line_scores[l], "prob": self.line_probs[l]}
                for r, l in enumerate(order, start=1)]


@dataclass
class Checkpoint:
    state_dict: dict
    config: dict
    vocab: list[str]
    epoch: int
    val_score: float | None = None
    val_report: dict | None = None

    @property
    def cfg(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)

    def build_model(self) -> DCVD:
        cfg = self.cfg
        model = DCVD(cfg, len(self.vocab), n_kinds())
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "state_dict": self.state_dict,
            "config": self.config,
            "vocab": self.vocab,
            "epoch": self.epoch,
            "val_score": self.val_score,
            "val_report": self.val_report,
        }, path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        data = torch.load(path, map_location="cpu", weights_only=False)
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {data.get('format')!r}")
        return cls(data["state_dict"], data["config"], data["vocab"], data["epoch"],
                   data.get("val_score"), data.get("val_report"))


def predictions_from_output(batch, out, threshold: float = 0.5) -> list[FunctionPrediction]:
    probs = out.fn_prob.detach().double()
    preds = []
    for b in range(len(batch)):
        n = batch.n_lines[b]
        scores = probs_l = None
        if out.line_scores is not None:
            s = out.line_scores[b, :n].detach().double()
            mask = out.line_scored[b, :n]
            scores = [float(v) if m else None for v, m in zip(s.tolist(), mask.tolist())]
            probs_l = [1.0 / (1.0 + math.exp(-v)) if v is not None else None for v in scores]
        preds.append(FunctionPrediction(batch.ids[b], int(batch.y[b].item()), float(probs[b]),
                                        batch.flaw_lines[b], scores, probs_l, n))
    return preds


def run_model(model: DCVD, samples: Sequence[Sample], batch_size: int = 32) -> list[FunctionPrediction]:
    model.eval()
    out: list[FunctionPrediction] = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            batch = collate(samples[i:i + batch_size])
            out.extend(predictions_from_output(batch, model(batch)))
    return out


class Trainer:
    """Owns the vocabulary, featurizer, model and optimizer for one training run."""

    def __init__(self, cfg: TrainConfig, train_fns: Sequence[CodeFunction],
                 explainer: Explainer | None = None, dtype: torch.dtype = torch.float32):
        self.cfg = cfg
        seed_everything(cfg.seed)
        self.explainer = explainer if explainer is not None else make_explainer(cfg)
        use_structure = cfg.variant != "wo_structure"
        use_semantic = cfg.variant != "wo_semantic"
        explanations = None
        if use_semantic:
            records = self.explainer.explain_many((fn.id, fn.source) for fn in train_fns)
            explanations = {k: r.text for k, r in records.items()}
        self.vocab = build_vocab(train_fns, explanations, cfg.vocab_min_freq, cfg.vocab_max_size)
        self.featurizer = Featurizer(self.vocab, cfg.max_seq, self.explainer, use_structure, use_semantic)
        self.train_samples = self.featurizer.featurize(train_fns, cfg.skip_unparseable)
        if not self.train_samples:
            raise ValueError("no trainable samples")

        self.model = DCVD(cfg, len(self.vocab), n_kinds()).to(dtype)
        params = [p for name, p in self.model.named_parameters()
                  if not (cfg.alpha == 1.0 and name.startswith("statement_head."))]
        self.optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        steps_per_epoch = math.ceil(len(self.train_samples) / cfg.batch_size)
        total = steps_per_epoch * cfg.epochs
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lr_lambda(cfg.warmup_steps, total, cfg.lr_cycles))
        self.generator = torch.Generator().manual_seed(cfg.seed)
        self.epoch = 0
        self.history: list[dict] = []

    def featurize(self, fns: Sequence[CodeFunction]) -> list[Sample]:
        return self.featurizer.featurize(fns, self.cfg.skip_unparseable)

    def train_epoch(self) -> list[LossBreakdown]:
        self.model.train()
        order = torch.randperm(len(self.train_samples), generator=self.generator).tolist()
        losses = []
        bs = self.cfg.batch_size
        for i in range(0, len(order), bs):
            batch = collate([self.train_samples[j] for j in order[i:i + bs]])
            out = self.model(batch)
            loss, breakdown = self.model.loss(out, batch)
            self.optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if self.cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
            self.optimizer.step()
            self.scheduler.step()
            losses.append(breakdown)
        self.epoch += 1
        return losses

    def predict(self, samples: Sequence[Sample]) -> list[FunctionPrediction]:
        return run_model(self.model, samples, self.cfg.batch_size)

    def evaluate(self, samples: Sequence[Sample]) -> tuple[MetricsReport, list[FunctionPrediction]]:
        preds = self.predict(samples)
        report = build_report(preds, self.cfg.threshold, statement=self.model.uses_statement)
        report.header = {"variant": self.cfg.variant, "seed": self.cfg.seed, "overrides": dict(self.cfg.overrides)}
        return report, preds

    def checkpoint(self, report: MetricsReport | None = None) -> Checkpoint:
        return Checkpoint(copy.deepcopy(self.model.state_dict()), self.cfg.to_dict(), self.vocab.to_list(),
                          self.epoch, None if report is None else report.selection_score(),
                          None if report is None else report.to_dict())

    def fit(self, valid_fns: Sequence[CodeFunction] | None = None,
            until: Callable[["Trainer"], bool] | None = None) -> Checkpoint:
        """Train for ``cfg.epochs`` keeping the checkpoint with the best validation score.

        ``until`` is called after every epoch; returning True stops early.
        """
        valid = self.featurize(valid_fns) if valid_fns else None
        best: Checkpoint | None = None
        for _ in range(self.cfg.epochs):
            t0 = time.perf_counter()
            losses = self.train_epoch()
            entry = {"epoch": self.epoch, "loss": float(np.mean([l.total for l in losses])),
                     "seconds": time.perf_counter() - t0}
            if valid:
                report, _ = self.evaluate(valid)
                entry["val_score"] = report.selection_score()
                if best is None or report.selection_score() > best.val_score:
                    best = self.checkpoint(report)
            self.history.append(entry)
            logger.info("epoch %d: %s", self.epoch, entry)
            if until is not None and until(self):
                break
        return best if best is not None else self.checkpoint()


def train(cfg: TrainConfig, train_fns: Sequence[CodeFunction], valid_fns: Sequence[CodeFunction] | None = None,
          explainer: Explainer | None = None, run_dir: str | Path | None = None) -> Checkpoint:
    trainer = Trainer(cfg, train_fns, explainer)
    ckpt = trainer.fit(valid_fns)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        ckpt.save(run_dir / "checkpoint.pt")
        save_config(cfg, run_dir / "config.yaml")
        (run_dir / "history.json").write_text(json.dumps(trainer.history, indent=2))
    return ckpt


def _checkpoint_featurizer(ckpt: Checkpoint, explainer: Explainer | None):
    cfg = ckpt.cfg
    if explainer is None and cfg.variant != "wo_semantic":
        explainer = make_explainer(cfg)
    return Featurizer(Vocab.from_list(ckpt.vocab), cfg.max_seq, explainer,
                      cfg.variant != "wo_structure", cfg.variant != "wo_semantic")


def evaluate(ckpt: Checkpoint, fns: Sequence[CodeFunction], explainer: Explainer | None = None,
             predictions_path: str | Path | None = None) -> MetricsReport:
    cfg = ckpt.cfg
    model = ckpt.build_model()
    samples = _checkpoint_featurizer(ckpt, explainer).featurize(fns, cfg.skip_unparseable)
    if not samples:
        raise ValueError("no samples to evaluate")
    preds = run_model(model, samples, cfg.batch_size)
    if predictions_path is not None:
        with Path(predictions_path).open("w") as fh:
            for p in preds:
                fh.write(json.dumps(p.to_dict()) + "\n")
    report = build_report(preds, cfg.threshold, statement=model.uses_statement)
    report.header = {"variant": cfg.variant, "seed": cfg.seed, "epoch": ckpt.epoch,
                     "overrides": dict(cfg.overrides)}
    return report


def predict(ckpt: Checkpoint, source: str, explainer: Explainer | None = None,
            function_id: str = "input") -> PredictionBundle:
    fn = CodeFunction(function_id, source, 0)
    model = ckpt.build_model()
    sample = _checkpoint_featurizer(ckpt, explainer)(fn)
    pred = run_model(model, [sample])[0]
    return PredictionBundle(pred.y_prob, pred.line_scores, pred.line_probs)


ABLATIONS = ("wo_structure", "wo_semantic", "wo_fusion", "wo_multitask")


@dataclass
class AblationResult:
    variant: str
    report: MetricsReport
    trainer: Trainer = field(repr=False)


def ablate(variant: str, cfg: TrainConfig, train_fns, valid_fns, test_fns,
           explainer: Explainer | None = None) -> AblationResult:
    if variant not in ABLATIONS and variant != "full":
        raise ValueError(f"unknown ablation variant {variant!r}; expected one of {ABLATIONS}")
    cfg = cfg.replace(variant=variant)
    trainer = Trainer(cfg, train_fns, explainer)
    best = trainer.fit(valid_fns)
    trainer.model.load_state_dict(best.state_dict)
    report, _ = trainer.evaluate(trainer.featurize(test_fns))
    return AblationResult(variant, report, trainer)


SWEEPABLE = ("alpha", "d_model", "d_k")


def sweep(param: str, values: Sequence, cfg: TrainConfig, train_fns, valid_fns, test_fns,
          explainer: Explainer | None = None) -> list[dict]:
    """Train and test one model per value; rows hold the value, composite Score and all metrics."""
    if param not in SWEEPABLE:
        raise ValueError(f"cannot sweep {param!r}; choose from {SWEEPABLE}")
    rows = []
    for v in values:
        result = ablate("full", cfg.with_overrides({param: v}), train_fns, valid_fns, test_fns, explainer)
        rows.append({param: v, "score": result.report.score, **result.report.csv_row()})
    return rows
