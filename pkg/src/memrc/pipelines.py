"""End-to-end experiments: dataset -> reservoir -> readout -> scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import ConfusionMatrix, accuracy, confusion_matrix, nmse
from .readout import (
    ConvFcArch,
    FcArch,
    LinearReadout,
    TrainConfig,
    classify,
    predict_linear,
    train_convfc,
    train_fc,
    train_linear,
)
from .reservoir import FeatureTensor, ReservoirConfig, normalize_tensor, run_neural, run_sonds
from .tasks import CLASSES, EncodingParams, gen_neural_dataset, gen_sonds


@dataclass
class SondsResult:
    model: LinearReadout
    y_train: np.ndarray
    pred_train: np.ndarray
    y_test: np.ndarray
    pred_test: np.ndarray

    @property
    def nmse_train(self) -> float:
        return nmse(self.pred_train, self.y_train, "power")

    @property
    def nmse_test(self) -> float:
        return nmse(self.pred_test, self.y_test, "power")

    def summary(self) -> dict:
        return {
            "nmse_train": {"power": self.nmse_train, "variance": nmse(self.pred_train, self.y_train, "variance")},
            "nmse_test": {"power": self.nmse_test, "variance": nmse(self.pred_test, self.y_test, "variance")},
            "n_params": self.model.n_params,
            "ridge_fallback": self.model.ridge_used,
        }


def sonds_experiment(config: ReservoirConfig, enc: EncodingParams = EncodingParams(), seed: int = 0,
                     washout: int = 50, n_train: int = 300, n_test: int = 300) -> SondsResult:
    """Train and test sequences are driven separately, each from rest."""
    train, test = gen_sonds(n_train, n_test, seed)
    x_tr, y_tr = run_sonds(config, train, enc, washout, stream=0)
    x_te, y_te = run_sonds(config, test, enc, washout, stream=1)
    model = train_linear(x_tr, y_tr)
    return SondsResult(model, y_tr, predict_linear(model, x_tr), y_te, predict_linear(model, x_te))


@dataclass
class NeuroFeatures:
    train: FeatureTensor
    test: FeatureTensor
    norm: str
    stats: object = None


def neuro_features(config: ReservoirConfig, seed: int = 0, per_class: int = 400, n_train_per_class: int = 320,
                   scale: float = 1.8, nodes: int = 20, norm: str = "log-zscore",
                   sample_rate: float = 1e4) -> NeuroFeatures:
    """Simulate the standard split and normalize with training-set statistics."""
    train_p, test_p = gen_neural_dataset(per_class, seed, n_train_per_class)
    ftr = run_neural(config, train_p, scale, nodes_per_pattern=nodes, sample_rate=sample_rate, stream=0)
    fte = run_neural(config, test_p, scale, nodes_per_pattern=nodes, sample_rate=sample_rate, stream=1)
    ntr, stats = normalize_tensor(ftr, norm)
    nte, _ = normalize_tensor(fte, norm, stats)
    return NeuroFeatures(ntr, nte, norm, stats)


@dataclass
class NeuroResult:
    arch: str
    model: object
    losses: np.ndarray
    test_accuracy: float
    train_accuracy: float
    confusion: ConfusionMatrix
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"readout": self.arch, "n_params": self.model.n_params, "test_accuracy": self.test_accuracy,
                "train_accuracy": self.train_accuracy, "per_class_recall": self.confusion.per_class_recall().tolist(),
                "confusion": self.confusion.to_dict(), "epochs_run": int(len(self.losses)),
                "final_loss": self.model.meta.get("final_loss"), **self.extra}


def evaluate_classifier(model, features, labels, classes=CLASSES) -> tuple[float, ConfusionMatrix]:
    pred = classify(model, features)
    cm = confusion_matrix(labels, pred, classes)
    return accuracy(labels, pred), cm


def neuro_readout(feats: NeuroFeatures, arch: str = "convfc", f: int = 9,
                  cfg: TrainConfig = TrainConfig()) -> NeuroResult:
    tr, te = feats.train, feats.test
    if arch == "fc":
        model, losses = train_fc(tr.values, tr.labels, cfg)
        assert model.n_params == FcArch(tr.values[0].size).n_params
    elif arch == "convfc":
        m, n = tr.values.shape[1:]
        model, losses = train_convfc(tr.values, tr.labels, (m, f), cfg)
        assert model.n_params == ConvFcArch(m, n, f).n_params
    else:
        raise ValueError(f"unknown readout {arch!r}; expected 'fc' or 'convfc'")
    acc, cm = evaluate_classifier(model, te.values, te.labels)
    train_acc = accuracy(tr.labels, classify(model, tr.values))
    return NeuroResult(arch, model, losses, acc, train_acc, cm)
