"""Bidirectional LSTM detector for malicious consumption windows."""
from .model import (GATES, BiLstmModel, DetectorConfig, LstmCellParams, bce, flag_series, forward,
                    load_model, loss_and_gradients, lstm_step, predict_proba, save_model, sigmoid)
from .train import (ConfusionMatrix, TrainLog, evaluate, fit, format_metric, predict, split_meters, train,
                    write_metrics)

__all__ = [
    "GATES", "BiLstmModel", "ConfusionMatrix", "DetectorConfig", "LstmCellParams", "TrainLog", "bce",
    "evaluate", "fit", "flag_series", "format_metric", "forward", "load_model", "loss_and_gradients",
    "lstm_step", "predict", "predict_proba", "save_model", "sigmoid", "split_meters", "train",
    "write_metrics",
]
