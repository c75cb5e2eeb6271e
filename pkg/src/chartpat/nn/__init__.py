"""Small numpy neural-network core: layers, sequential models, losses, optimizers."""

from .layers import (LSTM, Conv1D, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, Sigmoid,
                     Tanh, lstm_step, layer_from_spec)
from .model import (ModelState, backward, build_model, forward, load_model, model_from_json,
                    model_to_json, predict_proba, save_model, shape_trace)
from .optim import SGD, Adam, OptState, bce_batch, bce_loss, make_optimizer, optimizer_step
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "LSTM", "Conv1D", "Conv2D", "Dense", "Dropout", "Flatten", "Layer", "MaxPool2D", "ReLU", "Sigmoid",
    "Tanh", "lstm_step", "layer_from_spec", "ModelState", "backward", "build_model", "forward",
    "load_model", "model_from_json", "model_to_json", "predict_proba", "save_model", "shape_trace",
    "SGD", "Adam", "OptState", "bce_batch", "bce_loss", "make_optimizer", "optimizer_step",
    "GradCheckReport", "grad_check",
]
