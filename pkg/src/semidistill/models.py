"""Teacher/student embedding models: MLP feature extractor plus classifier heads.

A model is a plain value holding parameter tensors. The optional
auxiliary head mirrors the teacher's main classifier width and is used
only as a training-time target surface; retrieval uses the
L2-normalized extractor output.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExtractorConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    embed_dim: int
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if not self.hidden_dims:
            raise ConfigError("hidden_dims must be non-empty")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must all be positive")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be at least 2")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")


@dataclass
class Model:
    config: ExtractorConfig
    layers: list[tuple[Tensor, Tensor]]        # (weight, bias) per extractor layer
    main_w: Tensor
    main_b: Tensor
    aux_w: Optional[Tensor] = None
    aux_b: Optional[Tensor] = None
    frozen: bool = False

    @property
    def k_main(self) -> int:
        return self.main_w.shape[1]

    @property
    def k_aux(self) -> Optional[int]:
        return None if self.aux_w is None else self.aux_w.shape[1]

    @property
    def has_aux(self) -> bool:
        return self.aux_w is not None

    def parameters(self) -> list[Tensor]:
        params = [t for pair in self.layers for t in pair]
        params += [self.main_w, self.main_b]
        if self.aux_w is not None:
            params += [self.aux_w, self.aux_b]
        return params

    def extractor_parameters(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]


def param_count(model: Model) -> int:
    return sum(p.size for p in model.parameters())


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


def build_model(cfg: ExtractorConfig, k_main: int, k_aux: Optional[int] = None,
                seed: Optional[int] = None) -> Model:
    """Build an extractor + classifier model with seeded scaled-uniform init.

    ``seed`` overrides ``cfg.seed``; the same config and seed always
    yield bitwise-identical parameters. The auxiliary head is present
    iff ``k_aux`` is given and must match the teacher's main width.
    """
    if k_main < 2:
        raise ConfigError("k_main must be at least 2")
    if k_aux is not None and k_aux < 2:
        raise ConfigError("k_aux must be at least 2 when present")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dims = [cfg.input_dim, *cfg.hidden_dims, cfg.embed_dim]
    layers = [_init_layer(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    main_w, main_b = _init_layer(rng, cfg.embed_dim, k_main)
    aux_w = aux_b = None
    if k_aux is not None:
        aux_w, aux_b = _init_layer(rng, cfg.embed_dim, k_aux)
    return Model(config=cfg, layers=layers, main_w=main_w, main_b=main_b,
                 aux_w=aux_w, aux_b=aux_b)


def forward(model: Model, x: Tensor) -> tuple[Tensor, Tensor, Optional[Tensor]]:
    """Run a batch through the model.

    Returns ``(embedding, logits_main, logits_aux)`` where the aux
    logits are None when the model has no auxiliary head. Hidden layers
    are relu-activated; the embedding projection and both heads are
    affine.
    """
    x = ad.as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != model.config.input_dim:
        raise ShapeError(
            f"expected input of shape (B, {model.config.input_dim}), got {x.data.shape}")
    h = x
    for i, (w, b) in enumerate(model.layers):
        h = ad.add(ad.matmul(h, w), b)
        if i < len(model.layers) - 1:
            h = ad.relu(h)
    embedding = h
    logits_main = ad.add(ad.matmul(embedding, model.main_w), model.main_b)
    logits_aux = None
    if model.aux_w is not None:
        logits_aux = ad.add(ad.matmul(embedding, model.aux_w), model.aux_b)
    return embedding, logits_main, logits_aux


def freeze(model: Model) -> Model:
    """Mark the model frozen: no parameter receives gradients or updates."""
    model.frozen = True
    for p in model.parameters():
        p.requires_grad = False
        p.grad = None
    return model


def l2_normalize(rows: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Normalize each row to unit Euclidean norm; zero rows are an error."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise NumericError("cannot L2-normalize a zero vector")
    return rows / norms


def embed(model: Model, features: np.ndarray) -> np.ndarray:
    """Inference-time retrieval features: L2-normalized extractor output."""
    emb, _, _ = forward(model, Tensor(np.atleast_2d(features)))
    return l2_normalize(emb.data)


def save_checkpoint(model: Model, path: str) -> None:
    """Write a versioned JSON parameter dump that round-trips bitwise."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": {
            "input_dim": model.config.input_dim,
            "hidden_dims": list(model.config.hidden_dims),
            "embed_dim": model.config.embed_dim,
            "activation": model.config.activation,
            "seed": model.config.seed,
        },
        "k_main": model.k_main,
        "k_aux": model.k_aux,
        "frozen": model.frozen,
        "params": {
            "layers": [[w.data.tolist(), b.data.tolist()] for w, b in model.layers],
            "main": [model.main_w.data.tolist(), model.main_b.data.tolist()],
            "aux": (None if model.aux_w is None
                    else [model.aux_w.data.tolist(), model.aux_b.data.tolist()]),
        },
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    c = doc["config"]
    cfg = ExtractorConfig(input_dim=c["input_dim"], hidden_dims=tuple(c["hidden_dims"]),
                          embed_dim=c["embed_dim"], activation=c["activation"], seed=c["seed"])
    grad = not doc["frozen"]
    layers = [(Tensor(w, requires_grad=grad), Tensor(b, requires_grad=grad))
              for w, b in doc["params"]["layers"]]
    main_w = Tensor(doc["params"]["main"][0], requires_grad=grad)
    main_b = Tensor(doc["params"]["main"][1], requires_grad=grad)
    aux_w = aux_b = None
    if doc["params"]["aux"] is not None:
        aux_w = Tensor(doc["params"]["aux"][0], requires_grad=grad)
        aux_b = Tensor(doc["params"]["aux"][1], requires_grad=grad)
    return Model(config=cfg, layers=layers, main_w=main_w, main_b=main_b,
                 aux_w=aux_w, aux_b=aux_b, frozen=doc["frozen"])


def snapshot(model: Model) -> list[np.ndarray]:
    """Copies of all parameter arrays, for bitwise change detection."""
    return [p.data.copy() for p in model.parameters()]


def params_equal(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
