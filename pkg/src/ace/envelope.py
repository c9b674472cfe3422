"""Convex piecewise-linear lower envelopes built from supporting hyperplanes."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EmptyEnvelope(ValueError):
    pass


class MalformedEnvelopeFile(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Hyperplane:
    """``value + grad @ (x - base)``, a minorant touching the function at ``base``."""

    base: np.ndarray
    value: float
    grad: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.atleast_1d(np.asarray(self.base, dtype=float)))
        object.__setattr__(self, "grad", np.atleast_1d(np.asarray(self.grad, dtype=float)))
        object.__setattr__(self, "value", float(self.value))
        if not (np.all(np.isfinite(self.base)) and np.all(np.isfinite(self.grad)) and np.isfinite(self.value)):
            raise ValueError("hyperplane data must be finite")
        if self.base.shape != self.grad.shape:
            raise ValueError("base and grad must have the same length")

    def __call__(self, x):
        return self.value + self.grad @ (np.asarray(x, dtype=float) - self.base)


class Envelope:
    """Pointwise maximum of hyperplanes approximating the stage-``t`` cost-to-go.

    Planes are kept in insertion order and never pruned.
    """

    def __init__(self, t: int, p: int, planes=()):
        self.t = int(t)
        self.p = int(p)
        self._bases = np.zeros((0, self.p))
        self._values = np.zeros(0)
        self._grads = np.zeros((0, self.p))
        for h in planes:
            self.add_plane(h)

    def __len__(self):
        return self._values.size

    def __repr__(self):
        return f"Envelope(t={self.t}, p={self.p}, planes={len(self)})"

    @property
    def bases(self):
        return self._bases

    @property
    def values(self):
        return self._values

    @property
    def grads(self):
        return self._grads

    @property
    def intercepts(self):
        """``value - grad @ base`` for every plane."""
        return self._values - np.einsum("ij,ij->i", self._grads, self._bases)

    @property
    def planes(self):
        return [Hyperplane(b, v, g) for b, v, g in zip(self._bases, self._values, self._grads)]

    def add_plane(self, h: Hyperplane) -> "Envelope":
        if h.base.size != self.p or h.grad.size != self.p:
            raise ValueError(f"plane of dimension {h.base.size} added to envelope of dimension {self.p}")
        self._bases = np.vstack([self._bases, h.base])
        self._values = np.append(self._values, h.value)
        self._grads = np.vstack([self._grads, h.grad])
        return self

    def has_plane(self, h: Hyperplane, rtol: float = 1e-9) -> bool:
        """True when an existing plane has the same gradient and intercept as ``h``."""
        if not len(self):
            return False
        c = h.value - h.grad @ h.base
        dg = np.max(np.abs(self._grads - h.grad), axis=1) <= rtol * (1.0 + np.max(np.abs(h.grad)))
        dc = np.abs(self.intercepts - c) <= rtol * (1.0 + abs(c))
        return bool(np.any(dg & dc))

    def copy(self) -> "Envelope":
        env = Envelope(self.t, self.p)
        env._bases = self._bases.copy()
        env._values = self._values.copy()
        env._grads = self._grads.copy()
        return env

    def eval(self, x) -> float:
        """``max_j value_j + grad_j @ (x - base_j)``."""
        if not len(self):
            raise EmptyEnvelope(f"envelope for stage {self.t} has no planes")
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.p:
            raise ValueError(f"expected a state of length {self.p}, got {x.size}")
        return float(np.max(self._values + np.einsum("ij,ij->i", self._grads, x - self._bases)))

    def eval_many(self, X) -> np.ndarray:
        """Vectorized :meth:`eval` over the rows of ``X``."""
        if not len(self):
            raise EmptyEnvelope(f"envelope for stage {self.t} has no planes")
        X = np.asarray(X, dtype=float).reshape(-1, self.p)
        out = np.full(X.shape[0], -np.inf)
        for b, v, g in zip(self._bases, self._values, self._grads):
            np.maximum(out, v + (X - b) @ g, out=out)
        return out

    def active_plane(self, x) -> int:
        x = np.asarray(x, dtype=float).reshape(-1)
        return int(np.argmax(self._values + np.einsum("ij,ij->i", self._grads, x - self._bases)))

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "p": self.p,
            "planes": [
                {"x": b.tolist(), "value": float(v), "grad": g.tolist()}
                for b, v, g in zip(self._bases, self._values, self._grads)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Envelope":
        try:
            env = cls(int(doc["t"]), int(doc["p"]))
            for pl in doc["planes"]:
                base, grad = pl["x"], pl["grad"]
                if len(base) != env.p or len(grad) != env.p:
                    raise MalformedEnvelopeFile(f"plane dimension does not match p={env.p}")
                env.add_plane(Hyperplane(base, pl["value"], grad))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MalformedEnvelopeFile):
                raise
            raise MalformedEnvelopeFile(str(exc)) from exc
        return env

    def save(self, path) -> Path:
        """Write one JSON line. Python float repr round-trips doubles exactly."""
        path = Path(path)
        atomic_write_text(path, json.dumps(self.to_dict()) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "Envelope":
        text = Path(path).read_text()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) != 1:
            raise MalformedEnvelopeFile(f"{path}: expected exactly one JSON line, found {len(lines)}")
        try:
            doc = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise MalformedEnvelopeFile(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def eval_envelope(env: Envelope, x) -> float:
    return env.eval(x)


def envelope_path(directory, t) -> Path:
    return Path(directory) / f"J_{t}.jsonl"


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def terminal_envelope(h) -> Envelope:
    """``J_T`` as an envelope: the zero function or the model's explicit planes."""
    p = h.terminal_dim
    env = Envelope(h.T, p)
    if h.terminal == "zero":
        env.add_plane(Hyperplane(np.zeros(p), 0.0, np.zeros(p)))
    else:
        for base, value, grad in h.terminal:
            env.add_plane(Hyperplane(base, value, grad))
    return env
