"""Parameters, layers, the point-set encoder, cVAE heads, Adam, checkpoints."""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from . import autodiff as A
from .autodiff import Tensor
from .errors import CorruptManifest, MissingCheckpoint, NonFiniteGradient, NonFiniteLoss

MAGIC = b"BPMC"
HEADER = struct.Struct("<4sIII")
ARRAY_VERSION = 1
IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class ParamSet:
    """Named trainable arrays. Iteration order is the sorted name order."""

    def __init__(self):
        self.params = {}

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        self.params[name] = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return sorted(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        return {n: (np.zeros_like(p.data) if p.grad is None else p.grad) for n, p in self.params.items()}

    def arrays(self):
        return {n: self.params[n].data for n in self.names()}

    def load_arrays(self, arrays):
        for n, v in arrays.items():
            if n not in self.params:
                raise KeyError(f"unknown parameter {n}")
            if self.params[n].data.shape != v.shape:
                raise ValueError(f"shape mismatch for {n}")
            self.params[n].data = np.array(v, dtype=np.float64)

    def checksum(self):
        h = hashlib.sha256()
        for n in self.names():
            h.update(n.encode())
            h.update(self.params[n].data.tobytes())
        return h.hexdigest()

    def count(self):
        return int(sum(p.data.size for p in self.params.values()))


# ---------------------------------------------------------------- layers

def init_linear(ps, name, n_in, n_out, rng, zero=False):
    scale = 0.0 if zero else np.sqrt(2.0 / n_in)
    ps.add(f"{name}.W", rng.standard_normal((n_in, n_out)) * scale)
    ps.add(f"{name}.b", np.zeros(n_out))


def linear(ps, name, x):
    return A.add(A.matmul(x, ps[f"{name}.W"]), ps[f"{name}.b"])


def init_mlp(ps, name, sizes, rng, zero_last=False):
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        init_linear(ps, f"{name}.{i}", sizes[i], sizes[i + 1], rng, zero=zero_last and last)


def mlp(ps, name, x, n_layers, final_act=None):
    """ReLU between layers; ``final_act`` (callable or None) after the last."""
    for i in range(n_layers):
        x = linear(ps, f"{name}.{i}", x)
        if i < n_layers - 1:
            x = A.relu(x)
    return final_act(x) if final_act is not None else x


class PointSetEncoder:
    """Shared per-point MLP followed by a coordinate-wise max pool.

    ``encode`` returns (per-point features f_p [.., N, 2H], global feature f_O [.., H]).
    """

    def __init__(self, ps, rng, hidden=64, out=128, name="enc"):
        self.ps, self.name, self.out = ps, name, out
        init_mlp(ps, name, [3, hidden, out], rng)

    def point_features(self, points):
        return A.relu(mlp(self.ps, self.name, A.as_tensor(points), 2))

    def encode(self, points):
        h = self.point_features(points)
        g = A.tmax(h, axis=-2)
        n = h.shape[-2]
        gb = A.broadcast_to(A.reshape(g, g.shape[:-1] + (1, g.shape[-1])), h.shape[:-2] + (n, g.shape[-1]))
        return A.concat([h, gb], axis=-1), g


class TaskEmbedding:
    def __init__(self, ps, rng, n_tasks=3, dim=32, name="task"):
        self.ps, self.name = ps, name
        ps.add(f"{name}.table", rng.standard_normal((n_tasks, dim)) * 0.1)

    def __call__(self, task_ids):
        return A.getitem(self.ps[f"{self.name}.table"], np.asarray(task_ids, dtype=np.int64))


def kl_divergence(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis, averaged over rows."""
    mu, logvar = A.as_tensor(mu), A.as_tensor(logvar)
    per = A.mul(A.sub(A.add(A.mul(mu, mu), A.exp(logvar)), A.add(logvar, 1.0)), 0.5)
    total = A.tsum(per, axis=-1)
    return A.mean(total) if total.ndim else total


def reparam_sample(mu, logvar, noise):
    """z = mu + sigma * noise with sigma = exp(logvar / 2)."""
    mu, logvar = A.as_tensor(mu), A.as_tensor(logvar)
    return A.add(mu, A.mul(A.exp(A.mul(logvar, 0.5)), np.asarray(noise, dtype=np.float64)))


class CvaeHead:
    """Conditional VAE over a fixed-size target vector.

    The decoder's last layer starts at zero and its output is added to
    ``offset``, so an untrained head emits the offset (identity motion).
    """

    def __init__(self, ps, rng, name, target_dim, cond_dim, latent=8, hidden=128, offset=None):
        self.ps, self.name, self.latent = ps, name, latent
        self.target_dim, self.cond_dim = target_dim, cond_dim
        self.offset = np.zeros(target_dim) if offset is None else np.asarray(offset, dtype=np.float64)
        init_mlp(ps, f"{name}.q", [target_dim + cond_dim, hidden, 2 * latent], rng)
        init_mlp(ps, f"{name}.p", [latent + cond_dim, hidden, hidden, target_dim], rng, zero_last=True)

    def posterior(self, target, cond):
        h = mlp(self.ps, f"{self.name}.q", A.concat([A.as_tensor(target), cond], axis=-1), 2)
        return h[..., :self.latent], h[..., self.latent:]

    def decode(self, z, cond):
        out = mlp(self.ps, f"{self.name}.p", A.concat([A.as_tensor(z), cond], axis=-1), 3)
        return A.add(out, self.offset)

    def forward(self, target, cond, noise):
        """Training pass: returns (reconstruction, mu, logvar)."""
        mu, logvar = self.posterior(target, cond)
        z = reparam_sample(mu, logvar, noise)
        return self.decode(z, cond), mu, logvar


def rot6d_to_matrix(v):
    """Differentiable Gram-Schmidt decode of [..., 6] into [..., 3, 3] (columns x, y, z)."""
    a, b = v[..., 0:3], v[..., 3:6]
    x = A.div(a, A.sqrt(A.add(A.tsum(A.mul(a, a), axis=-1, keepdims=True), 1e-24)))
    zr = A.cross(x, b)
    z = A.div(zr, A.sqrt(A.add(A.tsum(A.mul(zr, zr), axis=-1, keepdims=True), 1e-24)))
    y = A.cross(z, x)
    return A.stack([x, y, z], axis=-1)


def geodesic_loss(R, R_star):
    """Mean rotation angle between batched [.., 3, 3] predictions and targets."""
    R_star = np.asarray(R_star, dtype=np.float64)
    tr = A.tsum(A.tsum(A.mul(R, R_star), axis=-1), axis=-1)
    return A.mean(A.arccos(A.mul(A.sub(tr, 1.0), 0.5)))


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, ps, grads=None):
        grads = ps.grads() if grads is None else grads
        self.t += 1
        adam_step(ps, grads, self.lr, self.t, self.m, self.v, self.b1, self.b2, self.eps)


def adam_step(ps, grads, lr, t, m, v, b1=0.9, b2=0.999, eps=1e-8):
    """One bias-corrected Adam update in place; ``m``/``v`` hold the moments."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for n, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {n}")
    for n in sorted(grads):
        g = grads[n]
        m[n] = b1 * m.get(n, 0.0) + (1 - b1) * g
        v[n] = b2 * v.get(n, 0.0) + (1 - b2) * g * g
        mhat = m[n] / (1 - b1 ** t)
        vhat = v[n] / (1 - b2 ** t)
        ps[n].data = ps[n].data - lr * mhat / (np.sqrt(vhat) + eps)


def check_finite(value, batch_id=None, what="loss"):
    if not np.all(np.isfinite(value)):
        raise NonFiniteLoss(f"non-finite {what} at batch {batch_id}", batch_id=batch_id)


# ---------------------------------------------------------------- checkpoints

def _encode_array(a):
    flat = np.ascontiguousarray(np.asarray(a, dtype="<f4").reshape(-1))
    return HEADER.pack(MAGIC, ARRAY_VERSION, flat.size, 0) + flat.tobytes()


def _decode_array(blob, shape):
    if len(blob) < HEADER.size:
        raise CorruptManifest("array file shorter than its header")
    magic, version, n, _ = HEADER.unpack_from(blob)
    if magic != MAGIC or version != ARRAY_VERSION or len(blob) != HEADER.size + 4 * n:
        raise CorruptManifest("bad array header or size")
    if int(np.prod(shape)) != n:
        raise CorruptManifest("array size does not match manifest shape")
    return np.frombuffer(blob, dtype="<f4", offset=HEADER.size).astype(np.float64).reshape(shape)


def save_checkpoint(directory, ps, config, config_hash, extra=None):
    os.makedirs(directory, exist_ok=True)
    arrays = {}
    for i, n in enumerate(ps.names()):
        blob = _encode_array(ps[n].data)
        fname = f"p{i:03d}.bin"
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(blob)
        arrays[n] = {"file": fname, "shape": list(ps[n].data.shape),
                     "sha256": hashlib.sha256(blob).hexdigest()}
    manifest = {"config": config, "config_hash": config_hash, "arrays": arrays, "extra": extra or {}}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return directory


def load_checkpoint(directory):
    """Returns (arrays, manifest)."""
    path = os.path.join(directory, "manifest.json")
    if not os.path.isfile(path):
        raise MissingCheckpoint(f"no checkpoint at {directory}")
    with open(path) as fh:
        manifest = json.load(fh)
    arrays = {}
    for n, info in manifest["arrays"].items():
        with open(os.path.join(directory, info["file"]), "rb") as fh:
            blob = fh.read()
        if hashlib.sha256(blob).hexdigest() != info["sha256"]:
            raise CorruptManifest(f"checksum mismatch for parameter {n}")
        arrays[n] = _decode_array(blob, tuple(info["shape"]))
    return arrays, manifest
