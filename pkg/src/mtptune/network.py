"""Two-branch embedding network trained with Adam on interaction triplets.

One branch embeds instances, the other targets. A head combines the two
embeddings either by dot product or by a small MLP over their concatenation.
Sides without feature vectors fall back to a one-hot lookup branch, which is
restricted to a single layer (it is a plain embedding table).

Everything runs on float64 numpy. Minibatch order for epoch ``e`` comes from a
generator keyed by ``(seed, e)``, so training k epochs, checkpointing, and
training m more is bit-identical to training k+m epochs in one call.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"MTPN"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh")
_LOSSES = ("bce", "mse")
_PARAM_GROUPS = ("params", "adam_m", "adam_v", "best_params")


class TrainingDiverged(RuntimeError):
    """Training or validation loss left the finite range."""


class FeasibilityError(RuntimeError):
    """A one-hot branch was asked to embed an entity outside its vocabulary."""


class CheckpointFormatError(ValueError):
    """Blob is not a readable checkpoint (bad magic, version, or truncation)."""


@dataclass(frozen=True)
class BranchSpec:
    """Architecture of one branch: n_layers dense layers ending in the shared
    embedding dimension. Hidden layers (the first n_layers - 1) use ``width``
    units and ``activation``; the final layer is linear."""

    n_layers: int = 1
    width: int = 64
    embedding_dim: int = 16
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")
        if self.width < 1 or self.embedding_dim < 1:
            raise ValueError("width and embedding_dim must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class HeadSpec:
    """Score head. "dot" takes the embedding inner product. "mlp" stacks
    dense layers of the given widths over the concatenated embeddings and
    projects to a scalar with a final linear map (no bias)."""

    kind: str = "dot"
    widths: tuple[int, ...] = ()
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.kind not in ("dot", "mlp"):
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.kind == "dot" and self.widths:
            raise ValueError("dot head takes no layer widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("mlp widths must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. The optimizer is Adam with the usual
    (0.9, 0.999, 1e-8) constants; only the learning rate is tunable."""

    learning_rate: float = 1e-3
    batch_size: int = 256
    loss: str = "bce"
    patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.loss not in _LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass(frozen=True)
class _BranchMeta:
    one_hot: bool
    input_dim: int  # vocabulary size for one-hot, feature count otherwise
    spec: BranchSpec


class TwoBranchModel:
    def __init__(self, inst: _BranchMeta, tgt: _BranchMeta, head: HeadSpec,
                 loss: str, params: dict[str, np.ndarray], seed: int):
        self.inst = inst
        self.tgt = tgt
        self.head = head
        self.loss = loss
        self.sigma_out = "logistic" if loss == "bce" else "identity"
        self.params = params
        self.seed = seed


def _truncated_normal(rng: np.random.Generator, shape: tuple[int, ...],
                      std: float) -> np.ndarray:
    # Gaussian(0, std^2) truncated at two standard deviations by redrawing
    w = rng.normal(0.0, std, size=shape)
    mask = np.abs(w) > 2 * std
    while mask.any():
        w[mask] = rng.normal(0.0, std, size=int(mask.sum()))
        mask = np.abs(w) > 2 * std
    return w


def _init_branch(prefix: str, meta: _BranchMeta,
                 rng: np.random.Generator) -> dict[str, np.ndarray]:
    spec = meta.spec
    params: dict[str, np.ndarray] = {}
    if meta.one_hot:
        # single-layer lookup table, no bias
        std = math.sqrt(2.0 / meta.input_dim)
        params[f"{prefix}.0.W"] = _truncated_normal(
            rng, (meta.input_dim, spec.embedding_dim), std)
        return params
    dims = [meta.input_dim] + [spec.width] * (spec.n_layers - 1) + [spec.embedding_dim]
    for layer in range(spec.n_layers):
        fan_in = dims[layer]
        std = math.sqrt(2.0 / fan_in)
        params[f"{prefix}.{layer}.W"] = _truncated_normal(
            rng, (fan_in, dims[layer + 1]), std)
        params[f"{prefix}.{layer}.b"] = np.zeros(dims[layer + 1])
    return params


def build(n_instances: int, n_targets: int,
          instance_feature_dim: int | None, target_feature_dim: int | None,
          inst_spec: BranchSpec, tgt_spec: BranchSpec, head_spec: HeadSpec,
          loss: str, seed: int) -> TwoBranchModel:
    """Construct a model with fresh weights.

    A side with feature dimension ``None`` becomes a one-hot branch over its
    vocabulary and must declare exactly one layer. Both branches share the
    embedding dimension. Weights draw from Gaussian(0, 2 / fan_in) truncated
    at two standard deviations; biases start at zero.
    """
    if loss not in _LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    if inst_spec.embedding_dim != tgt_spec.embedding_dim:
        raise ValueError("branches must share the embedding dimension")
    if instance_feature_dim is None and inst_spec.n_layers != 1:
        raise ValueError("one-hot instance branch allows exactly one layer")
    if target_feature_dim is None and tgt_spec.n_layers != 1:
        raise ValueError("one-hot target branch allows exactly one layer")
    inst = _BranchMeta(instance_feature_dim is None,
                       n_instances if instance_feature_dim is None
                       else instance_feature_dim, inst_spec)
    tgt = _BranchMeta(target_feature_dim is None,
                      n_targets if target_feature_dim is None
                      else target_feature_dim, tgt_spec)
    params: dict[str, np.ndarray] = {}
    params.update(_init_branch("inst", inst, np.random.default_rng((seed, 0))))
    params.update(_init_branch("tgt", tgt, np.random.default_rng((seed, 1))))
    head_rng = np.random.default_rng((seed, 2))
    if head_spec.kind == "mlp":
        dims = [2 * inst_spec.embedding_dim] + list(head_spec.widths)
        for layer in range(len(head_spec.widths)):
            std = math.sqrt(2.0 / dims[layer])
            params[f"head.{layer}.W"] = _truncated_normal(
                head_rng, (dims[layer], dims[layer + 1]), std)
            params[f"head.{layer}.b"] = np.zeros(dims[layer + 1])
        params["head.h"] = _truncated_normal(head_rng, (dims[-1],),
                                             math.sqrt(2.0 / dims[-1]))
    return TwoBranchModel(inst, tgt, head_spec, loss, params, seed)


# ----------------------------------------------------------------------
# forward / backward
# ----------------------------------------------------------------------


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0).astype(float) if kind == "relu" else 1.0 - a * a


def _branch_forward(prefix: str, meta: _BranchMeta, params: Mapping[str, np.ndarray],
                    x: np.ndarray, cache: dict | None) -> np.ndarray:
    if meta.one_hot:
        idx = np.asarray(x)
        if idx.ndim != 1:
            raise ValueError(f"{prefix} branch expects a 1-d index array")
        if idx.size and (idx.min() < 0 or idx.max() >= meta.input_dim):
            side = "instance" if prefix == "inst" else "target"
            raise FeasibilityError(
                f"{side} branch is one-hot with vocabulary size {meta.input_dim}; "
                "it cannot embed unseen ids")
        out = params[f"{prefix}.0.W"][idx]
        if cache is not None:
            cache[f"{prefix}.idx"] = idx
        return out
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != meta.input_dim:
        raise ValueError(
            f"{prefix} branch expects inputs of dimension {meta.input_dim}, "
            f"got shape {x.shape}")
    a = x
    for layer in range(meta.spec.n_layers):
        z = a @ params[f"{prefix}.{layer}.W"] + params[f"{prefix}.{layer}.b"]
        if layer < meta.spec.n_layers - 1:
            nxt = _act(z, meta.spec.activation)
        else:
            nxt = z  # embedding output stays linear
        if cache is not None:
            cache[f"{prefix}.a{layer}"] = a
            cache[f"{prefix}.z{layer}"] = z
        a = nxt
    return a


def _branch_backward(prefix: str, meta: _BranchMeta, params: Mapping[str, np.ndarray],
                     cache: dict, d_out: np.ndarray,
                     grads: dict[str, np.ndarray]) -> None:
    if meta.one_hot:
        gw = np.zeros_like(params[f"{prefix}.0.W"])
        np.add.at(gw, cache[f"{prefix}.idx"], d_out)
        grads[f"{prefix}.0.W"] = gw
        return
    d = d_out
    for layer in reversed(range(meta.spec.n_layers)):
        z = cache[f"{prefix}.z{layer}"]
        a = cache[f"{prefix}.a{layer}"]
        if layer < meta.spec.n_layers - 1:
            d = d * _act_grad(z, _act(z, meta.spec.activation), meta.spec.activation)
        grads[f"{prefix}.{layer}.W"] = a.T @ d
        grads[f"{prefix}.{layer}.b"] = d.sum(axis=0)
        d = d @ params[f"{prefix}.{layer}.W"].T


def _scores(model: TwoBranchModel, params: Mapping[str, np.ndarray],
            inst_in: np.ndarray, tgt_in: np.ndarray,
            cache: dict | None = None) -> np.ndarray:
    p = _branch_forward("inst", model.inst, params, inst_in, cache)
    q = _branch_forward("tgt", model.tgt, params, tgt_in, cache)
    if cache is not None:
        cache["p"], cache["q"] = p, q
    if model.head.kind == "dot":
        return (p * q).sum(axis=1)
    z = np.concatenate([p, q], axis=1)
    for layer in range(len(model.head.widths)):
        pre = z @ params[f"head.{layer}.W"] + params[f"head.{layer}.b"]
        post = _act(pre, model.head.activation)
        if cache is not None:
            cache[f"head.a{layer}"] = z
            cache[f"head.z{layer}"] = pre
        z = post
    if cache is not None:
        cache["head.top"] = z
    return z @ params["head.h"]


def forward(model: TwoBranchModel, inst_in: np.ndarray,
            tgt_in: np.ndarray) -> np.ndarray:
    """Predicted scores for aligned instance/target inputs. Logistic squash
    when the loss is bce, raw scores otherwise."""
    s = _scores(model, model.params, inst_in, tgt_in)
    if model.sigma_out == "logistic":
        return 1.0 / (1.0 + np.exp(-s))
    return s


def batch_loss(outputs: np.ndarray, targets: np.ndarray, kind: str) -> float:
    """Mean loss over a batch.

    ``outputs`` are pre-squash scores. For bce the logistic link is folded
    into the numerically stable logit form max(s,0) - s*y + log(1+exp(-|s|));
    for mse the scores are the predictions themselves.
    """
    s = np.asarray(outputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if s.shape != y.shape:
        raise ValueError("outputs and targets must align")
    if kind == "bce":
        return float(np.mean(np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))))
    if kind == "mse":
        return float(np.mean((s - y) ** 2))
    raise ValueError(f"unknown loss {kind!r}")


def _loss_grad_wrt_scores(s: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "bce":
        return (1.0 / (1.0 + np.exp(-s)) - y) / s.size
    return 2.0 * (s - y) / s.size


def evaluate_loss(model: TwoBranchModel, params: Mapping[str, np.ndarray],
                  inst_in: np.ndarray, tgt_in: np.ndarray,
                  y: np.ndarray) -> float:
    return batch_loss(_scores(model, params, inst_in, tgt_in), y, model.loss)


def loss_and_grads(model: TwoBranchModel, params: Mapping[str, np.ndarray],
                   inst_in: np.ndarray, tgt_in: np.ndarray,
                   y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Batch loss and exact gradients for every parameter array."""
    cache: dict = {}
    s = _scores(model, params, inst_in, tgt_in, cache)
    loss = batch_loss(s, y, model.loss)
    ds = _loss_grad_wrt_scores(s, np.asarray(y, dtype=float), model.loss)
    grads: dict[str, np.ndarray] = {}
    if model.head.kind == "dot":
        dp = ds[:, None] * cache["q"]
        dq = ds[:, None] * cache["p"]
    else:
        top = cache["head.top"]
        grads["head.h"] = top.T @ ds
        d = ds[:, None] * params["head.h"][None, :]
        for layer in reversed(range(len(model.head.widths))):
            pre = cache[f"head.z{layer}"]
            d = d * _act_grad(pre, _act(pre, model.head.activation),
                              model.head.activation)
            grads[f"head.{layer}.W"] = cache[f"head.a{layer}"].T @ d
            grads[f"head.{layer}.b"] = d.sum(axis=0)
            d = d @ params[f"head.{layer}.W"].T
        e = model.inst.spec.embedding_dim
        dp, dq = d[:, :e], d[:, e:]
    _branch_backward("inst", model.inst, params, cache, dp, grads)
    _branch_backward("tgt", model.tgt, params, cache, dq, grads)
    return loss, grads


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    """Snapshot after some number of completed epochs.

    Carries the last-epoch weights plus the Adam state needed to continue,
    and separately the best-validation-epoch weights used for prediction.
    The RNG cursor is (seed, epoch): epoch e+1 always shuffles with the
    generator keyed by (seed, e+1).
    """

    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    epoch: int
    seed: int
    best_val_loss: float
    best_epoch: int
    best_params: dict[str, np.ndarray]
    epochs_since_improvement: int


def _copy_tree(tree: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in tree.items()}


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    groups = {"params": ckpt.params, "adam_m": ckpt.adam_m,
              "adam_v": ckpt.adam_v, "best_params": ckpt.best_params}
    arrays: list[list[Any]] = []
    payload = bytearray()
    for group in _PARAM_GROUPS:
        for name in sorted(groups[group]):
            arr = np.ascontiguousarray(groups[group][name], dtype="<f8")
            arrays.append([group, name, list(arr.shape)])
            payload += arr.tobytes()
    header = {
        "epoch": ckpt.epoch,
        "adam_t": ckpt.adam_t,
        "seed": ckpt.seed,
        "best_epoch": ckpt.best_epoch,
        "epochs_since_improvement": ckpt.epochs_since_improvement,
        "best_val_loss": ckpt.best_val_loss,
        "arrays": arrays,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return (CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
            + struct.pack("<Q", len(head)) + head + bytes(payload))


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (head_len,) = struct.unpack_from("<Q", blob, 8)
    head_end = 16 + head_len
    if len(blob) < head_end:
        raise CheckpointFormatError("truncated header")
    header = json.loads(blob[16:head_end].decode("utf-8"))
    groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _PARAM_GROUPS}
    offset = head_end
    for group, name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(blob) < offset + nbytes:
            raise CheckpointFormatError("truncated payload")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        groups[group][name] = arr.reshape(shape).astype(float)
        offset += nbytes
    return Checkpoint(
        params=groups["params"], adam_m=groups["adam_m"],
        adam_v=groups["adam_v"], adam_t=header["adam_t"],
        epoch=header["epoch"], seed=header["seed"],
        best_val_loss=header["best_val_loss"], best_epoch=header["best_epoch"],
        best_params=groups["best_params"],
        epochs_since_improvement=header["epochs_since_improvement"],
    )


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(ckpt))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


# ----------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TrainResult:
    checkpoint: Checkpoint
    val_history: tuple[float, ...]  # per newly trained epoch

    @property
    def val_loss(self) -> float:
        return self.checkpoint.best_val_loss


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng((seed, epoch))


def train(model: TwoBranchModel,
          inst_inputs: np.ndarray | None, tgt_inputs: np.ndarray | None,
          train_triplets: tuple[np.ndarray, np.ndarray, np.ndarray],
          val_triplets: tuple[np.ndarray, np.ndarray, np.ndarray],
          cfg: TrainConfig, budget_epochs: int,
          resume_from: Checkpoint | None = None) -> TrainResult:
    """Train up to ``budget_epochs`` total epochs with early stopping.

    ``inst_inputs``/``tgt_inputs`` are feature matrices indexed by triplet
    ids, or None for one-hot branches (ids feed the lookup directly).
    Validation loss is measured after every epoch; training stops once it
    fails to improve for ``cfg.patience`` consecutive epochs. The returned
    checkpoint resumes bit-exactly: the epoch counter keys the shuffle
    stream and the stopping counter survives the boundary.
    """
    ti, tj, ty = (np.asarray(a) for a in train_triplets)
    vi, vj, vy = (np.asarray(a) for a in val_triplets)
    if not (len(ti) == len(tj) == len(ty)) or len(ti) == 0:
        raise ValueError("training triplets must be aligned and non-empty")
    if not (len(vi) == len(vj) == len(vy)) or len(vi) == 0:
        raise ValueError("validation triplets must be aligned and non-empty")

    if resume_from is not None:
        if budget_epochs < resume_from.epoch:
            raise ValueError("budget below the checkpoint's completed epochs")
        params = _copy_tree(resume_from.params)
        m = _copy_tree(resume_from.adam_m)
        v = _copy_tree(resume_from.adam_v)
        t = resume_from.adam_t
        start_epoch = resume_from.epoch
        seed = resume_from.seed
        best_val = resume_from.best_val_loss
        best_epoch = resume_from.best_epoch
        best_params = _copy_tree(resume_from.best_params)
        since = resume_from.epochs_since_improvement
    else:
        if budget_epochs < 1:
            raise ValueError("fresh training needs at least one epoch")
        params = _copy_tree(model.params)
        m = {k: np.zeros_like(p) for k, p in params.items()}
        v = {k: np.zeros_like(p) for k, p in params.items()}
        t = 0
        start_epoch = 0
        seed = cfg.seed
        best_val = math.inf
        best_epoch = 0
        best_params = _copy_tree(params)
        since = 0

    def inputs_for(idx_i: np.ndarray, idx_j: np.ndarray):
        a = idx_i if inst_inputs is None else inst_inputs[idx_i]
        b = idx_j if tgt_inputs is None else tgt_inputs[idx_j]
        return a, b

    names = sorted(params)
    history: list[float] = []
    epoch = start_epoch
    for epoch in range(start_epoch + 1, budget_epochs + 1):
        if since >= cfg.patience:
            epoch -= 1
            break
        perm = _epoch_rng(seed, epoch).permutation(len(ti))
        for lo in range(0, len(perm), cfg.batch_size):
            sel = perm[lo:lo + cfg.batch_size]
            bi, bj = inputs_for(ti[sel], tj[sel])
            loss, grads = loss_and_grads(model, params, bi, bj, ty[sel])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"training loss diverged at epoch {epoch}")
            t += 1
            bc1 = 1.0 - ADAM_BETA1 ** t
            bc2 = 1.0 - ADAM_BETA2 ** t
            for name in names:
                g = grads[name]
                m[name] = ADAM_BETA1 * m[name] + (1 - ADAM_BETA1) * g
                v[name] = ADAM_BETA2 * v[name] + (1 - ADAM_BETA2) * g * g
                params[name] = params[name] - cfg.learning_rate * (
                    (m[name] / bc1) / (np.sqrt(v[name] / bc2) + ADAM_EPS))
        vi_in, vj_in = inputs_for(vi, vj)
        val_loss = evaluate_loss(model, params, vi_in, vj_in, vy)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss diverged at epoch {epoch}")
        history.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = _copy_tree(params)
            since = 0
        else:
            since += 1
        if since >= cfg.patience:
            break

    return TrainResult(
        checkpoint=Checkpoint(
            params=params, adam_m=m, adam_v=v, adam_t=t, epoch=epoch,
            seed=seed, best_val_loss=best_val, best_epoch=best_epoch,
            best_params=best_params, epochs_since_improvement=since),
        val_history=tuple(history),
    )


def predict_matrix(model: TwoBranchModel,
                   inst_inputs: np.ndarray | None, tgt_inputs: np.ndarray | None,
                   pairs: tuple[np.ndarray, np.ndarray],
                   params: Mapping[str, np.ndarray] | None = None,
                   chunk: int = 8192) -> np.ndarray:
    """Scores for the requested (instance, target) index pairs."""
    idx_i, idx_j = (np.asarray(p) for p in pairs)
    if idx_i.shape != idx_j.shape:
        raise ValueError("pair index arrays must align")
    params = model.params if params is None else params
    out = np.empty(len(idx_i), dtype=float)
    for lo in range(0, len(idx_i), chunk):
        sl = slice(lo, lo + chunk)
        a = idx_i[sl] if inst_inputs is None else inst_inputs[idx_i[sl]]
        b = idx_j[sl] if tgt_inputs is None else tgt_inputs[idx_j[sl]]
        s = _scores(model, params, a, b)
        out[sl] = 1.0 / (1.0 + np.exp(-s)) if model.sigma_out == "logistic" else s
    return out
