"""Linear semantic projectors, symmetric contrastive objective, AdamW, fit.

The training objective pulls matched neural/visual pairs together and
pushes mismatched pairs apart in both directions of the batch similarity
matrix. Rows are L2-normalized inside the loss (cosine similarity), so
projector outputs stay unconstrained. Temperature is a learnable
log-parameter, clamped from below.

All gradients here are analytic, including through the normalization and
the temperature; the optimizer is AdamW with decoupled weight decay
applied to weight matrices only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data.bank import EmbeddingBank
from .data.batching import batch_iter
from .data.ingest import NeuralDataset
from .data.manifest import PairManifest
from .encoders import BACKWARD, FORWARD, init_params
from .rng import Rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CKPT_MAGIC = b"NCK1"
CKPT_VERSION = 1


@dataclass
class ProjectorParams:
    """Affine maps into the shared latent space; identity mode for ablation."""

    W_N: np.ndarray
    b_N: np.ndarray
    W_I: np.ndarray
    b_I: np.ndarray
    mode: str = "linear"

    def param_dict(self) -> dict[str, np.ndarray]:
        if self.mode == "identity":
            return {}
        return {"W_N": self.W_N, "b_N": self.b_N, "W_I": self.W_I, "b_I": self.b_I}


def init_projector(dim_neural: int, dim_image: int, dim_shared: int,
                   rng: Rng, mode: str = "linear", dtype=np.float32) -> ProjectorParams:
    if mode == "identity":
        if not (dim_neural == dim_image == dim_shared):
            raise ValueError(
                "identity projector requires equal neural/image/shared dims, got "
                f"{dim_neural}/{dim_image}/{dim_shared}"
            )
        empty = np.zeros((0,), dtype=dtype)
        return ProjectorParams(W_N=empty, b_N=empty, W_I=empty, b_I=empty, mode="identity")
    if mode != "linear":
        raise ValueError(f"unknown projector mode {mode!r}")

    def w(shape):
        std = np.sqrt(2.0 / (shape[0] + shape[1]))
        return (rng.normal(shape, dtype=np.float64) * std).astype(dtype)

    return ProjectorParams(
        W_N=w((dim_neural, dim_shared)),
        b_N=np.zeros(dim_shared, dtype=dtype),
        W_I=w((dim_image, dim_shared)),
        b_I=np.zeros(dim_shared, dtype=dtype),
        mode="linear",
    )


def project(p: ProjectorParams, z_n: np.ndarray, z_i: np.ndarray):
    """v = z_n @ W_N + b_N and w = z_i @ W_I + b_I (or passthrough)."""
    if p.mode == "identity":
        return z_n, z_i
    return T.matmul(z_n, p.W_N) + p.b_N, T.matmul(z_i, p.W_I) + p.b_I


def project_backward(p: ProjectorParams, z_n, z_i, grad_v, grad_w):
    """Gradients for both affine maps and both inputs."""
    if p.mode == "identity":
        return {}, grad_v, grad_w
    grads = {
        "W_N": T.matmul(z_n.T, grad_v),
        "b_N": grad_v.sum(axis=0),
        "W_I": T.matmul(z_i.T, grad_w),
        "b_I": grad_w.sum(axis=0),
    }
    return grads, T.matmul(grad_v, p.W_N.T), T.matmul(grad_w, p.W_I.T)


def contrastive_loss(v: np.ndarray, w: np.ndarray, tau: float):
    """Bidirectional batch contrastive loss over cosine similarities.

    Averages the two directional cross-entropies (neural->visual and
    visual->neural) over the M x M similarity matrix. Returns
    (loss, grad_v, grad_w, grad_tau) with exact gradients through the
    row normalization and the temperature.
    """
    if v.shape != w.shape:
        raise ValueError(f"paired batches must share shape, got {v.shape} vs {w.shape}")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    m = v.shape[0]
    vn, v_norms = T.l2_normalize(v)
    wn, w_norms = T.l2_normalize(w)
    sim = T.matmul(vn, wn.T)
    logits = sim / tau
    diag = np.arange(m)

    # rows of `logits`: v_k against all w_j; columns: w_j against all v_k.
    # One exp pass per direction serves both the softmax and the logsumexp.
    row_max = logits.max(axis=1)
    exp_row = np.exp(logits - row_max[:, None])
    row_sum = exp_row.sum(axis=1)
    col_max = logits.max(axis=0)
    exp_col = np.exp(logits - col_max[None, :])
    col_sum = exp_col.sum(axis=0)

    log_p_vw = logits[diag, diag] - (row_max + np.log(row_sum))
    log_p_wv = logits[diag, diag] - (col_max + np.log(col_sum))
    loss = float(-(log_p_vw.sum() + log_p_wv.sum()) / (2 * m))

    d_logits = exp_row / row_sum[:, None] + exp_col / col_sum[None, :]
    d_logits[diag, diag] -= 2.0
    d_logits /= 2 * m

    grad_tau = float(-(d_logits * sim).sum() / (tau * tau))
    d_sim = d_logits / tau
    grad_vn = T.matmul(d_sim, wn)
    grad_wn = T.matmul(d_sim.T, vn)
    grad_v = T.l2_normalize_backward(vn, v_norms, grad_vn)
    grad_w = T.l2_normalize_backward(wn, w_norms, grad_wn)
    return loss, grad_v, grad_w, grad_tau


@dataclass
class AdamWState:
    """First/second moments per parameter plus a shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float,
    decay_params: set[str],
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta),
    with decay applied only to names in `decay_params` (weight matrices;
    never biases, gains, or the temperature).
    """
    state.t += 1
    t = state.t
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if weight_decay != 0.0 and name in decay_params:
            update = update + weight_decay * p
        p -= (lr * update).astype(p.dtype, copy=False)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 1024
    epochs: int = 50
    tau_init: float = 0.07
    tau_min: float = 0.01
    dropout_p: float = 0.3
    seed: int = 0
    d_s: int = 1024
    encoder: str = "eegproject"
    projector: str = "linear"

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size and epochs must be positive")
        if self.tau_init <= 0 or self.tau_min <= 0:
            raise ValueError("temperature must stay positive")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout probability must be in [0, 1)")


@dataclass
class ModelCheckpoint:
    """Everything needed to resume or evaluate a training run exactly."""

    config: TrainConfig
    arch: str
    encoder_params: object
    projector_params: ProjectorParams
    log_tau: np.ndarray
    opt_state: AdamWState
    epoch: int
    rng_state: dict
    channels: int
    time_points: int
    bank_dim: int
    encoder_dim: int

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau[0]))


def trainable_params(encoder_params, projector_params, log_tau) -> dict[str, np.ndarray]:
    """Fixed-order name->array view over every trainable tensor."""
    params = {f"enc.{k}": p for k, p in encoder_params.param_dict().items()}
    params.update({f"proj.{k}": p for k, p in projector_params.param_dict().items()})
    params["log_tau"] = log_tau
    return params


def decayed_param_names(params: dict[str, np.ndarray]) -> set[str]:
    """Weight matrices and conv kernels decay; biases, gains, tau do not."""
    return {
        name for name in params
        if name.split(".")[-1].startswith(("W", "k_"))
    }


class NonFiniteLossError(ArithmeticError):
    """Training produced a non-finite loss; carries the diagnostic epoch/step."""


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    test_loss: float


def contrastive_loss_value(v: np.ndarray, w: np.ndarray, tau: float) -> float:
    """Loss of `contrastive_loss` without the gradient computation."""
    if v.shape != w.shape:
        raise ValueError(f"paired batches must share shape, got {v.shape} vs {w.shape}")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    m = v.shape[0]
    vn, _ = T.l2_normalize(v)
    wn, _ = T.l2_normalize(w)
    logits = T.matmul(vn, wn.T) / tau
    diag = np.arange(m)
    row_max = logits.max(axis=1)
    row_lse = row_max + np.log(np.exp(logits - row_max[:, None]).sum(axis=1))
    col_max = logits.max(axis=0)
    col_lse = col_max + np.log(np.exp(logits - col_max[None, :]).sum(axis=0))
    log_p_vw = logits[diag, diag] - row_lse
    log_p_wv = logits[diag, diag] - col_lse
    return float(-(log_p_vw.sum() + log_p_wv.sum()) / (2 * m))


def evaluate_loss(ckpt_like, neural, embed, tau) -> float:
    """Deterministic full-pass loss with dropout disabled."""
    arch, enc, proj = ckpt_like
    z, _ = FORWARD[arch](enc, neural, mode="eval")
    v, w = project(proj, z, embed)
    return contrastive_loss_value(v, w, tau)


def fit(
    dataset: NeuralDataset,
    bank: EmbeddingBank,
    manifest: PairManifest,
    config: TrainConfig,
    encoder_dim: int = 1024,
    callbacks=None,
) -> tuple[ModelCheckpoint, list[EpochLog]]:
    """Train encoder, projectors, and temperature on the manifest's train split.

    Per epoch: shuffle, iterate batches, forward -> project -> loss ->
    full analytic backward -> AdamW on every trainable. Records the mean
    train loss per epoch and the test loss over the held-out pairs in one
    deterministic pass (dropout disabled). Deterministic given the seed.
    """
    train_ids = manifest.image_ids("train")
    test_ids = manifest.image_ids("test")
    if not train_ids:
        raise ValueError("manifest has no training images")

    rng = Rng(config.seed)
    ckpt = _init_checkpoint(dataset, bank, config, encoder_dim, rng)
    return _run_training(ckpt, dataset, bank, train_ids, test_ids, rng, callbacks)


def _init_checkpoint(dataset, bank, config, encoder_dim, rng) -> ModelCheckpoint:
    enc = init_params(
        config.encoder, dataset.num_channels, dataset.num_timepoints,
        encoder_dim, rng.derive(101), dropout_p=config.dropout_p,
    )
    proj = init_projector(
        encoder_dim, bank.dim, config.d_s, rng.derive(102), mode=config.projector,
    )
    log_tau = np.array([np.log(config.tau_init)], dtype=np.float32)
    params = trainable_params(enc, proj, log_tau)
    return ModelCheckpoint(
        config=config,
        arch=config.encoder,
        encoder_params=enc,
        projector_params=proj,
        log_tau=log_tau,
        opt_state=AdamWState.for_params(params),
        epoch=0,
        rng_state={},
        channels=dataset.num_channels,
        time_points=dataset.num_timepoints,
        bank_dim=bank.dim,
        encoder_dim=encoder_dim,
    )


def resume(
    ckpt: ModelCheckpoint,
    dataset: NeuralDataset,
    bank: EmbeddingBank,
    manifest: PairManifest,
    callbacks=None,
) -> tuple[ModelCheckpoint, list[EpochLog]]:
    """Continue a checkpointed run; reproduces the uninterrupted run exactly."""
    train_ids = manifest.image_ids("train")
    test_ids = manifest.image_ids("test")
    rng = Rng.from_state_dict(ckpt.rng_state)
    return _run_training(ckpt, dataset, bank, train_ids, test_ids, rng, callbacks)


def _run_training(ckpt, dataset, bank, train_ids, test_ids, rng, callbacks):
    config = ckpt.config
    enc, proj, log_tau = ckpt.encoder_params, ckpt.projector_params, ckpt.log_tau
    params = trainable_params(enc, proj, log_tau)
    decay = decayed_param_names(params)
    forward, backward = FORWARD[ckpt.arch], BACKWARD[ckpt.arch]
    min_log_tau = np.log(config.tau_min)
    log: list[EpochLog] = []

    test_neural = dataset.rows_for(test_ids) if test_ids else None
    test_embed = bank.rows_for(test_ids) if test_ids else None

    for epoch in range(ckpt.epoch + 1, config.epochs + 1):
        total, count = 0.0, 0
        for xb, eb, _ in batch_iter(
            dataset, bank, train_ids, config.batch_size, rng=rng, shuffle=True
        ):
            z, cache = forward(enc, xb, mode="train", rng=rng)
            v, w = project(proj, z, eb)
            tau = float(np.exp(log_tau[0]))
            loss, grad_v, grad_w, grad_tau = contrastive_loss(v, w, tau)
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} after {count} batches"
                )
            pgrads, grad_z, _ = project_backward(proj, z, eb, grad_v, grad_w)
            egrads, _ = backward(enc, cache, grad_z)
            grads = {f"enc.{k}": g for k, g in egrads.items()}
            grads.update({f"proj.{k}": g for k, g in pgrads.items()})
            grads["log_tau"] = np.array([grad_tau * tau], dtype=log_tau.dtype)
            adamw_step(params, grads, ckpt.opt_state,
                       config.learning_rate, config.weight_decay, decay)
            log_tau[0] = max(log_tau[0], min_log_tau)
            total += loss * len(xb)
            count += len(xb)
        train_loss = total / count
        if test_ids:
            test_loss = evaluate_loss(
                (ckpt.arch, enc, proj), test_neural, test_embed,
                float(np.exp(log_tau[0])),
            )
        else:
            test_loss = float("nan")
        entry = EpochLog(epoch=epoch, train_loss=train_loss, test_loss=test_loss)
        log.append(entry)
        ckpt.epoch = epoch
        ckpt.rng_state = rng.state_dict()
        if callbacks:
            for cb in callbacks:
                cb(ckpt, entry)
    if not log:
        ckpt.rng_state = rng.state_dict()
    return ckpt, log


def encode_eval(ckpt: ModelCheckpoint, neural: np.ndarray, embed: np.ndarray):
    """Project a paired evaluation batch into the shared space (dropout off)."""
    z, _ = FORWARD[ckpt.arch](ckpt.encoder_params, neural, mode="eval")
    return project(ckpt.projector_params, z, embed)


# --- checkpoint container (NCK1) -------------------------------------------
#
# Layout mirrors NEB1: magic | uint32 version | uint32 header length |
# JSON header | concatenated little-endian float32 payloads. The header
# lists every tensor name/shape in payload order: parameters first, then
# first moments, then second moments.


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    params = trainable_params(ckpt.encoder_params, ckpt.projector_params, ckpt.log_tau)
    names = sorted(params)
    header = {
        "config": asdict(ckpt.config),
        "arch": ckpt.arch,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "channels": ckpt.channels,
        "time_points": ckpt.time_points,
        "bank_dim": ckpt.bank_dim,
        "encoder_dim": ckpt.encoder_dim,
        "projector_mode": ckpt.projector_params.mode,
        "opt_t": ckpt.opt_state.t,
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [np.ascontiguousarray(params[n], dtype="<f4").tobytes() for n in names]
    chunks += [np.ascontiguousarray(ckpt.opt_state.m[n], dtype="<f4").tobytes() for n in names]
    chunks += [np.ascontiguousarray(ckpt.opt_state.v[n], dtype="<f4").tobytes() for n in names]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    config = TrainConfig(**header["config"])

    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    moments_m: dict[str, np.ndarray] = {}
    moments_v: dict[str, np.ndarray] = {}
    for target in (arrays, moments_m, moments_v):
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            size = int(np.prod(shape)) if shape else 1
            nbytes = size * 4
            if offset + nbytes > len(raw):
                raise ValueError(f"{path}: truncated checkpoint payload")
            target[spec["name"]] = (
                np.frombuffer(raw[offset : offset + nbytes], dtype="<f4")
                .reshape(shape)
                .copy()
            )
            offset += nbytes

    rng_stub = Rng(config.seed)
    enc = init_params(
        config.encoder, header["channels"], header["time_points"],
        header["encoder_dim"], rng_stub, dropout_p=config.dropout_p,
    )
    for k in enc.param_dict():
        enc.param_dict()[k][...] = arrays[f"enc.{k}"]
    proj = init_projector(
        header["encoder_dim"], header["bank_dim"], config.d_s,
        rng_stub, mode=header["projector_mode"],
    )
    for k in proj.param_dict():
        proj.param_dict()[k][...] = arrays[f"proj.{k}"]
    log_tau = arrays["log_tau"]

    params = trainable_params(enc, proj, log_tau)
    opt = AdamWState(
        m={k: moments_m[k] for k in params},
        v={k: moments_v[k] for k in params},
        t=header["opt_t"],
    )
    return ModelCheckpoint(
        config=config,
        arch=header["arch"],
        encoder_params=enc,
        projector_params=proj,
        log_tau=log_tau,
        opt_state=opt,
        epoch=header["epoch"],
        rng_state=header["rng_state"],
        channels=header["channels"],
        time_points=header["time_points"],
        bank_dim=header["bank_dim"],
        encoder_dim=header["encoder_dim"],
    )
