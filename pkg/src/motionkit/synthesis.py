"""Cross-location spectrogram synthesis.

Two location-specific autoencoders are trained first. A synthesizer then
keeps both encoders frozen, transports the source embedding towards the
target location with an entropic optimal-transport plan, and decodes the
transported embedding into a target-location spectrogram. Training
minimises ``MSE(transported, target embedding) + MSE(decoded, target image)``.

The embedding is read as a histogram over its 512 dimensions: it is shifted
to be positive and normalised, and that histogram is the source marginal.
The target marginal is uniform. The cost between dimensions comes from a
learnable 512 x 16 row embedding (squared distances), so the plan depends on
both the learned geometry and the input.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import EmptyDataset, NoAlignedPairs, ShapeMismatch, UntrainedSynthesizer
from .harness.dataset import SpecDataset
from .harness.metrics import confusion_matrix, macro_f1
from .nn import Adam, AutoEncoder, build_autoencoder, make_generator, mse
from .nn.checkpoint import load_meta, load_state, save_state

log = logging.getLogger(__name__)

FEATURE_EPS = 1e-6


# ---------------------------------------------------------------------------
# Sinkhorn
# ---------------------------------------------------------------------------


@dataclass
class SinkhornProblem:
    C: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lam: float = 0.1
    max_iters: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.C.shape != (self.a.size, self.b.size):
            raise ShapeMismatch(f"cost {self.C.shape} vs marginals {self.a.size}, {self.b.size}")
        if not np.all(np.isfinite(self.C)):
            raise ValueError("cost matrix must be finite")
        for m in (self.a, self.b):
            if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
                raise ValueError("marginals must be nonnegative and sum to 1")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


@dataclass
class TransportPlan:
    P: np.ndarray
    converged: bool
    iters_used: int

    def cost(self, C) -> float:
        return float(np.sum(self.P * C))


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    # plain numpy log-sum-exp; scipy's version costs more than the math here
    m = x.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.log(np.exp(x - m).sum(axis=axis)) + m.squeeze(axis)


def sinkhorn(problem: SinkhornProblem) -> TransportPlan:
    """Log-domain Sinkhorn-Knopp for ``min <P, C> - lam * H(P)``.

    Alternates exact updates of the dual potentials; after each pair of
    updates the column marginals are exact, so convergence is judged on the
    row marginals. A non-finite state (e.g. underflow) returns
    ``converged=False`` rather than raising.
    """
    C, a, b, lam = problem.C, problem.a, problem.b, problem.lam
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    converged = False
    it = 0
    with np.errstate(invalid="ignore", over="ignore"):
        for it in range(1, problem.max_iters + 1):
            f = lam * (log_a - _lse((g[None, :] - C) / lam, 1))
            g = lam * (log_b - _lse((f[:, None] - C) / lam, 0))
            P = np.exp((f[:, None] + g[None, :] - C) / lam)
            if not np.all(np.isfinite(P)):
                break
            viol = max(np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max())
            if viol < problem.tol:
                converged = True
                break
        P = np.exp((f[:, None] + g[None, :] - C) / lam)
    P = np.where(np.isfinite(P), P, 0.0)
    return TransportPlan(P=P, converged=converged, iters_used=it)


def sinkhorn_scaling_batch(K: torch.Tensor, A: torch.Tensor, max_iters: int,
                           tol: float) -> tuple[torch.Tensor, int]:
    """Matrix-scaling Sinkhorn for a batch of source marginals ``A`` (B x n)
    sharing one kernel ``K`` and a uniform target marginal.

    Returns the row scalings ``u`` (B x n) and the iterations used. The loop
    stays on the autograd tape so gradients reach ``K``. The column scalings
    cancel out of the barycentric map, so they are not returned.
    """
    n = K.shape[1]
    b = 1.0 / n
    u = torch.ones_like(A)
    v = torch.ones_like(A)
    it = 0
    for it in range(1, max_iters + 1):
        u = A / (v @ K.T)
        v = b / (u @ K)
        if it % 10 == 0 or it == max_iters:
            with torch.no_grad():
                rows = u * (v @ K.T)
                if (rows - A).abs().max().item() < tol:
                    break
    return u, it


# ---------------------------------------------------------------------------
# Cost, transport and loss
# ---------------------------------------------------------------------------


def build_cost(row_embedding):
    """Squared Euclidean distances between rows: ``C_ij = ||e_i - e_j||^2``.

    Accepts a numpy array or a torch tensor and returns the same kind.
    """
    if isinstance(row_embedding, torch.Tensor):
        sq = (row_embedding ** 2).sum(dim=1)
        C = sq[:, None] + sq[None, :] - 2.0 * row_embedding @ row_embedding.T
        C = C.clamp_min(0.0)
        return C - torch.diag(torch.diagonal(C))
    e = np.asarray(row_embedding, dtype=np.float64)
    sq = np.sum(e * e, axis=1)
    C = np.maximum(sq[:, None] + sq[None, :] - 2.0 * e @ e.T, 0.0)
    np.fill_diagonal(C, 0.0)
    return C


def feature_histogram(f) -> tuple[np.ndarray, float, float]:
    """Shift a feature vector positive and normalise it: returns (g, min, sum)."""
    f = np.asarray(f, dtype=np.float64)
    lo = float(f.min())
    shifted = f - lo + FEATURE_EPS
    total = float(shifted.sum())
    return shifted / total, lo, total


def transport_apply(plan, f_source) -> tuple[np.ndarray, bool]:
    """Move a feature vector through a transport plan.

    The feature's histogram ``g`` is pushed through the barycentric map
    ``h_j = sum_i P_ij g_i / sum_i P_ij`` (equal to ``n * (P^T g)_j`` when the
    columns carry uniform mass) and mapped back to the feature's own offset
    and scale. Returns ``(output, degenerate)``; a constant vector is returned
    unchanged with ``degenerate=True``.
    """
    P = plan.P if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    f = np.asarray(f_source, dtype=np.float64)
    if P.shape != (f.size, f.size):
        raise ShapeMismatch(f"plan {P.shape} does not match feature length {f.size}")
    if np.ptp(f) <= 1e-12:
        return f.copy(), True
    g, lo, total = feature_histogram(f)
    col_mass = P.sum(axis=0)
    h = np.divide(P.T @ g, col_mass, out=np.zeros_like(g), where=col_mass > 0)
    return h * total + lo - FEATURE_EPS, False


def transport_batch(f: torch.Tensor, K: torch.Tensor, max_iters: int,
                    tol: float) -> tuple[torch.Tensor, int]:
    """Batched, differentiable counterpart of :func:`transport_apply` where
    each plan is solved against the shared kernel ``K = exp(-C / lam)``."""
    lo = f.min(dim=1, keepdim=True).values
    shifted = f - lo + FEATURE_EPS
    total = shifted.sum(dim=1, keepdim=True)
    g = shifted / total
    u, iters = sinkhorn_scaling_batch(K, g, max_iters, tol)
    # with P = diag(u) K diag(v) the column scaling v cancels
    h = ((u * g) @ K) / (u @ K)
    return h * total + lo - FEATURE_EPS, iters


@dataclass
class SynthesisLoss:
    l_ot: float
    l_recon: float
    total: float


def synthesis_loss(f_src_transported, f_tgt, spec_out, spec_tgt):
    """``total = MSE(features) + MSE(images)``.

    Torch inputs return a differentiable ``(total, l_ot, l_recon)`` tuple of
    tensors; array inputs return a :class:`SynthesisLoss`.
    """
    if isinstance(spec_out, torch.Tensor):
        l_ot = mse(f_src_transported, f_tgt)
        l_recon = mse(spec_out, spec_tgt)
        return l_ot + l_recon, l_ot, l_recon
    a, b = np.asarray(f_src_transported, float), np.asarray(f_tgt, float)
    c, d = np.asarray(spec_out, float), np.asarray(spec_tgt, float)
    if a.shape != b.shape or c.shape != d.shape:
        raise ShapeMismatch("synthesis_loss inputs disagree in shape")
    l_ot = float(np.mean((a - b) ** 2))
    l_recon = float(np.mean((c - d) ** 2))
    return SynthesisLoss(l_ot, l_recon, l_ot + l_recon)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    lam: float = 0.1
    max_iters: int = 1000
    tol: float = 1e-6
    cost_rank: int = 16
    cost_init_scale: float = 0.1
    epochs: int = 200
    lr: float = 1e-4
    batch_size: int = 16
    seed: int = 0


class Synthesizer(nn.Module):
    arch = "ot-synthesizer"

    def __init__(self, source_ae: AutoEncoder, target_ae: AutoEncoder, cfg: SynthConfig,
                 source_location: str = "", target_location: str = ""):
        super().__init__()
        self.cfg = cfg
        self.source_location = source_location
        self.target_location = target_location
        self.source_encoder = copy.deepcopy(source_ae.encoder).requires_grad_(False).eval()
        self.target_encoder = copy.deepcopy(target_ae.encoder).requires_grad_(False).eval()
        self.decoder = copy.deepcopy(target_ae.decoder)
        dim = self.decoder.embed_dim
        gen = make_generator(cfg.seed)
        self.cost_embedding = nn.Parameter(
            torch.randn(dim, cfg.cost_rank, generator=gen) * cfg.cost_init_scale
        )
        self.trained = False

    @property
    def output_shape(self) -> tuple[int, int]:
        return self.decoder.output_shape

    def kernel(self) -> torch.Tensor:
        C = build_cost(self.cost_embedding.double())
        return torch.exp(-C / self.cfg.lam)

    def transport(self, f: torch.Tensor) -> torch.Tensor:
        out, _ = transport_batch(f.double(), self.kernel(), self.cfg.max_iters, self.cfg.tol)
        return out.to(f.dtype)

    def forward(self, x_src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        with torch.no_grad():
            f = self.source_encoder(x_src)
        moved = self.transport(f)
        return moved, self.decoder(moved)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [self.cost_embedding] + list(self.decoder.parameters())


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _as_tensor(images) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))


@torch.no_grad()
def reconstruction_mse(ae: AutoEncoder, images: np.ndarray, batch_size: int = 64) -> float:
    total = 0.0
    for idx in _batches(len(images), batch_size, None):
        x = _as_tensor(images[idx])
        total += float(((ae(x) - x) ** 2).sum())
    return total / images.size


def train_autoencoder(train_images: np.ndarray, val_images: np.ndarray | None = None, *,
                      epochs: int = 50, lr: float = 1e-3, batch_size: int = 16, seed: int = 0,
                      channels: tuple[int, ...] = (8, 16, 32), hidden: int = 256,
                      history: list | None = None) -> AutoEncoder:
    """Fit a CNN-LSTM autoencoder by reconstruction MSE and return the epoch
    with the lowest validation MSE (training MSE when no validation set)."""
    if len(train_images) == 0:
        raise EmptyDataset("autoencoder needs at least one training image")
    shape = tuple(train_images.shape[1:])
    ae = build_autoencoder(seed, input_shape=shape, channels=channels, hidden=hidden)
    ae.fit_normalization(train_images)
    if epochs <= 0:
        return ae
    val = val_images if val_images is not None and len(val_images) else train_images
    opt = Adam(ae.parameters(), lr)
    rng = np.random.default_rng(seed)
    best, best_state = float("inf"), None
    for epoch in range(epochs):
        ae.train()
        for idx in _batches(len(train_images), batch_size, rng):
            x = _as_tensor(train_images[idx])
            opt.zero_grad()
            loss = mse(ae(x), x)
            loss.backward()
            opt.step()
        ae.eval()
        score = reconstruction_mse(ae, val)
        if history is not None:
            history.append(score)
        if score < best:
            best, best_state = score, copy.deepcopy(ae.state_dict())
        log.debug("ae epoch %d val mse %.5f", epoch, score)
    ae.load_state_dict(best_state)
    return ae.eval()


# ---------------------------------------------------------------------------
# Pairing and synthesizer training
# ---------------------------------------------------------------------------

PAIR_TOLERANCE_S = 0.32


def align_pairs(source: SpecDataset, target: SpecDataset,
                tolerance_s: float = PAIR_TOLERANCE_S) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs of frames from the same user whose start times differ by
    less than ``tolerance_s``."""
    src_idx, tgt_idx = [], []
    for user in np.unique(source.users):
        s = np.flatnonzero(source.users == user)
        t = np.flatnonzero(target.users == user)
        if not len(t):
            continue
        t_sorted = t[np.argsort(target.frame_start[t], kind="stable")]
        times = target.frame_start[t_sorted]
        pos = np.searchsorted(times, source.frame_start[s])
        for i, p in zip(s, pos):
            cands = [q for q in (p - 1, p) if 0 <= q < len(times)]
            if not cands:
                continue
            q = min(cands, key=lambda q: abs(times[q] - source.frame_start[i]))
            if abs(times[q] - source.frame_start[i]) < tolerance_s:
                src_idx.append(i)
                tgt_idx.append(t_sorted[q])
    return np.asarray(src_idx, dtype=np.int64), np.asarray(tgt_idx, dtype=np.int64)


@torch.no_grad()
def _synth_val_losses(synth: Synthesizer, xs: np.ndarray, xt: np.ndarray,
                      batch_size: int) -> tuple[float, float]:
    l_ot = l_rec = 0.0
    for idx in _batches(len(xs), batch_size, None):
        s, t = _as_tensor(xs[idx]), _as_tensor(xt[idx])
        moved, out = synth(s)
        f_t = synth.target_encoder(t)
        l_ot += float(((moved - f_t) ** 2).mean()) * len(idx)
        l_rec += float(((out - t) ** 2).mean()) * len(idx)
    return l_ot / len(xs), l_rec / len(xs)


def train_synthesizer(source_ae: AutoEncoder, target_ae: AutoEncoder, train_src: np.ndarray,
                      train_tgt: np.ndarray, val_src: np.ndarray | None = None,
                      val_tgt: np.ndarray | None = None, cfg: SynthConfig | None = None, *,
                      source_location: str = "", target_location: str = "",
                      history: list | None = None) -> Synthesizer:
    """Train the cost geometry and decoder on time-aligned image pairs.

    ``train_src[i]`` and ``train_tgt[i]`` must show the same moment from the
    two locations (see :func:`align_pairs`). The encoders stay frozen. The
    epoch with the lowest validation total loss is kept.
    """
    cfg = cfg or SynthConfig()
    if len(train_src) == 0 or len(train_src) != len(train_tgt):
        raise NoAlignedPairs("no aligned source/target pairs to train on")
    synth = Synthesizer(source_ae, target_ae, cfg, source_location, target_location)
    if val_src is None or not len(val_src):
        val_src, val_tgt = train_src, train_tgt
    params = synth.trainable_parameters()
    opt = Adam(params, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    best, best_state = float("inf"), copy.deepcopy(synth.state_dict())
    for epoch in range(cfg.epochs):
        synth.decoder.train()
        for idx in _batches(len(train_src), cfg.batch_size, rng):
            s, t = _as_tensor(train_src[idx]), _as_tensor(train_tgt[idx])
            with torch.no_grad():
                f_t = synth.target_encoder(t)
            opt.zero_grad()
            moved, out = synth(s)
            total, _, _ = synthesis_loss(moved, f_t, out, t)
            total.backward()
            opt.step()
        synth.decoder.eval()
        l_ot, l_rec = _synth_val_losses(synth, val_src, val_tgt, cfg.batch_size)
        if history is not None:
            history.append((l_ot, l_rec))
        if l_ot + l_rec < best:
            best, best_state = l_ot + l_rec, copy.deepcopy(synth.state_dict())
        log.debug("synth epoch %d l_ot %.5f l_recon %.5f", epoch, l_ot, l_rec)
    synth.load_state_dict(best_state)
    synth.trained = True
    return synth.eval()


@torch.no_grad()
def synthesize(source_images, synth: Synthesizer, batch_size: int = 32) -> np.ndarray:
    """Target-location images generated from source-location images; only the
    source encoder is used."""
    if not synth.trained:
        raise UntrainedSynthesizer("train or load the synthesizer first")
    imgs = np.asarray(source_images, dtype=np.float32)
    single = imgs.ndim == 2
    if single:
        imgs = imgs[None]
    out = []
    for idx in _batches(len(imgs), batch_size, None):
        _, img = synth(_as_tensor(imgs[idx]))
        out.append(img.numpy())
    res = np.concatenate(out) if out else np.zeros((0,) + synth.output_shape, np.float32)
    return res[0] if single else res


@dataclass
class SynthesisReport:
    f1_synthetic: float
    f1_real: float
    confusion_synthetic: np.ndarray
    confusion_real: np.ndarray
    n_synthetic: int
    n_real: int


def evaluate_synthesis(predict, synthetic: np.ndarray, synthetic_labels, real: np.ndarray,
                       real_labels, n_classes: int = 4,
                       classes=(0, 1, 2)) -> SynthesisReport:
    """Frame-level macro F1 (percent) of a target-location classifier on
    synthetic images next to the same classifier on real target images.

    ``predict`` maps an image stack to predicted class indices.
    """
    cm_s = confusion_matrix(synthetic_labels, predict(synthetic), n_classes)
    cm_r = confusion_matrix(real_labels, predict(real), n_classes)
    return SynthesisReport(100 * macro_f1(cm_s, classes), 100 * macro_f1(cm_r, classes),
                           cm_s, cm_r, len(synthetic), len(real))


# ---------------------------------------------------------------------------
# Persistence and visual audit
# ---------------------------------------------------------------------------


def save_synthesizer(synth: Synthesizer, directory, seed: int | None = None) -> Path:
    meta = {
        "architecture": synth.arch,
        "source_location": synth.source_location,
        "target_location": synth.target_location,
        "lambda": synth.cfg.lam,
        "max_iters": synth.cfg.max_iters,
        "tol": synth.cfg.tol,
        "cost_rank": synth.cfg.cost_rank,
        "seed": synth.cfg.seed if seed is None else seed,
        "input_shape": list(synth.source_encoder.input_shape),
        "output_shape": list(synth.output_shape),
        "channels": list(synth.decoder.channels),
        "hidden": synth.decoder.lstm.hidden_size,
    }
    return save_state(synth, directory, meta, meta_name="synth.json")


def load_synthesizer(directory) -> Synthesizer:
    meta = load_meta(directory, "synth.json")
    kw = dict(channels=tuple(meta["channels"]), hidden=meta["hidden"])
    src = AutoEncoder(tuple(meta["input_shape"]), **kw)
    tgt = AutoEncoder(tuple(meta["output_shape"]), **kw)
    cfg = SynthConfig(lam=meta["lambda"], max_iters=meta["max_iters"], tol=meta["tol"],
                      cost_rank=meta["cost_rank"], seed=meta["seed"])
    synth = Synthesizer(src, tgt, cfg, meta["source_location"], meta["target_location"])
    load_state(synth, directory, meta_name="synth.json")
    synth.trained = True
    return synth.eval()


def _to_gray(img: np.ndarray) -> np.ndarray:
    # time runs left to right, low frequencies at the bottom
    return (np.clip(img, 0, 1).T[::-1] * 255 + 0.5).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    g = img if img.dtype == np.uint8 else _to_gray(img)
    h, w = g.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + g.tobytes())


def write_triptych(path, source: np.ndarray, real_target: np.ndarray,
                   synthetic: np.ndarray, gap: int = 4) -> None:
    """Source, real target and synthetic target side by side as one PGM."""
    panels = [_to_gray(source), _to_gray(real_target), _to_gray(synthetic)]
    h = max(p.shape[0] for p in panels)
    parts = []
    for i, p in enumerate(panels):
        pad = np.full((h, p.shape[1]), 255, np.uint8)
        pad[h - p.shape[0]:] = p
        parts.append(pad)
        if i < 2:
            parts.append(np.full((h, gap), 255, np.uint8))
    write_pgm(path, np.concatenate(parts, axis=1))
