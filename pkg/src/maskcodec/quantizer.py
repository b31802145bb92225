"""Vector quantization primitives, the masked-channel residual VQ (MCRVQ),
a plain residual VQ baseline, codebook training, the quantizer-loss metric,
and the channel-information profiler.

MCRVQ splits the latent channels into ``n_parallel`` contiguous, near-equal
partitions. The first ``n_parallel`` quantizers act in parallel, each seeing
only its own partition; the remaining quantizers act serially on the
cumulative residual. Fusion is channel-concatenation of the parallel outputs
plus summation of the serial outputs.

Numerical contract:
  * codebook entries and fused latents are stored float32;
  * all distances and residual updates run in float64, so nearest-entry
    decisions agree exactly with a float64 exhaustive-search oracle;
  * decoding re-gathers the same float32 entries in the same order as the
    encoder's fusion, so decode(encode(z).tokens, N) is bit-identical to
    encode(z).fused.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ShapeError, UnsupportedError

__all__ = [
    "Codebook",
    "CodebookSet",
    "McrvqConfig",
    "QuantizationResult",
    "TrainSchedule",
    "ChannelProfile",
    "vq_nearest",
    "mcrvq_encode",
    "mcrvq_decode",
    "rvq_encode",
    "rvq_decode",
    "train_codebooks",
    "train_rvq_codebooks",
    "quantizer_loss",
    "channel_information_profile",
    "token_entropy",
    "save_codebooks",
    "load_codebooks",
]

CODEBOOK_MAGIC = b"LCCB"
CODEBOOK_VERSION = 1


@dataclass
class Codebook:
    """One quantizer stage: entry vectors plus EMA training statistics."""

    entries: np.ndarray  # (K, dim) float32
    ema_counts: np.ndarray = None  # (K,) float64
    ema_sums: np.ndarray = None  # (K, dim) float64

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float32)
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise ShapeError(f"codebook entries must be (K, dim), got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise DataError("codebook entries must be finite")
        self.entries = entries
        if self.ema_counts is None:
            self.ema_counts = np.zeros(self.size, dtype=np.float64)
        else:
            self.ema_counts = np.asarray(self.ema_counts, dtype=np.float64)
        if self.ema_sums is None:
            self.ema_sums = np.zeros(entries.shape, dtype=np.float64)
        else:
            self.ema_sums = np.asarray(self.ema_sums, dtype=np.float64)
        if self.ema_counts.shape != (self.size,) or np.any(self.ema_counts < 0):
            raise ShapeError("ema_counts must be (K,) non-negative")
        if self.ema_sums.shape != entries.shape:
            raise ShapeError("ema_sums must match entries shape")

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def partition_bounds(dim: int, n_parallel: int) -> tuple[tuple[int, int], ...]:
    """Near-equal contiguous channel ranges covering [0, dim); any two sizes
    differ by at most 1, with the larger parts first."""
    if not (1 <= n_parallel <= dim):
        raise ShapeError(f"need 1 <= n_parallel <= dim, got {n_parallel}, {dim}")
    base, rem = divmod(dim, n_parallel)
    bounds = []
    lo = 0
    for i in range(n_parallel):
        hi = lo + base + (1 if i < rem else 0)
        bounds.append((lo, hi))
        lo = hi
    return tuple(bounds)


@dataclass(frozen=True)
class McrvqConfig:
    n_total: int = 8
    n_parallel: int = 3
    codebook_size: int = 1024
    dim: int = 512

    def __post_init__(self):
        if not (1 <= self.n_parallel <= self.n_total):
            raise ShapeError(
                f"need 1 <= n_parallel <= n_total, got "
                f"{self.n_parallel}, {self.n_total}"
            )
        if self.codebook_size < 1:
            raise ShapeError("codebook_size must be >= 1")
        if self.dim < self.n_parallel:
            raise ShapeError("dim must be >= n_parallel")

    @property
    def partition(self) -> tuple[tuple[int, int], ...]:
        return partition_bounds(self.dim, self.n_parallel)

    @property
    def n_serial(self) -> int:
        return self.n_total - self.n_parallel


@dataclass
class CodebookSet:
    stages: list

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ShapeError("codebook set must have at least one stage")

    def __len__(self):
        return len(self.stages)

    def __getitem__(self, i):
        return self.stages[i]

    def validate_mcrvq(self, cfg: McrvqConfig) -> None:
        if len(self.stages) != cfg.n_total:
            raise ShapeError(
                f"expected {cfg.n_total} codebooks, got {len(self.stages)}"
            )
        for i, (lo, hi) in enumerate(cfg.partition):
            if self.stages[i].dim != hi - lo:
                raise ShapeError(
                    f"parallel codebook {i} has dim {self.stages[i].dim}, "
                    f"partition needs {hi - lo}"
                )
        for j in range(cfg.n_parallel, cfg.n_total):
            if self.stages[j].dim != cfg.dim:
                raise ShapeError(
                    f"serial codebook {j} has dim {self.stages[j].dim}, "
                    f"expected {cfg.dim}"
                )


@dataclass
class QuantizationResult:
    """Tokens plus the fused quantized latents.

    stage_residual_energy[m] is the per-frame mean squared norm of
    z - sum(first m stage embeddings); index 0 is the input energy.
    stage_sq_errors[i] is the per-frame mean squared error between stage i's
    input (partition slice or cumulative residual) and its chosen embedding.
    """

    tokens: np.ndarray  # (frames, n_stages) int32
    fused: np.ndarray  # (frames, dim) float32
    stage_residual_energy: np.ndarray  # (n_stages + 1,) float64
    stage_sq_errors: np.ndarray  # (n_stages,) float64


def _as_latents(z, dim=None) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"latents must be 2-D (frames, dim), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DataError("latents contain non-finite values")
    if dim is not None and z.shape[1] != dim:
        raise ShapeError(f"latents have dim {z.shape[1]}, expected {dim}")
    return z


def vq_nearest(cb: Codebook, vectors: np.ndarray):
    """Nearest codebook entry per vector under squared Euclidean distance.

    Ties break to the lowest index. Returns (indices int32, embeddings
    float32 rows of the codebook).
    """
    v = _as_latents(vectors, cb.dim)
    e = cb.entries.astype(np.float64)
    # ||v - e||^2 expanded; the v^2 term is constant per row and dropped
    d = -2.0 * (v @ e.T) + np.sum(e**2, axis=1)
    idx = np.argmin(d, axis=1).astype(np.int32)
    return idx, cb.entries[idx]


def _frame_energy(r: np.ndarray) -> float:
    return float(np.mean(np.sum(r**2, axis=1)))


def mcrvq_encode(
    z: np.ndarray, cbs: CodebookSet, cfg: McrvqConfig
) -> QuantizationResult:
    z = _as_latents(z, cfg.dim)
    cbs.validate_mcrvq(cfg)
    n_frames = z.shape[0]
    tokens = np.empty((n_frames, cfg.n_total), dtype=np.int32)
    residual = z.copy()
    energies = [_frame_energy(residual)]
    errors = []
    for i, (lo, hi) in enumerate(cfg.partition):
        idx, emb = vq_nearest(cbs[i], z[:, lo:hi])
        tokens[:, i] = idx
        residual[:, lo:hi] -= emb
        energies.append(_frame_energy(residual))
        errors.append(_frame_energy(z[:, lo:hi] - emb))
    for j in range(cfg.n_parallel, cfg.n_total):
        idx, emb = vq_nearest(cbs[j], residual)
        tokens[:, j] = idx
        errors.append(_frame_energy(residual - emb))
        residual -= emb
        energies.append(_frame_energy(residual))
    fused = mcrvq_decode(tokens, cbs, cfg, cfg.n_total)
    return QuantizationResult(
        tokens=tokens,
        fused=fused,
        stage_residual_energy=np.array(energies),
        stage_sq_errors=np.array(errors),
    )


def _check_tokens(tokens, n_stages_needed, codebook_sizes) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] < n_stages_needed:
        raise ShapeError(
            f"tokens must be (frames, >= {n_stages_needed}), got {tokens.shape}"
        )
    if not np.issubdtype(tokens.dtype, np.integer):
        raise DataError("tokens must be integers")
    if np.any(tokens < 0):
        raise DataError("negative token index")
    for s in range(min(tokens.shape[1], len(codebook_sizes))):
        if tokens.shape[0] and tokens[:, s].max() >= codebook_sizes[s]:
            raise DataError(
                f"token index {tokens[:, s].max()} out of range for stage {s} "
                f"(codebook size {codebook_sizes[s]})"
            )
    return tokens


def mcrvq_decode(
    tokens: np.ndarray, cbs: CodebookSet, cfg: McrvqConfig, n_stages: int
) -> np.ndarray:
    """Reconstruct latents from the first ``n_stages`` token columns.

    Partial decode below the parallel block is rejected: the parallel stages
    jointly cover the channel space, so fewer than n_parallel stages cannot
    produce a full-width latent.
    """
    if not (cfg.n_parallel <= n_stages <= cfg.n_total):
        raise UnsupportedError(
            f"n_stages must be in [{cfg.n_parallel}, {cfg.n_total}], "
            f"got {n_stages}"
        )
    cbs.validate_mcrvq(cfg)
    tokens = _check_tokens(
        tokens, n_stages, [cbs[s].size for s in range(len(cbs))]
    )
    out = np.zeros((tokens.shape[0], cfg.dim), dtype=np.float32)
    for i, (lo, hi) in enumerate(cfg.partition):
        out[:, lo:hi] = cbs[i].entries[tokens[:, i]]
    for j in range(cfg.n_parallel, n_stages):
        out += cbs[j].entries[tokens[:, j]]
    return out


def rvq_encode(z: np.ndarray, cbs: CodebookSet, n_total: int) -> QuantizationResult:
    """Plain serial residual VQ over full-width codebooks."""
    if len(cbs) != n_total:
        raise ShapeError(f"expected {n_total} codebooks, got {len(cbs)}")
    dim = cbs[0].dim
    z = _as_latents(z, dim)
    for s, cb in enumerate(cbs.stages):
        if cb.dim != dim:
            raise ShapeError(f"codebook {s} dim {cb.dim} != {dim}")
    tokens = np.empty((z.shape[0], n_total), dtype=np.int32)
    residual = z.copy()
    energies = [_frame_energy(residual)]
    errors = []
    for s in range(n_total):
        idx, emb = vq_nearest(cbs[s], residual)
        tokens[:, s] = idx
        errors.append(_frame_energy(residual - emb))
        residual -= emb
        energies.append(_frame_energy(residual))
    fused = rvq_decode(tokens, cbs, n_total)
    return QuantizationResult(
        tokens=tokens,
        fused=fused,
        stage_residual_energy=np.array(energies),
        stage_sq_errors=np.array(errors),
    )


def rvq_decode(tokens: np.ndarray, cbs: CodebookSet, n_stages: int) -> np.ndarray:
    if not (1 <= n_stages <= len(cbs)):
        raise UnsupportedError(
            f"n_stages must be in [1, {len(cbs)}], got {n_stages}"
        )
    tokens = _check_tokens(tokens, n_stages, [cb.size for cb in cbs.stages])
    out = np.zeros((tokens.shape[0], cbs[0].dim), dtype=np.float32)
    for s in range(n_stages):
        out += cbs[s].entries[tokens[:, s]]
    return out


@dataclass(frozen=True)
class TrainSchedule:
    kmeans_iters: int = 25
    ema_epochs: int = 10
    ema_decay: float = 0.99
    reseed_threshold: float = 1.0
    seed: int = 0


def _train_one_stage(
    data: np.ndarray, codebook_size: int, schedule: TrainSchedule, rng
) -> Codebook:
    """k-means++ initialization followed by EMA refinement with dead-entry
    re-seeding from random corpus rows."""
    from sklearn.cluster import KMeans

    n = data.shape[0]
    if n < codebook_size:
        raise DataError(
            f"corpus has {n} frames, need >= codebook_size {codebook_size}"
        )
    km = KMeans(
        n_clusters=codebook_size,
        init="k-means++",
        n_init=1,
        max_iter=schedule.kmeans_iters,
        random_state=int(rng.integers(2**31 - 1)),
    ).fit(data)
    cb = Codebook(entries=km.cluster_centers_.astype(np.float32))
    # seed EMA stats from the k-means assignment so entries start at a
    # fixed point of the update
    idx, _ = vq_nearest(cb, data)
    counts = np.bincount(idx, minlength=codebook_size).astype(np.float64)
    sums = np.zeros((codebook_size, cb.dim))
    np.add.at(sums, idx, data)
    cb.ema_counts, cb.ema_sums = counts, sums
    decay = schedule.ema_decay
    for _ in range(schedule.ema_epochs):
        idx, _ = vq_nearest(cb, data)
        counts = np.bincount(idx, minlength=codebook_size).astype(np.float64)
        sums = np.zeros((codebook_size, cb.dim))
        np.add.at(sums, idx, data)
        cb.ema_counts = decay * cb.ema_counts + (1 - decay) * counts
        cb.ema_sums = decay * cb.ema_sums + (1 - decay) * sums
        dead = cb.ema_counts < schedule.reseed_threshold
        entries = cb.ema_sums / np.maximum(cb.ema_counts, 1e-12)[:, None]
        if np.any(dead):
            picks = rng.integers(0, n, size=int(dead.sum()))
            entries[dead] = data[picks]
            cb.ema_counts[dead] = 1.0
            cb.ema_sums[dead] = data[picks]
        cb.entries = entries.astype(np.float32)
    return cb


def train_codebooks(
    latents: np.ndarray, cfg: McrvqConfig, schedule: TrainSchedule = TrainSchedule()
) -> CodebookSet:
    """Train an MCRVQ codebook set on a latent corpus.

    Parallel stages see their channel slice of the corpus; serial stages see
    the residuals produced by the already-trained earlier stages.
    """
    z = _as_latents(latents, cfg.dim)
    if z.shape[0] < cfg.codebook_size:
        raise DataError(
            f"corpus has {z.shape[0]} frames, need >= {cfg.codebook_size}"
        )
    rng = np.random.default_rng(schedule.seed)
    stages = []
    residual = z.copy()
    for lo, hi in cfg.partition:
        cb = _train_one_stage(z[:, lo:hi], cfg.codebook_size, schedule, rng)
        stages.append(cb)
        _, emb = vq_nearest(cb, z[:, lo:hi])
        residual[:, lo:hi] -= emb
    for _ in range(cfg.n_serial):
        cb = _train_one_stage(residual, cfg.codebook_size, schedule, rng)
        stages.append(cb)
        _, emb = vq_nearest(cb, residual)
        residual -= emb
    return CodebookSet(stages)


def train_rvq_codebooks(
    latents: np.ndarray,
    n_total: int,
    codebook_size: int,
    schedule: TrainSchedule = TrainSchedule(),
) -> CodebookSet:
    """Train a plain serial RVQ codebook set (full-width stages)."""
    z = _as_latents(latents)
    if z.shape[0] < codebook_size:
        raise DataError(f"corpus has {z.shape[0]} frames, need >= {codebook_size}")
    rng = np.random.default_rng(schedule.seed)
    stages = []
    residual = z.copy()
    for _ in range(n_total):
        cb = _train_one_stage(residual, codebook_size, schedule, rng)
        stages.append(cb)
        _, emb = vq_nearest(cb, residual)
        residual -= emb
    return CodebookSet(stages)


def quantizer_loss(result: QuantizationResult, z: np.ndarray) -> float:
    """Sum over stages of the per-frame mean squared error between each
    stage's input and its chosen embedding."""
    z = _as_latents(z)
    if result.fused.shape != z.shape:
        raise ShapeError(
            f"result fused shape {result.fused.shape} != latents {z.shape}"
        )
    return float(np.sum(result.stage_sq_errors))


def token_entropy(tokens: np.ndarray) -> np.ndarray:
    """Empirical per-stage entropy of the token distribution, in bits."""
    tokens = np.asarray(tokens)
    out = np.zeros(tokens.shape[1])
    n = tokens.shape[0]
    if n == 0:
        return out
    for s in range(tokens.shape[1]):
        counts = np.bincount(tokens[:, s])
        p = counts[counts > 0] / n
        out[s] = float(-(p * np.log2(p)).sum())
    return out


@dataclass
class ChannelProfile:
    """Captured-energy fractions for MCRVQ and RVQ over the same latents.

    Captured fraction of a stage prefix m is 1 - ||z - decode(tokens,
    1..m)||^2 / ||z||^2; per-stage captured is the drop in residual energy
    attributable to that stage alone. Zero-energy input sets the flag and
    reports all fractions as 0.
    """

    zero_energy: bool
    total_energy: float
    mcrvq_stage_captured: np.ndarray  # (n_parallel,)
    mcrvq_prefix_captured: np.ndarray  # (n_total - n_parallel + 1,) m = Nq..N
    mcrvq_entropy: np.ndarray  # (n_total,)
    rvq_stage_captured: np.ndarray  # (n_parallel,) stages 1..Nq individually
    rvq_prefix_captured: np.ndarray  # (n_total,) m = 1..N
    rvq_entropy: np.ndarray  # (n_total,)


def channel_information_profile(
    z: np.ndarray,
    mcrvq_cbs: CodebookSet,
    rvq_cbs: CodebookSet,
    cfg: McrvqConfig,
) -> ChannelProfile:
    z = _as_latents(z, cfg.dim)
    total = _frame_energy(z)
    mc = mcrvq_encode(z, mcrvq_cbs, cfg)
    rv = rvq_encode(z, rvq_cbs, cfg.n_total)
    if total <= 0.0:
        zeros_n = np.zeros(cfg.n_total)
        return ChannelProfile(
            zero_energy=True,
            total_energy=0.0,
            mcrvq_stage_captured=np.zeros(cfg.n_parallel),
            mcrvq_prefix_captured=np.zeros(cfg.n_serial + 1),
            mcrvq_entropy=token_entropy(mc.tokens),
            rvq_stage_captured=np.zeros(cfg.n_parallel),
            rvq_prefix_captured=zeros_n,
            rvq_entropy=token_entropy(rv.tokens),
        )

    def prefix_fracs(result, decode, lo_m, hi_m):
        fracs = []
        for m in range(lo_m, hi_m + 1):
            rec = decode(result.tokens, m).astype(np.float64)
            fracs.append(1.0 - _frame_energy(z - rec) / total)
        return np.array(fracs)

    mc_stage = -np.diff(mc.stage_residual_energy[: cfg.n_parallel + 1]) / total
    rv_stage = -np.diff(rv.stage_residual_energy[: cfg.n_parallel + 1]) / total
    return ChannelProfile(
        zero_energy=False,
        total_energy=total,
        mcrvq_stage_captured=mc_stage,
        mcrvq_prefix_captured=prefix_fracs(
            mc,
            lambda t, m: mcrvq_decode(t, mcrvq_cbs, cfg, m),
            cfg.n_parallel,
            cfg.n_total,
        ),
        mcrvq_entropy=token_entropy(mc.tokens),
        rvq_stage_captured=rv_stage,
        rvq_prefix_captured=prefix_fracs(
            rv, lambda t, m: rvq_decode(t, rvq_cbs, m), 1, cfg.n_total
        ),
        rvq_entropy=token_entropy(rv.tokens),
    )


# --- codebook container file ("LCCB") ------------------------------------

def save_codebooks(cbs: CodebookSet) -> bytes:
    """Serialize a codebook set: magic "LCCB", version u32 LE, then per-stage
    records (stage u16, K u32, dim u32, row-major float32 LE entries)."""
    out = [CODEBOOK_MAGIC, struct.pack("<I", CODEBOOK_VERSION)]
    for s, cb in enumerate(cbs.stages):
        out.append(struct.pack("<HII", s, cb.size, cb.dim))
        out.append(cb.entries.astype("<f4").tobytes())
    return b"".join(out)


def load_codebooks(blob: bytes) -> CodebookSet:
    if len(blob) < 8 or blob[:4] != CODEBOOK_MAGIC:
        raise FormatError("not a codebook file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CODEBOOK_VERSION:
        raise FormatError(f"unsupported codebook file version {version}")
    pos = 8
    stages = []
    while pos < len(blob):
        if pos + 10 > len(blob):
            raise DataError("truncated codebook record header")
        stage, size, dim = struct.unpack_from("<HII", blob, pos)
        pos += 10
        if stage != len(stages):
            raise FormatError(
                f"stage index {stage} out of order (expected {len(stages)})"
            )
        nbytes = size * dim * 4
        if pos + nbytes > len(blob):
            raise DataError("truncated codebook entries")
        entries = np.frombuffer(blob, dtype="<f4", count=size * dim, offset=pos)
        stages.append(Codebook(entries=entries.reshape(size, dim).copy()))
        pos += nbytes
    if not stages:
        raise DataError("codebook file contains no stages")
    return CodebookSet(stages)
