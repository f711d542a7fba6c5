"""Error characterisation of a multiplier config against the exact one."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import booth, kernels

CHUNK = 1 << 16


def hamming_distance(w1: int, w2: int) -> int:
    return ((w1 ^ w2) & 0xFFFF_FFFF).bit_count()


def hamming_distances(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.bitwise_xor(w1.astype(np.uint32), w2.astype(np.uint32)))


@dataclass(frozen=True)
class ErrorReport:
    config: str
    n_samples: int
    seed: int
    tau: float
    error_rate: float
    mabe: float
    mre: float
    rmsre: float
    pred: float
    hd_sum: int
    n_relative: int  # samples entering MRE / RMSRE / PRED
    n_excluded: int  # exact result zero or non-finite, or approx non-finite

    def as_dict(self) -> dict:
        return asdict(self)


def sample_operands(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform 32-bit patterns with NaN/inf operands redrawn.

    Subnormals and zeros are kept.  The whole stream is drawn up front, so
    later chunking never changes which pairs are used.
    """
    rng = np.random.default_rng(seed)
    ops = rng.integers(0, 1 << 32, size=(2, n), dtype=np.uint64).astype(np.uint32)
    while True:
        bad = (ops & np.uint32(0x7F80_0000)) == np.uint32(0x7F80_0000)
        n_bad = int(bad.sum())
        if not n_bad:
            break
        ops[bad] = rng.integers(0, 1 << 32, size=n_bad, dtype=np.uint64).astype(np.uint32)
    return ops[0], ops[1]


def characterize(cfg, n: int, seed: int = 0, tau: float = 1.0) -> ErrorReport:
    if n < 1:
        raise ValueError("need at least one sample")
    if not tau >= 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    cfg = booth.get_config(cfg)
    a, b = sample_operands(n, seed)
    exact_m = kernels.compiled("exact")
    approx_m = kernels.compiled(cfg)

    n_wrong = hd_sum = n_rel = n_within = 0
    rel_sum = rel_sq = 0.0
    for lo in range(0, n, CHUNK):
        ca, cb = a[lo : lo + CHUNK], b[lo : lo + CHUNK]
        ex = exact_m.multiply(ca, cb)
        ap = ex if cfg.is_exact else approx_m.multiply(ca, cb)
        n_wrong += int((ex != ap).sum())
        hd_sum += int(hamming_distances(ex, ap).sum())
        ev = ex.view(np.float32).astype(np.float64)
        av = ap.view(np.float32).astype(np.float64)
        ok = np.isfinite(ev) & (ev != 0) & np.isfinite(av)
        rel = (ev[ok] - av[ok]) / ev[ok]
        n_rel += int(ok.sum())
        rel_sum += math.fsum(rel)
        rel_sq += math.fsum(rel * rel)
        n_within += int((np.abs(rel) <= tau).sum())

    if n_rel:
        mre = rel_sum / n_rel
        rmsre = math.sqrt(rel_sq / n_rel)
        pred = 100.0 * n_within / n_rel
    else:
        mre = rmsre = pred = math.nan
    return ErrorReport(
        config=cfg.name,
        n_samples=n,
        seed=seed,
        tau=tau,
        error_rate=n_wrong / n,
        mabe=hd_sum / n,
        mre=mre,
        rmsre=rmsre,
        pred=pred,
        hd_sum=hd_sum,
        n_relative=n_rel,
        n_excluded=n - n_rel,
    )


TABLE_COLUMNS = ("config", "ER%", "MABE", "MRE", "RMSRE", "PRED")


def table_row(r: ErrorReport) -> list[str]:
    return [
        r.config,
        f"{100 * r.error_rate:.3f}",
        f"{r.mabe:.4f}",
        f"{r.mre:.6e}",
        f"{r.rmsre:.6e}",
        f"{r.pred:.2f}",
    ]
