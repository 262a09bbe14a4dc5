"""Streaming estimation of the principal eigenvector of a covariance.

Samples are ``x = q z + w`` with z a standard normal scalar and w isotropic
normal noise of level sigma, so the covariance is ``q q^T + sigma^2 I``. The
stochastic rule ``y <- (1 - a) y + a <y/|y|, x> x`` has its fixed point at
``(|q|^2 + sigma^2) q/|q|``; the block rule averages ``<z, x> x`` over a
block and renormalizes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import RngStream, StepSchedule
from ..errors import GossipError, ValidationError


class PcaStream:
    """Gaussian samples with a planted direction q. Owns its generator."""

    def __init__(self, q, sigma: float, seed: int):
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or not np.linalg.norm(q) > 0:
            raise ValidationError("q must be a nonzero vector")
        if sigma < 0:
            raise ValidationError("sigma must be nonnegative")
        self.q, self.sigma, self.seed = q, float(sigma), int(seed)
        self.rng = RngStream(seed).substream("pca")

    @classmethod
    def planted(cls, d: int, sigma: float, seed: int) -> PcaStream:
        """Unit q drawn uniformly from the sphere with the same seed."""
        g = RngStream(seed).substream("pca:q").standard_normal(d)
        return cls(g / np.linalg.norm(g), sigma, seed)

    @property
    def d(self) -> int:
        return len(self.q)

    @property
    def covariance(self) -> np.ndarray:
        return np.outer(self.q, self.q) + self.sigma ** 2 * np.eye(self.d)

    def sample(self, n: int) -> np.ndarray:
        z = self.rng.standard_normal(n)
        w = self.rng.standard_normal((n, self.d)) * self.sigma
        return z[:, None] * self.q + w

    def __iter__(self):
        while True:
            yield from self.sample(4096)


def angle_to_q(y, q) -> float:
    """arccos |<y/|y|, q/|q|>|, which ignores the sign of y."""
    y, q = np.asarray(y, dtype=float), np.asarray(q, dtype=float)
    c = abs(y @ q) / (np.linalg.norm(y) * np.linalg.norm(q))
    return float(np.arccos(min(c, 1.0)))


def pca_sa_step(y, x, a: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    ny = np.linalg.norm(y)
    if not ny > 0:
        raise GossipError("y collapsed to zero")
    x = np.asarray(x, dtype=float)
    return (1.0 - a) * y + a * (y @ x / ny) * x


def pca_block_step(z, block) -> np.ndarray:
    block = np.asarray(block, dtype=float)
    if block.ndim != 2 or len(block) == 0:
        raise ValidationError("block must be a nonempty (B, d) array")
    zh = (block @ np.asarray(z, dtype=float)) @ block / len(block)
    n = np.linalg.norm(zh)
    if not n > 0:
        raise GossipError("block average is zero")
    return zh / n


@dataclass(frozen=True, eq=False)
class PcaRun:
    """Final estimate, and the angle to q and the norm of the estimate at
    each recorded sample count."""

    y: np.ndarray
    n: np.ndarray
    angle: np.ndarray
    norm: np.ndarray

    def csv_text(self) -> str:
        rows = ["n,angle_to_q,norm"] + [f"{k},{a:.10g},{m:.10g}" for k, a, m in zip(self.n, self.angle, self.norm)]
        return "\n".join(rows) + "\n"


def run_pca_sa(stream: PcaStream, T: int, schedule: StepSchedule = StepSchedule.harmonic(1.0),
               record_every: int = 1000, chunk: int = 4000) -> PcaRun:
    """The stochastic rule over T samples, starting from y = first sample.

    The stepsize for the update with sample n + 1 is ``schedule(n)``, n >= 1.
    """
    if T < 2:
        raise ValidationError("need T >= 2")
    y = stream.sample(1)[0]
    ns, ang, nrm = [1], [angle_to_q(y, stream.q)], [float(np.linalg.norm(y))]
    n = 1
    while n < T:
        xs = stream.sample(min(chunk, T - n))
        for x in xs:
            y = pca_sa_step(y, x, schedule(n))
            n += 1
            if n % record_every == 0 or n == T:
                ns.append(n)
                ang.append(angle_to_q(y, stream.q))
                nrm.append(float(np.linalg.norm(y)))
    return PcaRun(y=y, n=np.array(ns), angle=np.array(ang), norm=np.array(nrm))


def run_pca_block(stream: PcaStream, T: int, B: int, z0=None) -> PcaRun:
    """T / B block steps from a random unit start (or ``z0``); one record per block."""
    if B < 1 or T % B:
        raise ValidationError("T must be a positive multiple of B")
    if z0 is None:
        g = RngStream(stream.seed).substream("pca:z0").standard_normal(stream.d)
        z0 = g / np.linalg.norm(g)
    z = np.asarray(z0, dtype=float) / np.linalg.norm(z0)
    ns, ang, nrm = [0], [angle_to_q(z, stream.q)], [1.0]
    for k in range(T // B):
        z = pca_block_step(z, stream.sample(B))
        ns.append((k + 1) * B)
        ang.append(angle_to_q(z, stream.q))
        nrm.append(float(np.linalg.norm(z)))
    return PcaRun(y=z, n=np.array(ns), angle=np.array(ang), norm=np.array(nrm))
