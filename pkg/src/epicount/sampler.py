"""Block-wise adaptive random-walk Metropolis and chain diagnostics."""

from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Sequence

import numpy as np

from epicount.errors import SamplerError

_LOG = logging.getLogger(__name__)

# Robbins-Monro step for the log proposal scale during burn-in.
ADAPT_RATE = 0.6


class RwmOptions(NamedTuple):
    n_draws: int = 2000
    burn_in: int = 1000
    thin: int = 1
    initial_scale: float = 0.1
    target_accept: float | None = None


class SampleBlock(NamedTuple):
    name: str
    index: np.ndarray


class ChainResult(NamedTuple):
    draws: np.ndarray
    log_density: np.ndarray
    acceptance: np.ndarray
    scales: np.ndarray
    block_names: tuple[str, ...]
    stuck_blocks: tuple[str, ...]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.acceptance)) if self.acceptance.size else 0.0


def _target(size: int, target_accept: float | None) -> float:
    if target_accept is not None:
        return target_accept
    return 0.44 if size == 1 else 0.234


def rwm_sample(
    log_density: Callable[[np.ndarray], float],
    init,
    blocks: Sequence[SampleBlock],
    opts: RwmOptions,
    rng: np.random.Generator,
) -> ChainResult:
    """Metropolis-within-Gibbs with one isotropic normal proposal per block.

    Each block's proposal scale adapts towards the target acceptance rate
    during burn-in only; afterwards scales are frozen so the kept draws come
    from a fixed (reversible) kernel.
    """
    if opts.n_draws < 1 or opts.burn_in < 0 or opts.thin < 1:
        raise SamplerError(
            "options", "Need n_draws >= 1, burn_in >= 0 and thin >= 1."
        )
    if opts.initial_scale < 0:
        raise SamplerError("options", "Proposal scale must be >= 0.")
    x = np.array(init, dtype=float)
    current = float(log_density(x))
    if not np.isfinite(current):
        raise SamplerError("init", "Initial state has zero posterior density.")

    n_blocks = len(blocks)
    scales = np.full(n_blocks, float(opts.initial_scale))
    accepted = np.zeros(n_blocks)
    n_keep = opts.n_draws
    draws = np.empty((n_keep, x.size))
    trace = np.empty(n_keep)
    total = opts.burn_in + n_keep * opts.thin
    kept = 0
    for it in range(total):
        sampling = it >= opts.burn_in
        for b, block in enumerate(blocks):
            proposal = x.copy()
            proposal[block.index] += scales[b] * rng.standard_normal(block.index.size)
            value = float(log_density(proposal))
            log_u = np.log(rng.uniform())
            accept = np.isfinite(value) and log_u < value - current
            if accept:
                x = proposal
                current = value
            if sampling:
                accepted[b] += accept
            else:
                step = ADAPT_RATE / np.sqrt(it + 1.0)
                target = _target(block.index.size, opts.target_accept)
                scales[b] *= np.exp(step * (float(accept) - target))
        if sampling and (it - opts.burn_in) % opts.thin == opts.thin - 1:
            draws[kept] = x
            trace[kept] = current
            kept += 1

    acceptance = accepted / (n_keep * opts.thin)
    names = tuple(block.name for block in blocks)
    stuck = tuple(
        name for name, rate, scale in zip(names, acceptance, scales)
        if rate == 0.0 and scale > 0
    )
    for name in stuck:
        _LOG.warning("Sampler block '%s' accepted no proposals after burn-in.", name)
    return ChainResult(draws, trace, acceptance, scales, names, stuck)


def split_rhat(chains) -> np.ndarray:
    """Split-chain potential scale reduction per coordinate.

    chains has shape (m, n, P); each chain is split in halves before the
    between/within comparison. Constant coordinates give 1.0.
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    m, n, p = arr.shape
    half = n // 2
    if half < 2:
        raise SamplerError("too_short", "Need at least four draws per chain.")
    halves = np.concatenate([arr[:, :half], arr[:, n - half :]], axis=0)
    within = np.mean(np.var(halves, axis=1, ddof=1), axis=0)
    between = np.var(np.mean(halves, axis=1), axis=0, ddof=1)
    pooled = (half - 1) / half * within + between
    out = np.ones(p)
    flat = within == 0
    out[~flat] = np.sqrt(pooled[~flat] / within[~flat])
    out[flat & (between > 0)] = np.inf
    return out
