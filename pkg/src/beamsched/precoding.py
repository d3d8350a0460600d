"""Linear precoders (RZF, MRT, ZF), link gains, SINR and throughput."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .channel import ChannelMatrix

COND_WARN = 1e12
UNIT_NORM_TOL = 1e-9


class PrecoderDimensionError(ValueError):
    pass


class SingularChannelError(np.linalg.LinAlgError):
    pass


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class PrecodingMatrix:
    W: np.ndarray  # M x K, unit-norm columns
    omega: float  # trace normalisation of the raw precoder, diagnostics only
    column_user_ids: tuple[int, ...]


@dataclass(frozen=True)
class LinkGains:
    """``z[k, j] = |h_k^H w_j|^2`` for the scheduled set, in column order."""

    z: np.ndarray
    noise: float
    user_ids: tuple[int, ...]

    def index(self, user_id: int) -> int:
        try:
            return self.user_ids.index(user_id)
        except ValueError:
            raise KeyError(f"user {user_id} is not scheduled in this slot") from None


@dataclass(frozen=True)
class SlotAllocation:
    scheduled: tuple[int, ...]
    powers: np.ndarray  # W, aligned with ``scheduled``

    def power_of(self, user_id: int) -> float:
        try:
            return float(self.powers[self.scheduled.index(user_id)])
        except ValueError:
            raise KeyError(f"user {user_id} is not scheduled in this slot") from None

    def check(self, p_max: float) -> None:
        if np.any(self.powers < 0):
            raise ValueError("negative power in allocation")
        if self.powers.sum() > p_max * (1 + 1e-9):
            raise ValueError(f"power budget exceeded: {self.powers.sum()} > {p_max}")


def _as_array(H: ChannelMatrix | np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    if isinstance(H, ChannelMatrix):
        return H.H, H.column_user_ids
    H = np.asarray(H)
    return H, tuple(range(H.shape[1]))


def _unit_columns(W: np.ndarray) -> np.ndarray:
    return W / np.linalg.norm(W, axis=0, keepdims=True)


def rzf_precoder(H: ChannelMatrix | np.ndarray, p_max: float, noise: float) -> PrecodingMatrix:
    """Regularised ZF, ``H (H^H H + (noise K / p_max) I)^-1``, columns rescaled to unit norm."""
    Hm, ids = _as_array(H)
    M, K = Hm.shape
    if K > M:
        raise PrecoderDimensionError(f"{K} users exceed {M} beams")
    G = Hm.conj().T @ Hm + (noise * K / p_max) * np.eye(K)
    cond = np.linalg.cond(G)
    if cond > COND_WARN:
        warnings.warn(f"regularised Gram matrix condition number {cond:.3g}", IllConditionedWarning, stacklevel=2)
    c = cho_factor(G)
    Ginv = cho_solve(c, np.eye(K, dtype=G.dtype))
    raw = Hm @ Ginv
    omega = float(np.real(np.trace(Hm @ Ginv @ Ginv @ Hm.conj().T)))
    return PrecodingMatrix(_unit_columns(raw), omega, ids)


def mrt_precoder(H: ChannelMatrix | np.ndarray) -> PrecodingMatrix:
    Hm, ids = _as_array(H)
    return PrecodingMatrix(_unit_columns(Hm.astype(complex)), float(np.linalg.norm(Hm) ** 2), ids)


def zf_precoder(H: ChannelMatrix | np.ndarray) -> PrecodingMatrix:
    Hm, ids = _as_array(H)
    M, K = Hm.shape
    if K > M:
        raise PrecoderDimensionError(f"{K} users exceed {M} beams")
    G = Hm.conj().T @ Hm
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > 1e15:
        raise SingularChannelError(f"channel matrix is rank deficient (cond {cond:.3g})")
    if cond > COND_WARN:
        warnings.warn(f"Gram matrix condition number {cond:.3g}", IllConditionedWarning, stacklevel=2)
    try:
        raw = Hm @ np.linalg.inv(G)
    except LinAlgError as exc:
        raise SingularChannelError(str(exc)) from None
    omega = float(np.real(np.trace(raw @ raw.conj().T)))
    return PrecodingMatrix(_unit_columns(raw), omega, ids)


def rzf_batch(H: np.ndarray, p_max: float, noise: float) -> np.ndarray:
    """RZF for a stack of channel matrices ``(..., M, K)``; unit-norm columns."""
    K = H.shape[-1]
    Hh = np.conj(np.swapaxes(H, -1, -2))
    G = Hh @ H + (noise * K / p_max) * np.eye(K)
    X = np.linalg.solve(G, Hh)  # G^-1 H^H
    W = np.conj(np.swapaxes(X, -1, -2))
    return W / np.linalg.norm(W, axis=-2, keepdims=True)


def link_gain_matrix(H: np.ndarray, W: np.ndarray) -> np.ndarray:
    """|h_k^H w_j|^2 for every pair; works on stacks."""
    return np.abs(np.conj(np.swapaxes(H, -1, -2)) @ W) ** 2


def link_gains(H: ChannelMatrix | np.ndarray, P: PrecodingMatrix, noise: float) -> LinkGains:
    Hm, ids = _as_array(H)
    return LinkGains(link_gain_matrix(Hm, P.W), noise, ids)


def sinr_vector(z: np.ndarray, powers: np.ndarray, noise: float) -> np.ndarray:
    """All SINRs at once; ``z`` and ``powers`` may carry leading batch axes."""
    rx = z * powers[..., None, :]
    desired = np.diagonal(rx, axis1=-2, axis2=-1)
    return desired / (rx.sum(axis=-1) - desired + noise)


def rate_mbps(sinr: np.ndarray | float, bandwidth_mhz: float) -> np.ndarray | float:
    return bandwidth_mhz * np.log2(1.0 + np.asarray(sinr))


def sinr(k: int, gains: LinkGains, alloc: SlotAllocation) -> float:
    i = gains.index(k)
    p = np.array([alloc.power_of(u) for u in gains.user_ids])
    interference = float(p @ gains.z[i] - p[i] * gains.z[i, i])
    return p[i] * gains.z[i, i] / (interference + gains.noise)


def instantaneous_throughput(k: int, gains: LinkGains, alloc: SlotAllocation, bandwidth_mhz: float) -> float:
    return float(rate_mbps(sinr(k, gains, alloc), bandwidth_mhz))


def aggregated_throughput(user_id: int, slots: Iterable) -> float:
    """Served volume (Mb, 1 s slots) of ``user_id`` over slot results.

    Each slot needs a ``throughput`` mapping of user id to Mbps.
    """
    total = 0.0
    for s in slots:
        rates: Mapping[int, float] = s.throughput
        total += rates.get(user_id, 0.0)
    return total


def equal_powers(k: int, p_max: float) -> np.ndarray:
    return np.full(k, p_max / k)


def sum_rate(z: np.ndarray, powers: np.ndarray, noise: float, bandwidth_mhz: float) -> np.ndarray | float:
    return rate_mbps(sinr_vector(z, powers, noise), bandwidth_mhz).sum(axis=-1)


def fixed_powers(k: int, p_max: float, num_beams: int, rule: str) -> np.ndarray:
    if rule == "equal":
        return equal_powers(k, p_max)
    if rule == "per_beam":
        return np.full(k, p_max / num_beams)
    raise ValueError(f"unknown fixed power rule {rule!r}")

