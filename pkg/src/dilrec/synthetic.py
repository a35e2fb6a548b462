"""Synthetic interaction streams with controllable preference drift.

Users carry a latent vector split into a stable half and a drifting half.
At each phase boundary the drifting half mixes with fresh noise
(sqrt(1 - m^2) * old + m * noise, with m the drift magnitude), so preference
alignment with the initial phase decays geometrically while the stable half
keeps long-term structure. Interactions are sampled per time window with
item probability proportional to softmax(user latent . item latent).

Timestamps advance :data:`WINDOW_SPAN` seconds per window, so a downstream
split with warmup_end = w * WINDOW_SPAN and period_length = WINDOW_SPAN
aligns windows and periods exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

WINDOW_SPAN = 1000


@dataclass(frozen=True)
class SyntheticDriftSpec:
    user_count: int
    item_count: int
    latent_dim: int
    phases: int
    drift: float
    interactions_per_period: int
    periods: int
    seed: int

    def validate(self) -> None:
        for name in ("user_count", "item_count", "latent_dim", "phases", "interactions_per_period", "periods"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synthetic spec: {name} must be positive")
        if self.drift < 0:
            raise ConfigError("synthetic spec: drift must be non-negative")


def phase_preferences(spec: SyntheticDriftSpec) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-phase user latent matrices plus the static item latents."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    users = rng.normal(size=(spec.user_count, spec.latent_dim))
    items = rng.normal(size=(spec.item_count, spec.latent_dim))
    drift_cols = spec.latent_dim // 2 if spec.latent_dim > 1 else 1
    m = min(spec.drift, 1.0)
    mats = [users]
    for _ in range(1, spec.phases):
        nxt = mats[-1].copy()
        noise = rng.normal(size=(spec.user_count, drift_cols))
        nxt[:, -drift_cols:] = np.sqrt(1.0 - m * m) * nxt[:, -drift_cols:] + m * noise
        mats.append(nxt)
    return mats, items


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticDriftSpec, path: str | os.PathLike) -> None:
    """Write a drifting interaction TSV; byte-identical for a fixed seed."""
    mats, items = phase_preferences(spec)
    rng = np.random.default_rng(spec.seed + 1)
    cdf_cache: dict[int, np.ndarray] = {}
    lines: list[str] = []
    for window in range(spec.periods):
        phase = window * spec.phases // spec.periods
        if phase not in cdf_cache:
            cdf_cache[phase] = np.cumsum(_softmax_rows(mats[phase] @ items.T), axis=1)
        cdf = cdf_cache[phase]
        n = spec.interactions_per_period
        users = rng.integers(0, spec.user_count, size=n)
        draws = rng.random(n)
        stamps = rng.integers(window * WINDOW_SPAN, (window + 1) * WINDOW_SPAN, size=n)
        for u, r, t in zip(users, draws, stamps):
            item = int(np.searchsorted(cdf[u], r))
            item = min(item, spec.item_count - 1)  # guard the r == 1.0 edge
            lines.append(f"u{u:05d}\ti{item:05d}\t{t}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
