"""Few-shot calibration of latent dimensions to physical labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

# columns whose std falls below this (relative to the largest column std) count as constant
_CONSTANT_TOL = 1e-12


@dataclass
class CalibrationFit:
    attribute: str
    weights: np.ndarray  # regression weights on standardized latent columns (no intercept)
    index: int
    scale: float
    offset: float
    n_samples: int

    def predict(self, latents) -> np.ndarray:
        """Physical value from the chosen latent dimension."""
        z = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        return self.scale * z[:, self.index] + self.offset

    def as_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "index": self.index,
            "scale": self.scale,
            "offset": self.offset,
            "weights": self.weights.tolist(),
            "n_samples": self.n_samples,
        }


def calibrate(latents, labels, attribute: str = "label", tie_tol: float = 1e-9,
              dims: Optional[Sequence[int]] = None) -> CalibrationFit:
    """Locate the latent dimension that best explains ``labels``.

    Each latent column is standardized, the labels are regressed on all of
    them (minimum-norm least squares with intercept), and the column with the
    largest absolute weight wins; near-ties (within ``tie_tol`` relative) go to
    the lowest index. Constant columns never win. An affine map from the raw
    winning column to the label is then fitted by 1-D least squares.

    ``dims`` restricts the regression to candidate columns (e.g. the model's
    active units, which need no labels to find). A trained VAE's collapsed
    units still wiggle slightly with the input; once standardized they look
    as informative as the real ones, and with fewer samples than columns the
    minimum-norm solution spreads weight onto them. Columns outside ``dims``
    get weight 0.
    """
    Z = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if Z.ndim != 2 or len(Z) != len(y):
        raise ValueError("latents must be (n, L) with one label per row")
    if len(y) < 2:
        raise ValueError("calibration needs at least two labelled samples")
    if np.ptp(y) == 0:
        raise ValueError("labels are constant; nothing to calibrate against")

    std = Z.std(axis=0)
    usable = std > _CONSTANT_TOL * max(1.0, float(std.max()))
    if dims is not None:
        chosen = np.zeros(Z.shape[1], dtype=bool)
        chosen[np.asarray(list(dims), dtype=int)] = True
        usable &= chosen
    if not usable.any():
        raise ValueError("no usable latent columns (all constant or excluded)")
    Zs = np.zeros_like(Z)
    Zs[:, usable] = (Z[:, usable] - Z[:, usable].mean(axis=0)) / std[usable]

    A = np.hstack([Zs[:, usable], np.ones((len(Z), 1))])
    theta = np.zeros(Z.shape[1])
    theta[usable] = np.linalg.lstsq(A, y, rcond=None)[0][:-1]
    mag = np.where(usable, np.abs(theta), -np.inf)
    top = mag.max()
    index = int(np.flatnonzero(mag >= top - tie_tol * max(top, 1e-300))[0])

    x = Z[:, index]
    xc = x - x.mean()
    scale = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    offset = float(y.mean() - scale * x.mean())
    return CalibrationFit(attribute, theta, index, scale, offset, len(y))


def pearson(x, y) -> float:
    """Pearson correlation; 0 when either variable is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    return float(np.dot(xc, yc) / den) if den > 0 else 0.0


def latent_correlation_profile(latents, labels: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Pearson r between every latent dimension and every labelled attribute.

    Returns ``{attribute: r vector of length L}``; constant latent dimensions
    get r = 0.
    """
    Z = np.asarray(latents, dtype=np.float64)
    Zc = Z - Z.mean(axis=0)
    znorm = np.sqrt(np.sum(Zc * Zc, axis=0))
    out = {}
    for name, y in labels.items():
        y = np.asarray(y, dtype=np.float64)
        if len(y) != len(Z):
            raise ValueError(f"attribute {name!r} has {len(y)} labels for {len(Z)} latent rows")
        yc = y - y.mean()
        ynorm = np.sqrt(np.dot(yc, yc))
        if ynorm == 0:
            raise ValueError(f"attribute {name!r} is constant")
        with np.errstate(invalid="ignore", divide="ignore"):
            r = (yc @ Zc) / (znorm * ynorm)
        r[znorm <= _CONSTANT_TOL * max(1.0, float(znorm.max()))] = 0.0
        out[name] = np.clip(r, -1.0, 1.0)
    return out


def strongest_dims(profile: Mapping[str, np.ndarray]) -> Dict[str, int]:
    """Index of the highest-|r| latent dimension per attribute (lowest index on ties)."""
    return {name: int(np.argmax(np.abs(r))) for name, r in profile.items()}
