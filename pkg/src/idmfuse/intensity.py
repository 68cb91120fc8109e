"""Band-dependent nonlinear intensity components and injection gains.

For band ``k`` the intensity is a linear mix of all upsampled MS bands plus
products of band ``k`` with its spectral neighbours::

    I_k = sum_i omega[i, k] * M_i + sum_{j in spec[k]} b[k][j] * (M_k * M_j)

Band indices are 0-based throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateInputError, InvariantError, SingularSystemError
from .raster import as_multiband, as_raster

DEFAULT_RIDGE = 1e-8
# eigenvalue ratio below which an unregularized normal matrix counts as singular
SINGULAR_RCOND = 1e-12


@dataclass(frozen=True)
class CrossTermSpec:
    """For each destination band, the neighbour bands whose product enters its intensity."""

    neighbors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        L = len(self.neighbors)
        nb = tuple(tuple(int(j) for j in row) for row in self.neighbors)
        for k, row in enumerate(nb):
            for j in row:
                if not 0 <= j < L or j == k:
                    raise InvariantError(f"invalid cross-term neighbour {j} for band {k}")
            if len(set(row)) != len(row):
                raise InvariantError(f"duplicate neighbour for band {k}")
        object.__setattr__(self, "neighbors", nb)

    @classmethod
    def adjacent(cls, n_bands: int) -> "CrossTermSpec":
        """Band k pairs with k-1 and k+1 where they exist."""
        return cls(tuple(
            tuple(j for j in (k - 1, k + 1) if 0 <= j < n_bands) for k in range(n_bands)
        ))

    @property
    def n_bands(self) -> int:
        return len(self.neighbors)

    def __getitem__(self, k: int) -> tuple[int, ...]:
        return self.neighbors[k]


@dataclass
class BandWeights:
    """``omega[i, k]`` is band i's share of intensity k; ``cross[k][n]`` multiplies
    ``M_k * M_j`` for ``j = spec[k][n]``."""

    omega: np.ndarray
    cross: list[np.ndarray]

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.cross = [np.asarray(c, dtype=np.float64).reshape(-1) for c in self.cross]
        L = self.omega.shape[0]
        if self.omega.shape != (L, L) or len(self.cross) != L:
            raise InvariantError(f"omega {self.omega.shape} and {len(self.cross)} cross rows disagree")
        if not np.all(np.isfinite(self.omega)) or not all(np.all(np.isfinite(c)) for c in self.cross):
            raise InvariantError("band weights must be finite")

    def check(self, spec: CrossTermSpec):
        if spec.n_bands != self.omega.shape[0]:
            raise InvariantError(f"spec covers {spec.n_bands} bands, weights {self.omega.shape[0]}")
        for k, c in enumerate(self.cross):
            if len(c) != len(spec[k]):
                raise InvariantError(f"band {k}: {len(c)} cross coefficients for {len(spec[k])} neighbours")

    def theta(self, k: int) -> np.ndarray:
        """Packed coefficient vector of band ``k``: omega column then cross terms."""
        return np.concatenate([self.omega[:, k], self.cross[k]])

    def to_dict(self, spec: CrossTermSpec) -> dict:
        self.check(spec)
        return {
            "bands": int(self.omega.shape[0]),
            "omega": self.omega.reshape(-1).tolist(),
            "cross": {
                f"{k}:{j}": float(c)
                for k, row in enumerate(spec.neighbors)
                for j, c in zip(row, self.cross[k])
            },
        }

    def to_json(self, spec: CrossTermSpec) -> str:
        return json.dumps(self.to_dict(spec), indent=2)

    @classmethod
    def from_dict(cls, d: dict, spec: CrossTermSpec) -> "BandWeights":
        L = d["bands"]
        omega = np.asarray(d["omega"], dtype=np.float64).reshape(L, L)
        cross = [[d["cross"][f"{k}:{j}"] for j in spec[k]] for k in range(L)]
        return cls(omega, cross)


def design_matrix(ms_up: np.ndarray, spec: CrossTermSpec, k: int, fit_cross: bool = True) -> np.ndarray:
    """Columns: every band, then ``M_k * M_j`` for each neighbour ``j`` of ``k``."""
    cols = [b.reshape(-1) for b in ms_up]
    if fit_cross:
        cols += [(ms_up[k] * ms_up[j]).reshape(-1) for j in spec[k]]
    return np.stack(cols, axis=1)


def solve_normal_equations(X: np.ndarray, y: np.ndarray, ridge: float, band=None) -> np.ndarray:
    """Minimize ``|y - X theta|^2 + lam |theta|^2`` with ``lam = ridge * mean(diag(X^T X))``."""
    if X.shape[0] < X.shape[1]:
        raise SingularSystemError(
            f"band {band}: {X.shape[0]} pixels for {X.shape[1]} unknowns", band=band
        )
    G = X.T @ X
    rhs = X.T @ y
    if ridge == 0.0:
        ev = np.linalg.eigvalsh(G)
        if ev[-1] <= 0.0 or ev[0] <= SINGULAR_RCOND * ev[-1]:
            raise SingularSystemError(
                f"band {band}: singular normal matrix (eigenvalue ratio "
                f"{ev[0] / ev[-1] if ev[-1] > 0 else 0.0:.3g}); retry with ridge > 0",
                band=band,
            )
    else:
        G = G + ridge * np.mean(np.diag(G)) * np.eye(G.shape[0])
    try:
        return scipy.linalg.solve(G, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"band {band}: normal equations failed: {exc}", band=band) from exc


def estimate_weights(ms_up, pan_lp, spec: CrossTermSpec, ridge: float = DEFAULT_RIDGE,
                     fit_cross: bool = True) -> BandWeights:
    """Least-squares fit of every band's intensity to the low-passed PAN.

    Each band is an independent problem over the same target.  With
    ``fit_cross=False`` only the linear weights are fitted and all cross
    coefficients are exactly zero.
    """
    ms_up = as_multiband(ms_up, "ms_up")
    pan_lp = as_raster(pan_lp, "pan_lp")
    if ms_up.shape[1:] != pan_lp.shape:
        raise InvariantError(f"ms_up {ms_up.shape[1:]} and pan_lp {pan_lp.shape} differ")
    if spec.n_bands != ms_up.shape[0]:
        raise InvariantError(f"spec covers {spec.n_bands} bands, image has {ms_up.shape[0]}")
    if ridge < 0:
        raise InvariantError(f"ridge must be >= 0, got {ridge}")
    L = ms_up.shape[0]
    y = pan_lp.reshape(-1)
    omega = np.zeros((L, L))
    cross = []
    for k in range(L):
        X = design_matrix(ms_up, spec, k, fit_cross)
        theta = solve_normal_equations(X, y, ridge, band=k)
        omega[:, k] = theta[:L]
        cross.append(theta[L:] if fit_cross else np.zeros(len(spec[k])))
    return BandWeights(omega, cross)


def nonlinear_intensity(ms_up, w: BandWeights, spec: CrossTermSpec, k: int) -> np.ndarray:
    ms_up = as_multiband(ms_up, "ms_up")
    L = ms_up.shape[0]
    if not 0 <= k < L:
        raise InvariantError(f"band index {k} out of range for L={L}")
    w.check(spec)
    out = np.tensordot(w.omega[:, k], ms_up, axes=1)
    for j, b in zip(spec[k], w.cross[k]):
        out = out + b * (ms_up[k] * ms_up[j])
    return out


def intensity_stack(ms_up, w: BandWeights, spec: CrossTermSpec) -> np.ndarray:
    ms_up = as_multiband(ms_up, "ms_up")
    return np.stack([nonlinear_intensity(ms_up, w, spec, k) for k in range(ms_up.shape[0])])


def detail_map(pan_k, intensity_k) -> np.ndarray:
    pan_k = as_raster(pan_k, "pan_k")
    intensity_k = as_raster(intensity_k, "intensity_k")
    if pan_k.shape != intensity_k.shape:
        raise InvariantError(f"detail map operands differ: {pan_k.shape} vs {intensity_k.shape}")
    return pan_k - intensity_k


def injection_gain(ms_up_k, intensity_k) -> float:
    """``cov(M_k, I_k) / var(I_k)`` with population statistics."""
    m = as_raster(ms_up_k, "ms_up_k")
    i = as_raster(intensity_k, "intensity_k")
    if m.shape != i.shape:
        raise InvariantError(f"gain operands differ: {m.shape} vs {i.shape}")
    di = i - i.mean()
    var = np.mean(di * di)
    if var == 0.0:
        raise DegenerateInputError("intensity component is constant; injection gain undefined")
    return float(np.mean((m - m.mean()) * di) / var)
