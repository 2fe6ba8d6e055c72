"""Exit-pupil sampling and wavefront bases.

Pupil coordinates: ``u`` is horizontal (array columns, right positive) and
``v`` is vertical (array rows, *up* positive).  The polar angle satisfies
``rho * (sin(theta), cos(theta)) == (v, u)``, so ``sin(theta)`` terms act on
the vertical pupil axis, which is the radial direction of a field point on
the +Y axis.

OPD maps are in waves; the phase applied downstream is ``2*pi*opd``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class InvalidResolution(ValueError):
    pass


class DimensionError(ValueError):
    pass


class UnsupportedTerm(ValueError):
    pass


@dataclass(frozen=True)
class PupilGrid:
    n: int
    rho: np.ndarray
    theta: np.ndarray
    aperture: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.rho * np.cos(self.theta)

    @property
    def v(self) -> np.ndarray:
        return self.rho * np.sin(self.theta)

    @property
    def mask(self) -> np.ndarray:
        return self.aperture > 0


def make_pupil_grid(n: int) -> PupilGrid:
    """Cartesian n x n lattice over [-1, 1)^2 with a hard circular aperture.

    Sample ``(n//2, n//2)`` sits exactly on the optical axis.
    """
    if int(n) != n or n < 32 or n % 2:
        raise InvalidResolution(f"pupil resolution must be an even integer >= 32, got {n}")
    n = int(n)
    step = 2.0 / n
    idx = np.arange(n) - n // 2
    u = np.broadcast_to(idx[None, :] * step, (n, n))
    v = np.broadcast_to(-idx[:, None] * step, (n, n))
    rho = np.hypot(u, v)
    theta = np.mod(np.arctan2(v, u), 2 * np.pi)
    # open disk: the closed one would keep rim samples at u = -1, v = +1 only
    aperture = (rho < 1.0).astype(float)
    for arr in (rho, theta, aperture):
        arr.setflags(write=False)
    return PupilGrid(n=n, rho=rho, theta=theta, aperture=aperture)


class BasisKind(str, Enum):
    SEIDEL = "seidel"
    PROPOSED = "proposed"


# Terms of the proposed basis: rho^p sin(theta)^q cos(theta)^r.
PROPOSED_TERMS: tuple[tuple[int, int, int], ...] = (
    (2, 2, 0), (2, 0, 2), (3, 1, 0), (3, 3, 0), (4, 2, 0),
    (4, 0, 2), (5, 1, 0), (6, 2, 0), (6, 0, 2),
)

# Seidel terms H^k rho^l sin(theta)^m; every (l, m) monomial is one of the six
# rows that split cleanly into the proposed basis.
SEIDEL_TERMS: tuple[tuple[int, int, int], ...] = (
    (0, 2, 0), (2, 2, 0), (1, 3, 1), (3, 3, 1), (3, 3, 3),
    (0, 4, 0), (2, 4, 0), (1, 5, 1), (0, 6, 0), (2, 6, 0),
)

# (l, m) -> proposed-basis terms with equal coefficients.
_SEIDEL_SPLIT: dict[tuple[int, int], tuple[tuple[int, int, int], ...]] = {
    (2, 0): ((2, 2, 0), (2, 0, 2)),
    (3, 1): ((3, 1, 0),),
    (3, 3): ((3, 3, 0),),
    (4, 0): ((4, 2, 0), (4, 0, 2)),
    (5, 1): ((5, 1, 0),),
    (6, 0): ((6, 2, 0), (6, 0, 2)),
}


@dataclass(frozen=True)
class BasisSpec:
    kind: BasisKind
    terms: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", BasisKind(self.kind))
        object.__setattr__(self, "terms", tuple(tuple(int(x) for x in t) for t in self.terms))
        if self.kind is BasisKind.PROPOSED:
            if set(self.terms) - set(PROPOSED_TERMS):
                raise UnsupportedTerm(f"terms outside the proposed set: {self.terms}")
        else:
            for k, l, m in self.terms:
                if k < m or l < m or (k - m) % 2 or (l - m) % 2:
                    raise UnsupportedTerm(f"({k},{l},{m}) is not a Seidel index triple")

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def proposed(cls) -> "BasisSpec":
        return cls(BasisKind.PROPOSED, PROPOSED_TERMS)

    @classmethod
    def seidel(cls) -> "BasisSpec":
        return cls(BasisKind.SEIDEL, SEIDEL_TERMS)

    @classmethod
    def from_name(cls, name: str) -> "BasisSpec":
        return cls.seidel() if BasisKind(name) is BasisKind.SEIDEL else cls.proposed()

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "terms": [list(t) for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(BasisKind(d["kind"]), tuple(tuple(t) for t in d["terms"]))


def basis_matrix(grid: PupilGrid, basis: BasisSpec, H: float = 0.0, where=None,
                 rotation: float = 0.0) -> np.ndarray:
    """Monomials evaluated on pupil samples, shape ``(npix, len(basis))``.

    ``where`` selects samples (boolean mask); default is the aperture.
    ``rotation`` turns the wavefront clockwise (as displayed, rows down), which
    turns the resulting PSF clockwise by the same angle.
    """
    if where is None:
        where = grid.mask
    rho, u, v = grid.rho[where], grid.u[where], grid.v[where]
    if rotation:
        cs, sn = np.cos(rotation), np.sin(rotation)
        u, v = cs * u - sn * v, sn * u + cs * v
    cols = []
    for t in basis.terms:
        if basis.kind is BasisKind.PROPOSED:
            p, q, r = t
            # rho^p sin^q cos^r == rho^(p-q-r) v^q u^r, no division at rho=0
            cols.append(rho ** (p - q - r) * v ** q * u ** r)
        else:
            k, l, m = t
            cols.append(float(H) ** k * rho ** (l - m) * v ** m)
    return np.stack(cols, axis=1) if cols else np.zeros((rho.size, 0))


def eval_opd(grid: PupilGrid, basis: BasisSpec, w, H: float = 0.0, rotation: float = 0.0) -> np.ndarray:
    """OPD in waves on the full n x n grid; zero outside the aperture.

    ``H`` only enters the Seidel kind (through ``H**k``); proposed-basis
    coefficients already carry their field dependence.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (len(basis),):
        raise DimensionError(f"expected {len(basis)} coefficients, got shape {w.shape}")
    if not 0.0 <= H <= 1.0:
        raise ValueError(f"field height {H} outside [0, 1]")
    opd = np.zeros((grid.n, grid.n))
    opd[grid.mask] = basis_matrix(grid, basis, H, rotation=rotation) @ w
    return opd


def seidel_to_proposed(seidel_w, basis: BasisSpec | None = None, H: float = 1.0) -> np.ndarray:
    """Re-express Seidel coefficients in the proposed basis at field height H.

    Each Seidel monomial maps onto one or two proposed terms that share its
    coefficient (times ``H**k``), since sin^2 + cos^2 = 1.
    """
    basis = basis or BasisSpec.seidel()
    seidel_w = np.asarray(seidel_w, dtype=float)
    if seidel_w.shape != (len(basis),):
        raise DimensionError(f"expected {len(basis)} coefficients, got shape {seidel_w.shape}")
    out = np.zeros(len(PROPOSED_TERMS))
    for (k, l, m), c in zip(basis.terms, seidel_w):
        try:
            targets = _SEIDEL_SPLIT[(l, m)]
        except KeyError:
            raise UnsupportedTerm(f"Seidel term rho^{l} sin^{m} has no proposed-basis split") from None
        for t in targets:
            out[PROPOSED_TERMS.index(t)] += c * H ** k
    return out


@dataclass
class WavefrontModel:
    """Per-band, per-channel coefficient vectors.

    ``coeffs`` has shape ``(n_bands, 3, len(basis))`` with channels ordered
    R, G, B.  Between band centres coefficients are interpolated linearly;
    outside the outermost centres the end segments are extended.
    """

    basis: BasisSpec
    band_edges: np.ndarray
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.band_edges = np.asarray(self.band_edges, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        e = self.band_edges
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("band_edges must be strictly increasing")
        if abs(e[0]) > 1e-12 or abs(e[-1] - 1.0) > 1e-12:
            raise ValueError("band_edges must span [0, 1]")
        if self.coeffs.shape != (e.size - 1, 3, len(self.basis)):
            raise DimensionError(
                f"coeffs shape {self.coeffs.shape} != {(e.size - 1, 3, len(self.basis))}")

    @property
    def n_bands(self) -> int:
        return self.band_edges.size - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.band_edges[1:] + self.band_edges[:-1])

    def band_of(self, H: float) -> int:
        return int(np.clip(np.searchsorted(self.band_edges, H, side="right") - 1, 0, self.n_bands - 1))

    def coeffs_at(self, H: float, channel: int) -> np.ndarray:
        c = self.centers
        table = self.coeffs[:, channel, :]
        if c.size == 1:
            return table[0].copy()
        i = int(np.clip(np.searchsorted(c, H) - 1, 0, c.size - 2))
        t = (H - c[i]) / (c[i + 1] - c[i])
        return (1 - t) * table[i] + t * table[i + 1]

    @classmethod
    def zeros(cls, basis: BasisSpec, band_edges) -> "WavefrontModel":
        band_edges = np.asarray(band_edges, dtype=float)
        return cls(basis, band_edges, np.zeros((band_edges.size - 1, 3, len(basis))))

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "band_edges": self.band_edges.tolist(),
            "coeffs": self.coeffs.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WavefrontModel":
        return cls(BasisSpec.from_dict(d["basis"]), np.array(d["band_edges"]),
                   np.array(d["coeffs"]), d.get("meta", {}))


def uniform_band_edges(delta_H: float) -> np.ndarray:
    n = max(1, int(round(1.0 / delta_H)))
    return np.linspace(0.0, 1.0, n + 1)
