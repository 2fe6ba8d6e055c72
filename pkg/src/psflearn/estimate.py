"""Two-stage estimation of the PSF model from measured targets.

Stage 1 fits per-band wavefront coefficients to SFR curves; stage 2 fits
R/B shifts to chromatic-area differences.  Both run band by band from the
image centre outward.  Once a band is done its coefficients are frozen into
the output model; its targets stay in the loss at reduced weight so the
shared surrogate keeps serving it while it warm-starts the next band.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .forward import SFRModel
from .measure import MeasurementSet, MissingMeasurement
from .optics import CAOperator, CHANNELS, DEFAULT_KERNEL, PSFKernel, ShiftVector, shift_phase
from .pupil import BasisKind, BasisSpec, WavefrontModel

log = logging.getLogger(__name__)


class NumericFailure(ArithmeticError):
    pass


class ConfigError(ValueError):
    pass


class IncompleteInput(ValueError):
    pass


@dataclass
class EstimationConfig:
    delta_H: float = 0.05
    H_schedule: list | None = None
    iters_per_band: int = 300
    learning_rate: float = 1e-2
    gradient_mode: str = "analytic"
    fd_eps: float = 1e-4
    seed: int = 0
    pupil_n: int = 64
    pad: int = 2
    kernel_size: int = DEFAULT_KERNEL
    freq_count: int = 64
    phi_set: tuple = tuple(np.deg2rad([0.0, 45.0, 90.0, 135.0]))
    basis: str = "proposed"
    curriculum: bool = True
    small_interval: bool = True
    replay_weight: float = 0.1
    replay_per_iter: int = 1
    hidden: tuple = (32, 32)
    init_scale: float = 0.05
    resolve_orientation: bool = True
    symmetric: bool = True
    first_band_scale: int = 3
    min_azimuths: int = 3
    shift_iters: int = 150
    shift_lr: float = 1e-2
    shift_eps: float = 1e-3

    def __post_init__(self):
        self.phi_set = tuple(float(p) for p in self.phi_set)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if not 0.03 < self.delta_H < 0.1:
            raise ConfigError(f"delta_H must lie in (0.03, 0.1), got {self.delta_H}")
        if self.gradient_mode not in ("analytic", "finite_difference"):
            raise ConfigError(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.iters_per_band < 1 or self.learning_rate <= 0 or self.fd_eps <= 0:
            raise ConfigError("iters_per_band, learning_rate and fd_eps must be positive")
        BasisKind(self.basis)
        if self.H_schedule is not None:
            s = np.asarray(self.H_schedule, dtype=float)
            if s.ndim != 1 or s.size < 2 or np.any(np.diff(s) <= 0) or s[0] != 0.0 or s[-1] != 1.0:
                raise ConfigError("H_schedule must be increasing band edges from 0 to 1")

    @property
    def band_edges(self) -> np.ndarray:
        if self.H_schedule is not None:
            return np.asarray(self.H_schedule, dtype=float)
        n = max(1, int(round(1.0 / self.delta_H)))
        return np.linspace(0.0, 1.0, n + 1)

    @property
    def freqs(self) -> np.ndarray:
        return np.linspace(0.0, 0.5, self.freq_count)

    def basis_spec(self) -> BasisSpec:
        return BasisSpec.from_name(self.basis)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phi_set"] = list(self.phi_set)
        d["hidden"] = list(self.hidden)
        return d


# --------------------------------------------------------------------------
# small numpy MLP and Adam


class MLP:
    """tanh MLP with a linear head; parameters are a flat list of arrays."""

    def __init__(self, sizes, rng: np.random.Generator, init_scale: float = 0.05):
        self.params = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            scale = init_scale if last else np.sqrt(1.0 / a)
            self.params.append(rng.normal(0.0, scale, size=(a, b)))
            self.params.append(np.zeros(b))

    def forward(self, X):
        h = np.asarray(X, dtype=float)
        acts = [h]
        n = len(self.params) // 2
        for i in range(n):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < n - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        grads = [None] * len(self.params)
        n = len(self.params) // 2
        d = dout
        for i in reversed(range(n)):
            if i < n - 1:
                d = d * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = acts[i].T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            d = d @ self.params[2 * i].T
        return grads

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size


class Adam:
    def __init__(self, params, lr=1e-2, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class CoeffSurrogate:
    """Maps (H, H^2) to per-channel coefficient vectors ``(3, T)``."""

    def __init__(self, basis: BasisSpec, hidden=(32, 32), seed: int = 0, init_scale: float = 0.05,
                 symmetric: bool = True):
        self.basis = basis
        self.T = len(basis)
        self.hidden = tuple(hidden)
        self.net = MLP((2, *self.hidden, 3 * self.T), np.random.default_rng(seed), init_scale)
        # Rotational symmetry of the lens: azimuth-odd terms grow as H and the
        # cos 2theta part of each (p,2,0)/(p,0,2) pair as H^2.  Seidel terms
        # carry their H powers already.
        self._odd = np.zeros(self.T, dtype=bool)
        self._pairs = []
        if symmetric and basis.kind is BasisKind.PROPOSED:
            self._odd[[j for j, t in enumerate(basis.terms) if _is_odd(basis, t)]] = True
            idx = {t: j for j, t in enumerate(basis.terms)}
            self._pairs = [(idx[(p, 2, 0)], idx[(p, 0, 2)]) for p, q, r in basis.terms
                           if (q, r) == (2, 0) and (p, 0, 2) in idx]

    @staticmethod
    def features(Hs) -> np.ndarray:
        H = np.atleast_1d(np.asarray(Hs, dtype=float))
        return np.stack([H, H * H], axis=1)

    def output_map(self, H: float) -> np.ndarray:
        """``(T, T)`` map from raw head outputs to coefficients of one channel."""
        A = np.eye(self.T)
        A[self._odd, self._odd] = H
        for a, b in self._pairs:
            A[a, b] = H * H
            A[b, b] = -H * H
            A[b, a] = 1.0
        return A

    def forward(self, Hs):
        """Coefficients ``(B, 3T)`` plus the backward cache."""
        Hs = np.atleast_1d(np.asarray(Hs, dtype=float))
        raw, acts = self.net.forward(self.features(Hs))
        maps = np.stack([self.output_map(H) for H in Hs])
        out = np.einsum("bij,bcj->bci", maps, raw.reshape(len(Hs), 3, self.T))
        return out.reshape(len(Hs), -1), (acts, maps)

    def backward(self, cache, dout):
        acts, maps = cache
        d = np.einsum("bij,bci->bcj", maps, dout.reshape(len(maps), 3, self.T))
        return self.net.backward(acts, d.reshape(len(maps), -1))

    def coeffs(self, Hs) -> np.ndarray:
        out, _ = self.forward(Hs)
        return out.reshape(-1, 3, self.T)

    def odd_outputs(self, channel: int) -> np.ndarray:
        """Head indices of terms that change sign under pupil point reflection."""
        idx = [j for j, t in enumerate(self.basis.terms) if _is_odd(self.basis, t)]
        return channel * self.T + np.array(idx, dtype=int)

    def reflect(self, channel: int, opt: Adam | None = None):
        """Negate the odd terms of one channel, point-reflecting its PSF."""
        idx = self.odd_outputs(channel)
        W, b = self.net.params[-2], self.net.params[-1]
        W[:, idx] *= -1
        b[idx] *= -1
        if opt is not None:
            opt.m[-2][:, idx] *= -1
            opt.m[-1][idx] *= -1


def _is_odd(basis: BasisSpec, term) -> bool:
    if basis.kind is BasisKind.PROPOSED:
        _, q, r = term
        return (q + r) % 2 == 1
    return term[2] % 2 == 1


class ShiftSurrogate:
    """Maps (H, channel indicator) to (dx, dy); R is +1, B is -1."""

    def __init__(self, hidden=(16, 16), seed: int = 0, init_scale: float = 0.01):
        self.net = MLP((2, *hidden, 2), np.random.default_rng(seed), init_scale)

    @staticmethod
    def features(H) -> np.ndarray:
        return np.array([[H, 1.0], [H, -1.0]])

    def shifts(self, H: float) -> np.ndarray:
        out, _ = self.net.forward(self.features(H))
        return out


# --------------------------------------------------------------------------
# targets


@dataclass
class BandTargets:
    """SFR targets of one band, all channels at a shared H and azimuth list."""

    band: int
    H: float
    phis: np.ndarray
    values: np.ndarray
    skew: np.ndarray

    @property
    def n_phi(self) -> int:
        return self.phis.size


def band_targets(ms: MeasurementSet, band: int) -> BandTargets:
    recs = ms.sfr_in_band(band)
    if not recs:
        raise MissingMeasurement(f"no SFR targets in band {band}")
    keys = sorted({round(r.nominal_phi if r.nominal_phi is not None else r.phi, 9) for r in recs})
    phis, vals, skew, Hs = [], [], [], []
    for key in keys:
        group = {r.channel: r for r in recs
                 if round(r.nominal_phi if r.nominal_phi is not None else r.phi, 9) == key}
        if set(group) != set(CHANNELS):
            raise IncompleteInput(f"band {band}, phi {key}: channels {sorted(group)}")
        phis.append(group["G"].phi)
        Hs.append(group["G"].H)
        vals.append([group[c].values for c in CHANNELS])
        skew.append([group[c].lsf_skew for c in CHANNELS])
    vals = np.transpose(np.asarray(vals), (1, 0, 2))
    skew = np.asarray(skew).T
    return BandTargets(band, float(np.mean(Hs)), np.asarray(phis), vals, skew)


def synthetic_measurements(model: WavefrontModel, phis, band_edges=None, pupil_n: int = 64,
                           pad: int = 2, k: int = DEFAULT_KERNEL, shifts=None,
                           half_window: float = 8.0, freqs=None) -> MeasurementSet:
    """Targets straight from the forward model at band centres (no imaging)."""
    from .optics import SFRCurve, CAMeasure, psf_from_wavefront, interp_shift, shift_psf, delta_ca
    from .pupil import eval_opd, make_pupil_grid
    edges = model.band_edges if band_edges is None else np.asarray(band_edges, dtype=float)
    fm = SFRModel(model.basis, phis, freqs, pupil_n, pad, k)
    grid = make_pupil_grid(pupil_n)
    ms = MeasurementSet(edges, ca_half_window=half_window)
    for b in range(edges.size - 1):
        H = 0.5 * (edges[b] + edges[b + 1])
        C = np.stack([model.coeffs_at(H, ci) for ci in range(3)])
        sfr, _ = fm.forward(C, [H] * 3)
        K = fm.kernels(C, [H] * 3)
        for ci, ch in enumerate(CHANNELS):
            for j, phi in enumerate(fm.phis):
                ms.sfr.append(SFRCurve(fm.freqs, sfr[ci, j], H, float(phi), ch, band=b,
                                       nominal_phi=float(phi), lsf_skew=_skew(K[ci], phi)))
        if shifts is not None:
            sh = interp_shift(np.asarray(shifts), model.band_edges, H)
            psfs = {"G": PSFKernel(K[1], H, "G")}
            for ci, ch in ((0, "R"), (2, "B")):
                psfs[ch] = shift_psf(PSFKernel(K[ci], H, ch), ShiftVector(*sh[0 if ch == "R" else 1]))
            for phi in fm.phis:
                m = delta_ca(psfs, float(phi), half_window, H)
                m.band, m.nominal_phi = b, float(phi)
                ms.ca.append(m)
    return ms


def _skew(K: np.ndarray, phi: float) -> float:
    """Skewness of the kernel mass projected on the edge normal ``u(phi)``."""
    k = K.shape[-1]
    d = np.arange(k) - k // 2
    t = d[None, :] * np.sin(phi) - d[:, None] * np.cos(phi)
    m = K.sum()
    mu = (K * t).sum() / m
    var = (K * (t - mu) ** 2).sum() / m
    return float((K * (t - mu) ** 3).sum() / m / max(var, 1e-12) ** 1.5)


# --------------------------------------------------------------------------
# losses


class SFRObjective:
    """L1 between modelled and target SFR for one band (mean over frequency,
    summed over azimuths and channels)."""

    def __init__(self, basis: BasisSpec, cfg: EstimationConfig):
        self.fm = SFRModel(basis, cfg.phi_set, cfg.freqs, cfg.pupil_n, cfg.pad, cfg.kernel_size)
        self.F = cfg.freq_count

    def loss(self, C: np.ndarray, bt: BandTargets) -> float:
        sfr, _ = self.fm.forward(C, [bt.H] * 3, bt.phis)
        return float(np.abs(sfr - bt.values).sum() / self.F)

    def loss_and_grad(self, C: np.ndarray, bt: BandTargets):
        sfr, cache = self.fm.forward(C, [bt.H] * 3, bt.phis)
        r = sfr - bt.values
        g = self.fm.backward(cache, np.sign(r) / self.F)
        return float(np.abs(r).sum() / self.F), g


def sfr_loss(surrogate: CoeffSurrogate, band: int, targets: MeasurementSet,
             cfg: EstimationConfig | None = None, objective: SFRObjective | None = None) -> float:
    cfg = cfg or EstimationConfig()
    objective = objective or SFRObjective(surrogate.basis, cfg)
    bt = band_targets(targets, band)
    return objective.loss(surrogate.coeffs(bt.H)[0], bt)


def finite_diff_gradient(loss, params, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(params, dtype=float)
    g = np.empty_like(p)
    for i in range(p.size):
        old = p.flat[i]
        p.flat[i] = old + eps
        fp = loss(p)
        p.flat[i] = old - eps
        fm = loss(p)
        p.flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericFailure(f"non-finite loss at parameter {i}")
        g.flat[i] = (fp - fm) / (2 * eps)
    return g


class CAObjective:
    """L1 between modelled and measured chromatic-area differences."""

    def __init__(self, k: int, half_window: float):
        self.op = CAOperator(k, half_window)

    def prepare(self, kernels: np.ndarray, records):
        """Cache kernel spectra and G areas for a band's records."""
        self.F = np.fft.fft2(kernels[[0, 2]])
        self.k = kernels.shape[-1]
        self.recs = [(float(r.phi), r.delta_ca_r, r.delta_ca_b) for r in records]
        self.ca_g = [self.op(kernels[1], phi) for phi, _, _ in self.recs]

    def predict(self, s: np.ndarray) -> np.ndarray:
        """``(n_rec, 2)`` predicted (dCA_R, dCA_B) for shifts ``s[(R,B), (dx,dy)]``."""
        k = self.k
        if np.any(np.abs(s) >= k / 4):
            raise NumericFailure(f"shift estimate {s} left the kernel support")
        ph = shift_phase(k, np.stack([-s[:, 1], s[:, 0]], axis=1))
        K = np.fft.ifft2(self.F * ph).real
        out = np.empty((len(self.recs), 2))
        for i, (phi, _, _) in enumerate(self.recs):
            out[i] = self.op(K, phi) - self.ca_g[i]
        return out

    def loss(self, s: np.ndarray) -> float:
        target = np.array([[r, b] for _, r, b in self.recs])
        return float(np.abs(self.predict(s) - target).sum())


def ca_loss(shifts: ShiftSurrogate, stage1_psfs: np.ndarray, band: int, targets: MeasurementSet) -> float:
    """``stage1_psfs`` is the band's ``(3, k, k)`` kernel triple (R, G, B)."""
    stage1_psfs = np.asarray(stage1_psfs)
    if stage1_psfs.shape[0] != 3:
        raise IncompleteInput("stage-1 kernels must hold R, G and B")
    recs = targets.ca_in_band(band)
    if not recs:
        raise MissingMeasurement(f"no CA targets in band {band}")
    H = float(np.mean([r.H for r in recs]))
    obj = CAObjective(stage1_psfs.shape[-1], targets.ca_half_window)
    obj.prepare(stage1_psfs, recs)
    return obj.loss(shifts.shifts(H))


# --------------------------------------------------------------------------
# reports


@dataclass
class FitReport:
    stage: str
    basis: str
    band_edges: list
    order: list
    initial_loss: list
    start_loss: list
    final_loss: list
    traces: list
    coeffs: dict | None = None
    shifts: list | None = None
    reflections: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(**d)


def _band_order(n: int, cfg: EstimationConfig) -> list[int]:
    if cfg.curriculum:
        return list(range(n))
    return [int(i) for i in np.random.default_rng(cfg.seed + 7919).permutation(n)]


def _model_skew(fm: SFRModel, C: np.ndarray, bt: BandTargets) -> np.ndarray:
    K = fm.kernels(C, [bt.H] * 3)
    return np.array([[_skew(K[ci], phi) for phi in bt.phis] for ci in range(3)])


# --------------------------------------------------------------------------
# stage 1


def fit_monochromatic(targets: MeasurementSet, cfg: EstimationConfig | None = None):
    """Curriculum fit of the coefficient surrogate; returns ``(surrogate, report, model)``.

    ``model`` holds the frozen per-band coefficients, the estimate proper.
    """
    cfg = cfg or EstimationConfig()
    t0 = time.perf_counter()
    basis = cfg.basis_spec()
    edges = np.asarray(targets.band_edges, dtype=float)
    n_bands = edges.size - 1
    centres = 0.5 * (edges[1:] + edges[:-1])
    sur = CoeffSurrogate(basis, cfg.hidden, cfg.seed, cfg.init_scale, cfg.symmetric)
    obj = SFRObjective(basis, cfg)
    opt = Adam(sur.net.params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    warnings = []

    bts: dict[int, BandTargets] = {}
    for b in range(n_bands):
        try:
            bt = band_targets(targets, b)
        except MissingMeasurement:
            warnings.append(f"band {b}: no SFR targets; coefficients taken from the surrogate")
            continue
        if bt.n_phi < cfg.min_azimuths:
            warnings.append(f"band {b}: only {bt.n_phi} azimuth(s) measured; coefficients taken from the surrogate")
            continue
        bts[b] = bt
    if not bts:
        raise MissingMeasurement("no SFR targets at all")
    initial = [obj.loss(sur.coeffs(bts[b].H)[0], bts[b]) if b in bts else None for b in range(n_bands)]

    def step(batch):
        """One Adam step on a weighted list of (BandTargets, weight)."""
        Hs = np.array([bt.H for bt, _ in batch])
        out, cache = sur.forward(Hs)
        C = out.reshape(len(batch), 3, sur.T)
        dout = np.zeros_like(out)
        total = 0.0
        for i, (bt, w) in enumerate(batch):
            if cfg.gradient_mode == "analytic":
                L, g = obj.loss_and_grad(C[i], bt)
            else:
                L = obj.loss(C[i], bt)
                g = finite_diff_gradient(lambda c: obj.loss(c.reshape(3, -1), bt), C[i].ravel(),
                                         cfg.fd_eps).reshape(C[i].shape)
            if not np.isfinite(L):
                raise NumericFailure(f"non-finite SFR loss in band {bt.band}")
            total += w * L
            dout[i] = w * g.ravel()
            if i == 0:
                lead = L
        opt.step(sur.backward(cache, dout))
        return total, lead

    frozen = np.zeros((n_bands, 3, len(basis)))
    done: list[int] = []
    start, final, traces, flips = [None] * n_bands, [None] * n_bands, [[] for _ in range(n_bands)], []

    if not cfg.small_interval:
        # whole field at once: each step draws bands uniformly, same per-step cost
        avail = sorted(bts)
        n_iter = cfg.iters_per_band * n_bands
        per = 1 + cfg.replay_per_iter
        for b in avail:
            start[b] = obj.loss(sur.coeffs(bts[b].H)[0], bts[b])
        for it in range(n_iter):
            pick = rng.choice(len(avail), size=min(per, len(avail)), replace=False)
            L, _ = step([(bts[avail[i]], 1.0) for i in pick])
            traces[avail[pick[0]]].append(L)
        order = list(range(n_bands))
    else:
        order = _band_order(n_bands, cfg)
        for b in order:
            if b in bts:
                bt = bts[b]
                start[b] = obj.loss(sur.coeffs(bt.H)[0], bt)
                n_iter = cfg.iters_per_band * (cfg.first_band_scale if not done else 1)
                # constant-rate Adam hovers around the minimum; keep the best visit
                best, best_params = np.inf, None
                for it in range(n_iter):
                    batch = [(bt, 1.0)]
                    if done and cfg.replay_weight > 0:
                        for j in rng.choice(len(done), size=min(cfg.replay_per_iter, len(done)), replace=False):
                            batch.append((bts[done[j]], cfg.replay_weight))
                    snapshot = [p.copy() for p in sur.net.params]
                    L, lead = step(batch)
                    if lead < best:
                        best, best_params = lead, snapshot
                    traces[b].append(L)
                if best_params is not None and obj.loss(sur.coeffs(bt.H)[0], bt) > best:
                    for p, q in zip(sur.net.params, best_params):
                        p[...] = q
                if cfg.resolve_orientation:
                    C = sur.coeffs(bt.H)[0]
                    ms = _model_skew(obj.fm, C, bt)
                    for ci in range(3):
                        agree = float(np.sum(ms[ci] * bt.skew[ci]))
                        if agree < 0:
                            sur.reflect(ci, opt)
                            flips.append({"band": int(b), "channel": CHANNELS[ci], "agreement": agree})
                done.append(b)
                frozen[b] = sur.coeffs(bt.H)[0]

    # bands without targets take the surrogate once every measured band is in
    for b in range(n_bands):
        if not cfg.small_interval or b not in bts:
            frozen[b] = sur.coeffs(bts[b].H if b in bts else centres[b])[0]

    for b in range(n_bands):
        if b in bts:
            final[b] = obj.loss(frozen[b], bts[b])
            if traces[b] and len(traces[b]) > 1 and traces[b][-1] >= traces[b][0]:
                warnings.append(f"band {b}: loss did not decrease over the band budget")
    model = WavefrontModel(basis, edges, frozen, {"source": "fit_monochromatic", "seed": cfg.seed})
    report = FitReport("monochromatic", basis.kind.value, edges.tolist(), order, initial, start, final,
                       traces, coeffs=model.to_dict(), reflections=flips, warnings=warnings,
                       wall_time=time.perf_counter() - t0, config=cfg.to_dict())
    return sur, report, model


# --------------------------------------------------------------------------
# stage 2


def fit_shifts(stage1: WavefrontModel, targets: MeasurementSet, cfg: EstimationConfig | None = None):
    """Curriculum fit of R/B shifts to CA targets; returns ``(surrogate, report, shifts)``."""
    cfg = cfg or EstimationConfig()
    t0 = time.perf_counter()
    edges = np.asarray(targets.band_edges, dtype=float)
    n_bands = edges.size - 1
    centres = 0.5 * (edges[1:] + edges[:-1])
    sur = ShiftSurrogate(seed=cfg.seed + 1)
    opt = Adam(sur.net.params, cfg.shift_lr)
    fm = SFRModel(stage1.basis, cfg.phi_set, cfg.freqs, cfg.pupil_n, cfg.pad, cfg.kernel_size)
    obj = CAObjective(cfg.kernel_size, targets.ca_half_window)
    warnings = []
    out = np.zeros((n_bands, 2, 2))
    initial, start, final = [None] * n_bands, [None] * n_bands, [None] * n_bands
    traces = [[] for _ in range(n_bands)]
    eps = cfg.shift_eps
    empty = []
    for b in _band_order(n_bands, cfg):
        recs = targets.ca_in_band(b)
        if not recs:
            warnings.append(f"band {b}: no CA targets; shifts taken from the surrogate")
            empty.append(b)
            continue
        H = float(np.mean([r.H for r in recs]))
        C = np.stack([stage1.coeffs_at(H, ci) for ci in range(3)])
        obj.prepare(fm.kernels(C, [H] * 3), recs)
        initial[b] = obj.loss(np.zeros((2, 2)))
        start[b] = obj.loss(sur.shifts(H))
        X = sur.features(H)
        for it in range(cfg.shift_iters):
            s, acts = sur.net.forward(X)
            L = obj.loss(s)
            if not np.isfinite(L):
                raise NumericFailure(f"non-finite CA loss in band {b}")
            g = finite_diff_gradient(lambda p: obj.loss(p.reshape(2, 2)), s.ravel(), eps).reshape(2, 2)
            opt.step(sur.net.backward(acts, g))
            traces[b].append(L)
        out[b] = sur.shifts(H)
        final[b] = obj.loss(out[b])
    for b in empty:
        out[b] = sur.shifts(centres[b])
    report = FitReport("shifts", stage1.basis.kind.value, edges.tolist(), _band_order(n_bands, cfg), initial,
                       start, final, traces, shifts=out.tolist(), warnings=warnings,
                       wall_time=time.perf_counter() - t0, config=cfg.to_dict())
    return sur, report, out
