"""Milstein integration of the homodyne stochastic master equation.

    d rho = (-i[H, rho] + sum_m D[c_m] rho) dt + sqrt(eta) H[d] rho dW

Density matrices are propagated as real 16-vectors of coordinates in an
orthonormal Hermitian operator basis, so that every superoperator is a real
16x16 matrix and Hermiticity holds by construction. Trajectories are stacked
along the leading axis and advanced together.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .model import EffectiveModel
from .spin import CATALOG, hermitian_eigen_min

TRACE_ABORT_TOL = 1e-6
POSITIVITY_TOL = -1e-6
NOISE_BLOCK = 2048


def _hermitian_basis() -> np.ndarray:
    basis = []
    for i in range(4):
        e = np.zeros((4, 4), dtype=complex)
        e[i, i] = 1.0
        basis.append(e)
    s = 1.0 / math.sqrt(2.0)
    for i in range(4):
        for j in range(i + 1, 4):
            e = np.zeros((4, 4), dtype=complex)
            e[i, j] = e[j, i] = s
            basis.append(e)
            e = np.zeros((4, 4), dtype=complex)
            e[i, j], e[j, i] = -1j * s, 1j * s
            basis.append(e)
    return np.array(basis)


BASIS = _hermitian_basis()  # (16, 4, 4), tr(G_k G_l) = delta_kl
# coordinates: r_k = tr(G_k rho)
_TO_VEC = BASIS.conj().reshape(16, 16)


def to_vec(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    flat = rho.reshape(*rho.shape[:-2], 16)
    return (flat @ _TO_VEC.T).real


def from_vec(r: np.ndarray) -> np.ndarray:
    return np.tensordot(np.asarray(r, dtype=float), BASIS, axes=(-1, 0))


def superop_matrix(fn) -> np.ndarray:
    """Real matrix of a Hermiticity-preserving linear map on 4x4 matrices."""
    cols = [to_vec(fn(G)) for G in BASIS]
    return np.array(cols).T


def functional(X: np.ndarray) -> np.ndarray:
    """Vector w with w @ r = tr(X rho) for Hermitian X."""
    return np.array([np.trace(X @ G).real for G in BASIS])


class TrajectoryAbort(RuntimeError):
    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


SCHEMES = ("milstein", "kraus")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_final: float
    renormalize: bool = True
    record_stride: int = 100
    rng_master_seed: int = 0
    drift_step: str = "exact"
    positivity_abort: float | None = None
    scheme: str = "milstein"

    def __post_init__(self):
        if not self.dt > 0 or not self.t_final > 0:
            raise ValueError("dt and t_final must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.drift_step not in ("exact", "euler"):
            raise ValueError(f"drift_step must be 'exact' or 'euler', got {self.drift_step!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @classmethod
    def for_model(cls, model: EffectiveModel, t_final: float, *, dt_factor: float = 1e-2,
                  **kw) -> "IntegratorConfig":
        """Step of dt_factor times the fastest characteristic time of the model."""
        dt = dt_factor / model.rate_scale()
        n = max(1, int(math.ceil(t_final / dt)))
        return cls(dt=t_final / n, t_final=t_final, **kw)

    def check_against(self, model: EffectiveModel, dt_factor: float = 1e-2) -> bool:
        return self.dt <= dt_factor / model.rate_scale() * (1 + 1e-9)


@dataclass
class TrajectoryRecord:
    """One realization. ``current`` holds every step, the other series are sampled."""
    times: np.ndarray
    current: np.ndarray
    overlap: np.ndarray
    final_rho: np.ndarray
    seed: int
    index: int
    dt: float
    background: float = 0.0
    theta: float = 0.0
    noise_checksum: str = ""
    min_eigenvalue: float = 0.0
    sample_steps: np.ndarray = field(default=None, repr=False)

    @property
    def T(self) -> float:
        return self.current.size * self.dt

    @property
    def final_overlap(self) -> float:
        return float(self.overlap[-1])


def _key(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def noise_generator(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based Philox stream for one trajectory; step k consumes draw k."""
    return np.random.Generator(np.random.Philox(_key(master_seed, index)))


def wiener_increments(seed: int, n: int, dt: float, index: int = 0) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return noise_generator(seed, index).standard_normal(n) * math.sqrt(dt)


@dataclass(frozen=True)
class Propagator:
    """Superoperators of one effective model in the real 16-coordinate form."""
    L: np.ndarray        # drift
    M: np.ndarray        # rho -> d rho + rho d^dag
    w: np.ndarray        # tr((d + d^dag) rho)
    sqrt_eta: float
    trace: np.ndarray
    overlap: np.ndarray
    current_offset: float = 0.0

    @classmethod
    def from_model(cls, model: EffectiveModel) -> "Propagator":
        return cls(
            L=superop_matrix(lambda r: drift(r, model)),
            M=superop_matrix(lambda r: model.d_eff @ r + r @ model.d_eff.conj().T),
            w=functional(model.d_eff + model.d_eff.conj().T),
            sqrt_eta=math.sqrt(model.eta),
            trace=functional(np.eye(4)),
            overlap=functional(CATALOG.P_singlet),
        )

    def diffusion(self, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = R @ self.w
        return self.sqrt_eta * (R @ self.M.T - x[..., None] * R), x

    def drift_propagator(self, dt: float, mode: str = "exact") -> np.ndarray:
        """Transposed one-step drift map: exp(L dt) or the Euler map 1 + L dt."""
        if mode == "exact":
            return expm(self.L * dt).T
        return np.eye(16) + self.L.T * dt

    def step(self, R: np.ndarray, dW, dt: float,
             drift_T: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """One Milstein step for stacked coordinates R (..., 16); returns (R', <d+d^dag>)."""
        b, x = self.diffusion(R)
        xb = b @ self.w
        db_b = self.sqrt_eta * (b @ self.M.T - xb[..., None] * R - x[..., None] * b)
        dW = np.asarray(dW)[..., None]
        moved = R + (R @ self.L.T) * dt if drift_T is None else R @ drift_T
        R_new = moved + b * dW + 0.5 * db_b * (dW * dW - dt)
        return R_new, x


@dataclass(frozen=True)
class KrausStepper:
    """Completely positive form of the Milstein step.

    rho' is proportional to M rho M^dag + J(rho) dt with
    M = exp(-(iH + sum c^dag c / 2) dt) + sqrt(eta) d dy + eta d^2 (dy^2 - dt) / 2,
    dy = sqrt(eta) <d + d^dag> dt + dW and J the unmonitored part of the jump
    terms. Expanding to first order reproduces the Milstein increments; the
    map is positive for every dW, so the state stays a density matrix.
    Here d is the operator part of d_eff (its c-number part drops out).
    """
    maps: np.ndarray     # (16, 6 * 16) transposed maps [T00, T11, T22, S01, S02, S12]
    w_op: np.ndarray     # tr((d + d^dag) rho) for the operator part
    sqrt_eta: float
    dt: float

    @classmethod
    def from_model(cls, model: EffectiveModel, dt: float) -> "KrausStepper":
        eye = np.eye(4)
        c0 = np.trace(model.d_eff) / 4.0
        d = model.d_eff - c0 * eye
        eta = model.eta
        K = 1j * model.H_eff + 0.5 * sum(c.conj().T @ c for _, c in model.collapse_ops)
        M0 = expm(-K * dt)
        d2 = d @ d

        def jump(r):
            out = sum(c @ r @ c.conj().T for _, c in model.collapse_ops)
            return out - eta * d @ r @ d.conj().T

        J = superop_matrix(jump)
        if _choi_min_eigenvalue(jump) < -1e-10:
            raise ValueError("measured channel is not covered by the collapse operators")

        def pair(X, Y):
            return superop_matrix(lambda r: X @ r @ Y.conj().T + Y @ r @ X.conj().T)

        mats = [superop_matrix(lambda r: M0 @ r @ M0.conj().T) + J * dt,
                superop_matrix(lambda r: d @ r @ d.conj().T),
                superop_matrix(lambda r: d2 @ r @ d2.conj().T),
                pair(M0, d), pair(M0, d2), pair(d, d2)]
        return cls(maps=np.concatenate([m.T for m in mats], axis=1),
                   w_op=functional(d + d.conj().T), sqrt_eta=math.sqrt(eta), dt=dt)

    def step(self, R: np.ndarray, dW) -> np.ndarray:
        """Unnormalized update of stacked coordinates R (n, 16)."""
        dt, se = self.dt, self.sqrt_eta
        dy = se * (R @ self.w_op) * dt + dW
        a = se * dy
        b = 0.5 * se * se * (dy * dy - dt)
        coef = np.stack([np.ones_like(a), a * a, b * b, a, b, a * b], axis=1)
        parts = (R @ self.maps).reshape(R.shape[0], 6, 16)
        return np.einsum("nk,nkj->nj", coef, parts)


def _choi_min_eigenvalue(fn) -> float:
    choi = np.zeros((16, 16), dtype=complex)
    for i in range(4):
        for j in range(4):
            e = np.zeros((4, 4), dtype=complex)
            e[i, j] = 1.0
            choi[4 * i:4 * i + 4, 4 * j:4 * j + 4] = fn(e)
    return float(np.linalg.eigvalsh(0.5 * (choi + choi.conj().T))[0])


def drift(rho: np.ndarray, model: EffectiveModel) -> np.ndarray:
    H = model.H_eff
    out = -1j * (H @ rho - rho @ H)
    for _, c in model.collapse_ops:
        cd = c.conj().T
        cdc = cd @ c
        out = out + c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
    return out


def diffusion(rho: np.ndarray, model: EffectiveModel) -> np.ndarray:
    d = model.d_eff
    dd = d.conj().T
    x = np.trace((d + dd) @ rho).real
    return math.sqrt(model.eta) * (d @ rho + rho @ dd - x * rho)


def milstein_step(rho: np.ndarray, model: EffectiveModel, cfg: IntegratorConfig,
                  dW: float, *, renormalize: bool | None = None) -> np.ndarray:
    """Single Milstein step on a 4x4 density matrix.

    With ``cfg.drift_step == "euler"`` this is the textbook scalar-noise scheme
    rho + a dt + b dW + (b.grad b)(dW^2 - dt)/2; the default replaces a dt by the
    exact solution of the linear drift over dt.
    """
    d = model.d_eff
    dd = d.conj().T
    sq = math.sqrt(model.eta)
    dt = cfg.dt
    b = diffusion(rho, model)
    x = np.trace((d + dd) @ rho).real
    xb = np.trace((d + dd) @ b).real
    db_b = sq * (d @ b + b @ dd - x * b - xb * rho)
    if cfg.drift_step == "euler":
        moved = rho + drift(rho, model) * dt
    else:
        L = superop_matrix(lambda r: drift(r, model))
        moved = from_vec(expm(L * dt) @ to_vec(rho))
    out = moved + b * dW + 0.5 * db_b * (dW * dW - dt)
    out = 0.5 * (out + out.conj().T)
    tr = np.trace(out).real
    if abs(tr - 1.0) > TRACE_ABORT_TOL:
        raise TrajectoryAbort(f"trace deviated to {tr!r} before renormalization",
                              trace=tr, dW=dW)
    if cfg.renormalize if renormalize is None else renormalize:
        out = out / tr
    return out


def _sample_steps(n_steps: int, stride: int, extra=()) -> np.ndarray:
    steps = set(range(0, n_steps + 1, stride))
    steps.add(n_steps)
    steps.update(int(s) for s in extra if 0 <= s <= n_steps)
    return np.array(sorted(steps), dtype=np.int64)


def run_batch(model: EffectiveModel, cfg: IntegratorConfig, initial: np.ndarray,
              indices, *, extra_sample_steps=(), propagator: Propagator | None = None,
              dW: np.ndarray | None = None) -> list[TrajectoryRecord]:
    """Integrate the trajectories with the given indices side by side.

    Noise for trajectory ``i`` is drawn from ``noise_generator(seed, i)``, or taken
    from ``dW`` (shape (len(indices), n_steps)) when supplied.
    """
    indices = [int(i) for i in indices]
    n_traj = len(indices)
    prop = propagator or Propagator.from_model(model)
    dt, n_steps = cfg.dt, cfg.n_steps
    kraus = KrausStepper.from_model(model, dt) if cfg.scheme == "kraus" else None
    drift_T = None if kraus else prop.drift_propagator(dt, cfg.drift_step)
    samples = _sample_steps(n_steps, cfg.record_stride, extra_sample_steps)
    sample_pos = {int(s): k for k, s in enumerate(samples)}

    R = np.repeat(to_vec(initial)[None, :], n_traj, axis=0)
    current = np.empty((n_traj, n_steps))
    overlap = np.empty((n_traj, samples.size))
    overlap[:, 0] = R @ prop.overlap
    gens = None if dW is not None else [noise_generator(cfg.rng_master_seed, i) for i in indices]
    hashers = [hashlib.sha256() for _ in indices]
    sq = prop.sqrt_eta
    min_eig = np.zeros(n_traj)
    sqrt_dt = math.sqrt(dt)

    block = None
    for k in range(n_steps):
        kb = k % NOISE_BLOCK
        if kb == 0:
            m = min(NOISE_BLOCK, n_steps - k)
            if dW is not None:
                block = np.ascontiguousarray(dW[:, k:k + m])
            else:
                block = np.stack([g.standard_normal(m) for g in gens]) * sqrt_dt
            for h, row in zip(hashers, block):
                h.update(row.tobytes())
        dw = block[:, kb]
        if kraus is None:
            R_new, x = prop.step(R, dw, dt, drift_T)
            tr = R_new @ prop.trace
            bad = np.abs(tr - 1.0) > TRACE_ABORT_TOL
        else:
            x = R @ prop.w
            R_new = kraus.step(R, dw)
            tr = R_new @ prop.trace
            bad = ~(tr > 0)
        current[:, k] = sq * x + dw / dt
        if bad.any() or not np.all(np.isfinite(tr)):
            j = int(np.argmax(bad | ~np.isfinite(tr)))
            raise TrajectoryAbort(
                f"trajectory {indices[j]} (seed {cfg.rng_master_seed}) trace deviated to "
                f"{tr[j]!r} at step {k + 1}", seed=cfg.rng_master_seed, index=indices[j],
                step=k + 1, trace=float(tr[j]))
        if cfg.renormalize or kraus is not None:
            R_new /= tr[:, None]
        R = R_new
        pos = sample_pos.get(k + 1)
        if pos is not None:
            overlap[:, pos] = R @ prop.overlap
            ev = np.linalg.eigvalsh(from_vec(R))[:, 0]
            np.minimum(min_eig, ev, out=min_eig)
            if cfg.positivity_abort is not None and ev.min() < cfg.positivity_abort:
                j = int(np.argmin(ev))
                raise TrajectoryAbort(
                    f"trajectory {indices[j]} (seed {cfg.rng_master_seed}) lost positivity "
                    f"(min eigenvalue {ev[j]:.3e}) at step {k + 1}; reduce dt",
                    seed=cfg.rng_master_seed, index=indices[j], step=k + 1,
                    min_eigenvalue=float(ev[j]))

    final = from_vec(R)
    times = samples * dt
    records = []
    for j, idx in enumerate(indices):
        records.append(TrajectoryRecord(
            times=times, current=current[j], overlap=overlap[j], final_rho=final[j],
            seed=cfg.rng_master_seed, index=idx, dt=dt,
            background=model.derived.background_I, theta=model.params.theta,
            noise_checksum=hashers[j].hexdigest(), min_eigenvalue=float(min_eig[j]),
            sample_steps=samples))
    return records


def run_trajectory(model: EffectiveModel, cfg: IntegratorConfig, initial: np.ndarray,
                   seed: int | None = None, index: int = 0, **kw) -> TrajectoryRecord:
    if seed is not None and seed != cfg.rng_master_seed:
        cfg = replace(cfg, rng_master_seed=seed)
    return run_batch(model, cfg, initial, [index], **kw)[0]


def density_valid(rho: np.ndarray, tol: float = 1e-9) -> bool:
    herm = np.max(np.abs(rho - rho.conj().T)) < tol
    return bool(herm and abs(np.trace(rho).real - 1.0) < tol
                and hermitian_eigen_min(rho, tol=tol) > POSITIVITY_TOL)
