"""Two-qubit collective-spin operators on the basis {|ee>, |eg>, |ge>, |gg>}.

Pauli normalization: sigma_z has eigenvalues +-1 and sigma_minus = |g><e|, so
the collective S_z takes the values -2, 0, +2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-10

# single-qubit basis order: index 0 = |e>, index 1 = |g>
_SM = np.array([[0, 0], [1, 0]], dtype=complex)  # |g><e|
_SZ = np.diag([1.0, -1.0]).astype(complex)
_ID2 = np.eye(2, dtype=complex)

EE, EG, GE, GG = 0, 1, 2, 3

SINGLET = np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / np.sqrt(2.0)
TRIPLET_PLUS = np.array([0.0, 1.0, 1.0, 0.0], dtype=complex) / np.sqrt(2.0)


def ket(label: str) -> np.ndarray:
    """State vector for one of 'ee', 'eg', 'ge', 'gg', '+', '-'."""
    if label == "+":
        return TRIPLET_PLUS.copy()
    if label == "-":
        return SINGLET.copy()
    idx = {"ee": EE, "eg": EG, "ge": GE, "gg": GG}[label]
    v = np.zeros(4, dtype=complex)
    v[idx] = 1.0
    return v


def projector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


@dataclass(frozen=True)
class OperatorCatalog:
    sigma_minus: tuple[np.ndarray, np.ndarray]
    sigma_z: tuple[np.ndarray, np.ndarray]
    S_plus: np.ndarray
    S_minus: np.ndarray
    S_x: np.ndarray
    S_y: np.ndarray
    S_z: np.ndarray
    P_singlet: np.ndarray

    @property
    def sigma_plus(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(s.conj().T for s in self.sigma_minus)

    @property
    def sigma_x(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(s + s.conj().T for s in self.sigma_minus)


def build_operator_catalog() -> OperatorCatalog:
    sm = (np.kron(_SM, _ID2), np.kron(_ID2, _SM))
    sz = (np.kron(_SZ, _ID2), np.kron(_ID2, _SZ))
    s_minus = sm[0] + sm[1]
    s_plus = s_minus.conj().T
    return OperatorCatalog(
        sigma_minus=sm,
        sigma_z=sz,
        S_plus=s_plus,
        S_minus=s_minus,
        S_x=s_plus + s_minus,
        S_y=-1j * (s_plus - s_minus),
        S_z=sz[0] + sz[1],
        P_singlet=projector(SINGLET),
    )


CATALOG = build_operator_catalog()

# columns are |ee>, |+>, |->, |gg> in computational coordinates
SINGLET_TRIPLET_U = np.column_stack([ket("ee"), TRIPLET_PLUS, SINGLET, ket("gg")])


def to_singlet_triplet_basis(m: np.ndarray) -> np.ndarray:
    """Express a 4x4 operator in the ordered basis {|ee>, |+>, |->, |gg>}."""
    m = np.asarray(m)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
    U = SINGLET_TRIPLET_U
    return U.conj().T @ m @ U


def hermitian_eigen_min(m: np.ndarray, tol: float = HERMITIAN_TOL) -> float:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if dev > tol:
        raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3e})")
    return float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T
