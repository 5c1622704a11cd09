"""Dense symmetric-matrix numerics shared by all modules.

Symmetric matrices are plain ``numpy.ndarray`` objects kept exactly
symmetric through :func:`symmetrize`; all routines validate their inputs
and are pure, so results can be shared freely across threads.
"""

import numpy as np

# Eigenvalue threshold scale for "PSD up to solver tolerance" decisions.
# Relative scaling avoids false negatives on badly scaled SDP outputs.
PSD_RTOL = 1e-9


def _as_array(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def symmetrize(M):
    """Return the exactly symmetric part (M + M^T)/2 of a square matrix."""
    M = _as_array(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return 0.5 * (M + M.T)


def default_psd_tol(M):
    """Relative definiteness tolerance 1e-9 * (1 + max |entry|)."""
    return PSD_RTOL * (1.0 + float(np.max(np.abs(M), initial=0.0)))


def is_psd(M, tol=None):
    """True iff the smallest eigenvalue of symmetric M is >= -tol.

    With ``tol=None`` the relative default :func:`default_psd_tol` is used.
    """
    M = symmetrize(M)
    if tol is None:
        tol = default_psd_tol(M)
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    return bool(np.linalg.eigvalsh(M)[0] >= -tol)


def sym_sqrt(M):
    """Symmetric PSD square root S of M with S @ S = M.

    Eigenvalues above -tol but below zero are clamped to zero, so matrices
    that are PSD only up to solver tolerance are accepted; anything
    indefinite beyond tolerance raises ValueError.
    """
    M = symmetrize(M)
    tol = default_psd_tol(M)
    w, V = np.linalg.eigh(M)
    if w[0] < -tol:
        raise ValueError(f"matrix is not PSD: min eigenvalue {w[0]:.3e} < -{tol:.3e}")
    w = np.clip(w, 0.0, None)
    return symmetrize((V * np.sqrt(w)) @ V.T)


def inv_sqrt(M):
    """Symmetric inverse square root of a positive definite matrix."""
    M = symmetrize(M)
    tol = default_psd_tol(M)
    w, V = np.linalg.eigh(M)
    if w[0] <= tol:
        raise ValueError(f"matrix is not positive definite: min eigenvalue {w[0]:.3e}")
    return symmetrize((V / np.sqrt(w)) @ V.T)


def logdet(M):
    """log(det(M)) of a positive definite matrix via Cholesky."""
    M = symmetrize(M)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def spectral_norm(M):
    """Largest singular value of a rectangular matrix (or 2-norm of a vector)."""
    M = _as_array(M)
    if M.ndim == 1:
        return float(np.linalg.norm(M))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def min_eig(M):
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(M))[0])
