import numpy as np
import scipy.linalg


RCOND = 1e-8


def rank_revealing_lstsq(A: np.ndarray, y: np.ndarray, rcond: float = RCOND) -> tuple[np.ndarray, int]:
    """
    Least-squares solution of ``A x = y`` through a column-pivoted QR factorization.

    Directions whose diagonal entry of R falls below ``rcond`` times the
    largest one are dropped: the corresponding entries of the solution are
    zero, so nearly collinear columns do not blow up the estimate.

    :param A: Matrix of shape (n, k).
    :type A: np.ndarray
    :param y: Right-hand side of length n.
    :type y: np.ndarray
    :param rcond: Relative cutoff on the diagonal of R.
    :type rcond: float
    :return: The solution of length k and the numerical rank.
    :rtype: tuple[np.ndarray, int]
    """
    n_cols = A.shape[1]
    x = np.zeros(n_cols, dtype=np.result_type(A, y, complex))
    if n_cols == 0:
        return x, 0
    Q, R, perm = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return x, 0
    rank = int(np.sum(diag > rcond * diag[0]))
    rhs = Q[:, :rank].conj().T @ y
    x[perm[:rank]] = scipy.linalg.solve_triangular(R[:rank, :rank], rhs)
    return x, rank


def projector(A: np.ndarray, rcond: float = RCOND) -> np.ndarray:
    """Orthogonal projector onto the numerical column space of ``A`` (``A A^+``)."""
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], A.shape[0]), dtype=complex)
    Q, R, _ = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rcond * diag[0])) if diag[0] > 0 else 0
    Qr = Q[:, :rank]
    return Qr @ Qr.conj().T
