import logging
from typing import NamedTuple

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph
import scipy.sparse.linalg

logger = logging.getLogger("heatnet")


class Components(NamedTuple):
    count: int
    labels: np.ndarray


def sparse_lu(J: scipy.sparse.spmatrix):
    """LU factorization of a square sparse matrix, returns ``None`` when it is singular."""
    try:
        lu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(J))
    except RuntimeError as err:
        logger.debug(f"Sparse LU failed: {err}")
        return None
    diag = np.abs(lu.U.diagonal())
    if diag.size and (not np.all(np.isfinite(diag)) or diag.min() == 0.0):
        return None
    return lu


def graph_components(num_nodes: int, tails: np.ndarray, heads: np.ndarray) -> Components:
    adj = scipy.sparse.coo_matrix(
        (np.ones(len(tails)), (tails, heads)), shape=(num_nodes, num_nodes)
    )
    count, labels = scipy.sparse.csgraph.connected_components(adj, directed=False)
    return Components(count, labels)


def weighted_laplacian_solve(
    num_nodes: int,
    tails: np.ndarray,
    heads: np.ndarray,
    conductance: np.ndarray,
    injection: np.ndarray,
    reference: np.ndarray,
) -> np.ndarray:
    """Potentials ``p`` with ``sum_e G_e (p_tail - p_head) = injection`` and ``p = 0`` at the reference nodes.

    One reference per connected component is expected.
    """
    rows = np.concatenate([tails, heads, tails, heads])
    cols = np.concatenate([tails, heads, heads, tails])
    vals = np.concatenate([conductance, conductance, -conductance, -conductance])
    L = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(num_nodes, num_nodes))
    L = L.tolil()
    rhs = np.asarray(injection, dtype=float).copy()
    for r in reference:
        L.rows[r] = [r]
        L.data[r] = [1.0]
        rhs[r] = 0.0
    return scipy.sparse.linalg.spsolve(L.tocsc(), rhs)
