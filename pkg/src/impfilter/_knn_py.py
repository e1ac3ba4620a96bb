"""Pure-numpy nearest-neighbour kernel (fallback for ``_knn_ext``)."""
import numpy as np


def knn_query(X, scores, queries, L):
    """Return (estimates, neighbour indices, squared distances) for each query.

    Neighbours are ordered by ascending squared distance, lower buffer index
    first on ties. The accumulation order matches the compiled kernel exactly.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    P, n = X.shape
    if queries.shape[1] != n:
        raise ValueError(f"query dimension {queries.shape[1]} != buffer dimension {n}")
    if scores.shape[0] != P:
        raise ValueError("scores and buffer samples differ in length")
    if L < 1 or L > P:
        raise ValueError(f"L={L} out of range for buffer of {P}")

    d2 = np.zeros((queries.shape[0], P))
    for j in range(n):
        diff = X[None, :, j] - queries[:, j, None]
        d2 += diff * diff
    order = np.argsort(d2, axis=1, kind="stable")[:, :L]
    acc = np.zeros(queries.shape[0])
    for l in range(L):
        acc = acc + scores[order[:, l]]
    return acc / L, order.astype(np.int64), np.take_along_axis(d2, order, axis=1)
