"""Cross-domain retrieval ranking and precision@k."""

import numpy as np

from .exceptions import KTooLargeError
from .tensor import cosine_similarity

DEFAULT_KS = (1, 5, 10, 15)


def _top_k(sims, k):
    """First ``k`` columns of the stable descending argsort of each row of ``sims``."""
    n, m = sims.shape
    if k >= m:
        return np.argsort(-sims, axis=1, kind="stable")[:, :k]
    part = np.argpartition(-sims, k - 1, axis=1)[:, :k]
    vals = np.take_along_axis(sims, part, axis=1)
    # order candidates by (-similarity, index) to match the stable sort
    idx = np.lexsort((part, -vals), axis=1)
    out = np.take_along_axis(part, idx, axis=1)
    kth = np.take_along_axis(sims, out[:, -1:], axis=1)
    # rows with a tie at the cut may have picked a larger index; sort those fully
    tied = np.flatnonzero((sims >= kth).sum(axis=1) > k)
    if tied.size:
        out[tied] = np.argsort(-sims[tied], axis=1, kind="stable")[:, :k]
    return out


def rank_retrieval(queries, gallery, exclude=None):
    """Gallery indices per query, by descending cosine similarity.

    Ties go to the smaller gallery index (stable sort). ``exclude`` may give
    one gallery index per query to drop from its ranking, e.g. the query
    itself when query and gallery sets coincide; the result is then a
    ragged list instead of an array.
    """
    sims = cosine_similarity(queries, gallery)
    order = np.argsort(-sims, axis=1, kind="stable")
    if exclude is None:
        return order
    exclude = np.asarray(exclude)
    return [row[row != e] for row, e in zip(order, exclude)]


def precision_at_k(ranking, query_label, gallery_labels, k):
    """Fraction of the top ``k`` retrieved items sharing ``query_label``."""
    ranking = np.asarray(ranking)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(ranking):
        raise KTooLargeError(f"k={k} exceeds gallery size {len(ranking)}")
    top = np.asarray(gallery_labels)[ranking[:k]]
    return float(np.mean(top == query_label))


def mean_precision(queries, gallery, query_labels, gallery_labels, ks=DEFAULT_KS,
                   exclude_self=False):
    """Mean P@k over all queries, as ``{k: value}``."""
    sims = cosine_similarity(queries, gallery)
    size = sims.shape[1]
    if exclude_self:
        sims[np.arange(len(sims)), np.arange(len(sims))] = -np.inf
        size -= 1
    for k in ks:
        if k < 1:
            raise ValueError("k must be >= 1")
        if k > size:
            raise KTooLargeError(f"k={k} exceeds gallery size {size}")
    order = _top_k(sims, max(ks))
    hits = np.asarray(gallery_labels)[order] == np.asarray(query_labels)[:, None]
    cum = np.cumsum(hits, axis=1)
    return {k: float(np.mean(cum[:, k - 1] / k)) for k in ks}


def cross_domain_precision(emb_a, emb_b, labels_a, labels_b, ks=DEFAULT_KS):
    """P@k for A->B, B->A and their mean."""
    ab = mean_precision(emb_a, emb_b, labels_a, labels_b, ks)
    ba = mean_precision(emb_b, emb_a, labels_b, labels_a, ks)
    mean = {k: (ab[k] + ba[k]) / 2.0 for k in ks}
    return {"a_to_b": ab, "b_to_a": ba, "mean": mean}


class RetrievalEvaluator:
    """Holds evaluation-only labels; training code receives just this callable."""

    def __init__(self, labels_a, labels_b, ks=DEFAULT_KS):
        self._labels_a = np.asarray(labels_a)
        self._labels_b = np.asarray(labels_b)
        self.ks = tuple(ks)

    def __call__(self, emb_a, emb_b):
        return cross_domain_precision(emb_a, emb_b, self._labels_a, self._labels_b, self.ks)
