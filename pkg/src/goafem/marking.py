"""Dorfler bulk marking with linear-time binning.

The marked set satisfies  sum_{T in M} eta(T)^2 >= theta^2 * sum eta^2.
Elements are binned geometrically by squared indicator; whole bins are
taken from the top, and only the last (partial) bin is sorted, so the
result coincides with the sorted-prefix minimizer while staying linear
in the typical case.
"""

from __future__ import annotations

import numpy as np


class MarkingError(Exception):
    pass


def dorfler_mark(field, theta, bin_count=32):
    """Smallest (near-minimal) element set with the Dorfler property.

    Returns a set of mesh element ids.  All-zero indicators yield the
    empty set, for which the property holds vacuously.
    """
    if not (0.0 < theta <= 1.0):
        raise MarkingError(f"theta must lie in (0, 1], got {theta}")
    eta2 = np.asarray(field.eta, dtype=float) ** 2
    ids = np.asarray(field.elem_ids)
    total = float(eta2.sum())
    if total <= 0.0:
        return set()
    target = theta * theta * total

    top = float(eta2.max())
    floor = top * 2.0 ** -30
    above = eta2 >= floor
    # geometric bins spanning [floor, top]; bin 0 is the topmost
    with np.errstate(divide="ignore"):
        binno = np.floor(np.log2(top / np.where(above, eta2, top))
                         * (bin_count / 30.0)).astype(int)
    binno = np.clip(binno, 0, bin_count - 1)

    chosen = []
    acc = 0.0
    order = np.argsort(binno[above], kind="stable")
    idx_above = np.nonzero(above)[0][order]
    bins_sorted = binno[idx_above]
    start = 0
    done = False
    while start < len(idx_above) and not done:
        stop = start
        bval = bins_sorted[start]
        while stop < len(idx_above) and bins_sorted[stop] == bval:
            stop += 1
        bin_idx = idx_above[start:stop]
        bin_sum = float(eta2[bin_idx].sum())
        if acc + bin_sum < target:
            chosen.append(bin_idx)
            acc += bin_sum
            start = stop
            continue
        # partial bin: sort it descending (value, then ascending id)
        key = np.lexsort((ids[bin_idx], -eta2[bin_idx]))
        need = target - acc
        run = np.cumsum(eta2[bin_idx[key]])
        k = int(np.searchsorted(run, need * (1.0 - 1e-14)) + 1)
        k = min(k, len(key))
        chosen.append(bin_idx[key[:k]])
        acc += float(run[k - 1])
        done = True
    if acc < target:
        # everything above the floor was insufficient; admit the rest
        below = np.nonzero(~above)[0]
        key = np.lexsort((ids[below], -eta2[below]))
        run = acc + np.cumsum(eta2[below[key]])
        k = int(np.searchsorted(run, target * (1.0 - 1e-14)) + 1)
        k = min(k, len(key))
        chosen.append(below[key[:k]])

    marked_idx = np.concatenate(chosen) if chosen else np.zeros(0, dtype=int)
    marked = {int(ids[i]) for i in marked_idx}
    ok, _ratio = verify_dorfler(field, marked, theta)
    if not ok:
        raise MarkingError("marking failed to reach the Dorfler bulk")
    return marked


def union_mark(mp, md, fields=None):
    """The union rule M = M_p | M_d; both sets from one mesh generation."""
    if fields is not None:
        fp, fd = fields
        if fp.space is not fd.space:
            raise MarkingError("marked sets come from different generations")
    return set(mp) | set(md)


def verify_dorfler(field, marked, theta):
    """(passes, achieved ratio) of the bulk criterion for a marked set."""
    eta2 = np.asarray(field.eta, dtype=float) ** 2
    total = float(eta2.sum())
    if total <= 0.0:
        return True, 1.0
    pos = field.space._leaf_pos
    got = float(sum(eta2[pos[int(t)]] for t in marked))
    ratio = got / total
    return ratio >= theta * theta * (1.0 - 1e-12), ratio


def minimal_cardinality(values2, theta):
    """Sorted-prefix oracle: minimal #elements reaching the bulk sum."""
    v = np.sort(np.asarray(values2, dtype=float))[::-1]
    total = v.sum()
    if total <= 0.0:
        return 0
    run = np.cumsum(v)
    return int(np.searchsorted(run, theta * theta * total * (1.0 - 1e-14)) + 1)
