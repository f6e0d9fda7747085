"""Compiled inner loops of the block-coordinate sweep.

Every kernel works in place on C-contiguous float64 arrays.  Acceptance of
a backtracked step compares the restricted objective through a sum of
per-entry differences rather than two large totals, so decreases far below
the magnitude of the objective are still resolved.

``stats`` accumulates: [updates, backtracked, rejected, max |step|].

Only a row kernel exists: updating columns of ``R`` is the same operation on
the transposed problem ``(R.T, L.T, A.T)``, which keeps memory access
contiguous in both phases.
"""
from numba import njit


@njit(cache=True, inline="always")
def _viol(a, lo, hi):
    return min(a - lo, 0.0) + max(a - hi, 0.0)


@njit(cache=True, inline="always")
def _sq_change(a, s, lo, hi):
    # squared violation after moving a by s, minus before; exact form when
    # the entry stays on the same side of its interval
    d_old = _viol(a, lo, hi)
    d_new = _viol(a + s, lo, hi)
    if d_old != 0.0 and d_new != 0.0 and (d_old < 0.0) == (d_new < 0.0):
        return s * (2.0 * d_old + s)
    return d_new * d_new - d_old * d_old


@njit(cache=True, inline="always")
def _shrink(g, step, change):
    # minimiser of the parabola through phi(0), phi'(0) = g and phi(step),
    # as a fraction of step, safeguarded to [0.1, 0.5]
    denom = 2.0 * (change - g * step)
    frac = -g * step / denom if denom > 0.0 else 0.5
    return min(max(frac, 0.1), 0.5)


@njit(cache=True)
def row_block(L, R, A, lo, hi, rows, choice, nu, backtrack, max_halvings, stats):
    n_cols = A.shape[1]
    for k in range(rows.size):
        i = rows[k]
        q = choice[k]
        g = 0.0
        curv = nu
        for j in range(n_cols):
            d = _viol(A[i, j], lo[i, j], hi[i, j])
            if d != 0.0:
                rq = R[q, j]
                g += d * rq
                curv += rq * rq
        ell = L[i, q]
        g += nu * ell
        if g == 0.0:
            continue
        step = -g / curv
        if backtrack:
            # the candidate is written into A while its effect is summed, and
            # undone on rejection; acceptance is the common case
            accepted = False
            for h in range(max_halvings + 1):
                change = 0.5 * nu * step * (2.0 * ell + step)
                for j in range(n_cols):
                    a = A[i, j]
                    s = step * R[q, j]
                    change += 0.5 * _sq_change(a, s, lo[i, j], hi[i, j])
                    A[i, j] = a + s
                if change <= 0.0:
                    accepted = True
                    if h > 0:
                        stats[1] += 1.0
                    break
                for j in range(n_cols):
                    A[i, j] -= step * R[q, j]
                step *= _shrink(g, step, change)
            if not accepted:
                stats[2] += 1.0
                continue
        else:
            for j in range(n_cols):
                A[i, j] += step * R[q, j]
        L[i, q] = ell + step
        stats[0] += 1.0
        if abs(step) > stats[3]:
            stats[3] = abs(step)


@njit(cache=True)
def hinge_terms(A, lo, hi, present):
    """Return (sum of squared violations, present entries inside, present entries)."""
    total = 0.0
    inside = 0
    n_present = 0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            d = _viol(A[i, j], lo[i, j], hi[i, j])
            total += d * d
            if present[i, j]:
                n_present += 1
                if d == 0.0:
                    inside += 1
    return total, inside, n_present
