"""Compiled event loop for single and coupled open-boundary lattice gases.

Indices: ``0 <= i < ns`` are domain sites, ``ns <= i < ns + nshell`` are
reservoir shell sites.  Every event is owned by one index (its source, or
for births from the reservoir the reservoir site) and per-owner total
rates live in a Fenwick tree.  Event actions are stored as four combined
indices ``(eta_src, eta_dst, xi_src, xi_dst)``; -1 marks an untouched copy.
Domain indices are decremented when they are a source and incremented
when they are a destination, reservoir indices are ignored.
"""

import math

import numpy as np
from numba import njit

MISANTHROPE = 0
OVERTAKING = 1

ST_DONE = 0
ST_RNG = 1
ST_MAX_EVENTS = 2
ST_ORDER = 3
ST_OVERFLOW = 4

# counters layout
C_EVENTS = 0
C_BIRTH0 = 1
C_DEATH0 = 2
C_BIRTH1 = 3
C_DEATH1 = 4
C_VIOL = 5
C_JOINT = 6
N_COUNTERS = 8

MAXE = 1024
REBUILD_EVERY = 1 << 16


@njit(cache=True)
def fw_build(tree, rates):
    n = rates.size
    tree[0] = 0.0
    for i in range(1, n + 1):
        tree[i] = rates[i - 1]
    for i in range(1, n + 1):
        j = i + (i & -i)
        if j <= n:
            tree[j] += tree[i]


@njit(cache=True, _nrt=False)
def fw_add(tree, i, delta):
    n = tree.size - 1
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & -i


@njit(cache=True, _nrt=False)
def fw_total(tree):
    n = tree.size - 1
    s = 0.0
    i = n
    while i > 0:
        s += tree[i]
        i -= i & -i
    return s


@njit(cache=True, _nrt=False)
def fw_find(tree, target):
    n = tree.size - 1
    pos = 0
    bit = 1
    while bit * 2 <= n:
        bit *= 2
    while bit > 0:
        nxt = pos + bit
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        bit //= 2
    return pos, target


@njit(cache=True, _nrt=False)
def _push(n, ev_rate, ev_act, r, a0, a1, a2, a3):
    ev_rate[n] = r
    ev_act[n, 0] = a0
    ev_act[n, 1] = a1
    ev_act[n, 2] = a2
    ev_act[n, 3] = a3
    return n + 1


@njit(cache=True, _nrt=False)
def _push_pair(n, ev_rate, ev_act, coupled, r0, r1, src, dst):
    if not coupled:
        if r0 > 0.0:
            n = _push(n, ev_rate, ev_act, r0, src, dst, -1, -1)
        return n
    m = min(r0, r1)
    if m > 0.0:
        n = _push(n, ev_rate, ev_act, m, src, dst, src, dst)
    if r0 > m:
        n = _push(n, ev_rate, ev_act, r0 - m, src, dst, -1, -1)
    if r1 > m:
        n = _push(n, ev_rate, ev_act, r1 - m, -1, -1, src, dst)
    return n


@njit(cache=True, _nrt=False)
def _enum_misanthrope(o, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ev_rate, ev_act):
    n = 0
    S = pk.size
    if o < ns:
        e0 = eta[0, o]
        e1 = eta[1, o]
        for s in range(S):
            t = nbr[o, s]
            if t < 0:
                continue
            if t < ns:
                r0 = pk[s] * B[e0, eta[0, t]]
                r1 = pk[s] * B[e1, eta[1, t]] if coupled else 0.0
            else:
                k = t - ns
                r0 = pk[s] * bminus[lamid[0, k], e0]
                r1 = pk[s] * bminus[lamid[1, k], e1] if coupled else 0.0
            n = _push_pair(n, ev_rate, ev_act, coupled, r0, r1, o, t)
    else:
        k = o - ns
        for s in range(S):
            t = nbr[o, s]
            if t < 0 or t >= ns:
                continue
            r0 = pk[s] * bplus[lamid[0, k], eta[0, t]]
            r1 = pk[s] * bplus[lamid[1, k], eta[1, t]] if coupled else 0.0
            n = _push_pair(n, ev_rate, ev_act, coupled, r0, r1, o, t)
    return n


@njit(cache=True, _nrt=False)
def _enum_overtaking_single(o, ns, eta, ray, beta, res_p, ev_rate, ev_act):
    n = 0
    A = beta.shape[0]
    J = beta.shape[1] - 1
    for a in range(A):
        if _idle(beta, a):
            continue
        if o < ns:
            P = float(eta[0, o])
        else:
            P = res_p[0, o - ns]
        if P <= 0.0:
            continue
        for k in range(1, J + 1):
            t = ray[o, a, k]
            if t < 0:
                break
            if t < ns:
                v = 1.0 - eta[0, t]
            else:
                v = 1.0 - res_p[0, t - ns]
            w = P * v
            if w > 0.0 and beta[a, k] > 0.0 and (o < ns or t < ns):
                n = _push(n, ev_rate, ev_act, beta[a, k] * w, o, t, -1, -1)
            P *= 1.0 - v
            if P <= 0.0:
                break
    return n


@njit(cache=True, _nrt=False)
def _idle(beta, a):
    for k in range(1, beta.shape[1]):
        if beta[a, k] > 0.0:
            return False
    return True


@njit(cache=True, _nrt=False)
def _fill(a, v):
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            a[i, j] = v


@njit(cache=True, _nrt=False)
def _site_joint(t, ns, eta, res_joint, q):
    # joint law of (eta(t), xi(t)) into q[2, 2]
    for e in range(2):
        for x in range(2):
            q[e, x] = 0.0 if t < ns else res_joint[t - ns, e, x]
    if t < ns:
        q[eta[0, t], eta[1, t]] = 1.0


@njit(cache=True, _nrt=False)
def _enum_overtaking_coupled(o, ns, eta, ray, beta, res_joint, ev_rate, ev_act, P, Pn, q):
    # P[i, j]: i, j = 0 running, 1..J stopped at that distance, J+1 no move
    n = 0
    A = beta.shape[0]
    J = beta.shape[1] - 1
    D = J + 1
    for a in range(A):
        if _idle(beta, a):
            continue
        _fill(P, 0.0)
        _site_joint(o, ns, eta, res_joint, q)
        for e in range(2):
            for x in range(2):
                if q[e, x] > 0.0:
                    P[0 if e == 1 else D, 0 if x == 1 else D] += q[e, x]
        if P[D, D] >= 1.0:
            continue
        for k in range(1, J + 1):
            t = ray[o, a, k]
            if t < 0:
                break
            _site_joint(t, ns, eta, res_joint, q)
            _fill(Pn, 0.0)
            for i in range(D + 1):
                for j in range(D + 1):
                    m = P[i, j]
                    if m <= 0.0:
                        continue
                    if i != 0 and j != 0:
                        Pn[i, j] += m
                        continue
                    for e in range(2):
                        for x in range(2):
                            w = q[e, x]
                            if w <= 0.0:
                                continue
                            ni = i
                            if i == 0 and e == 0:
                                ni = k
                            nj = j
                            if j == 0 and x == 0:
                                nj = k
                            Pn[ni, nj] += m * w
            for i in range(D + 1):
                for j in range(D + 1):
                    P[i, j] = Pn[i, j]
        # walkers still running found no hole in range
        for i in range(D + 1):
            for j in range(D + 1):
                if (i == 0 or j == 0) and P[i, j] > 0.0:
                    ni = D if i == 0 else i
                    nj = D if j == 0 else j
                    P[ni, nj] += P[i, j]
                    P[i, j] = 0.0
        for i in range(1, D + 1):
            for j in range(1, D + 1):
                m = P[i, j]
                if m <= 0.0:
                    continue
                if i <= J:
                    ti = ray[o, a, i]
                    e_ok = o < ns or ti < ns
                    bi = beta[a, i]
                else:
                    ti = -1
                    e_ok = False
                    bi = 0.0
                if j <= J:
                    tj = ray[o, a, j]
                    x_ok = o < ns or tj < ns
                    bj = beta[a, j]
                else:
                    tj = -1
                    x_ok = False
                    bj = 0.0
                es = o if e_ok else -1
                ed = ti if e_ok else -1
                xs = o if x_ok else -1
                xd = tj if x_ok else -1
                if i <= J and j <= J:
                    r = m * min(bi, bj)
                    if r > 0.0 and (e_ok or x_ok):
                        n = _push(n, ev_rate, ev_act, r, es, ed, xs, xd)
                    if bi > bj and e_ok:
                        n = _push(n, ev_rate, ev_act, m * (bi - bj), es, ed, -1, -1)
                    if bj > bi and x_ok:
                        n = _push(n, ev_rate, ev_act, m * (bj - bi), -1, -1, xs, xd)
                elif i <= J:
                    if bi > 0.0 and e_ok:
                        n = _push(n, ev_rate, ev_act, m * bi, es, ed, -1, -1)
                elif j <= J:
                    if bj > 0.0 and x_ok:
                        n = _push(n, ev_rate, ev_act, m * bj, -1, -1, xs, xd)
    return n


@njit(cache=True, _nrt=False)
def _enumerate(o, kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta, res_p, res_joint,
               ev_rate, ev_act, P, Pn, q):
    if kind == MISANTHROPE:
        return _enum_misanthrope(o, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ev_rate, ev_act)
    if coupled:
        return _enum_overtaking_coupled(o, ns, eta, ray, beta, res_joint, ev_rate, ev_act, P, Pn, q)
    return _enum_overtaking_single(o, ns, eta, ray, beta, res_p, ev_rate, ev_act)


@njit(cache=True)
def owner_rates(kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta, res_p, res_joint, rates):
    ev_rate = np.zeros(MAXE)
    ev_act = np.zeros((MAXE, 4), dtype=np.int64)
    D = beta.shape[1] + 1
    P = np.zeros((D, D))
    Pn = np.zeros((D, D))
    q = np.zeros((2, 2))
    for o in range(rates.size):
        n = _enumerate(o, kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta, res_p, res_joint,
                       ev_rate, ev_act, P, Pn, q)
        s = 0.0
        for e in range(n):
            s += ev_rate[e]
        rates[o] = s


@njit(cache=True)
def list_events(o, kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta, res_p, res_joint):
    ev_rate = np.zeros(MAXE)
    ev_act = np.zeros((MAXE, 4), dtype=np.int64)
    D = beta.shape[1] + 1
    P = np.zeros((D, D))
    Pn = np.zeros((D, D))
    q = np.zeros((2, 2))
    n = _enumerate(o, kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta, res_p, res_joint,
                   ev_rate, ev_act, P, Pn, q)
    return ev_rate[:n].copy(), ev_act[:n].copy()


@njit(cache=True, _nrt=False)
def _touch(c, i, t, eta, occ, last_t):
    # flush the occupation-time integral of site i for both copies
    dt = t - last_t[i]
    if dt > 0.0:
        occ[0, i] += eta[0, i] * dt
        occ[1, i] += eta[1, i] * dt
    last_t[i] = t


@njit(cache=True)
def advance(kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta, res_p, res_joint,
            infl, rates, tree, rng, pos, t, t_stop, max_events, order_sign, strict, counters,
            occ, last_t, n_max):
    """Run the chain from process time ``t`` until ``t_stop``.

    Returns ``(t, pos, status)``.  ``pos`` indexes the next unused uniform
    in ``rng``.  With ``order_sign`` = +1 (-1) the order eta <= xi
    (eta >= xi) is checked at every touched site.
    """
    ev_rate = np.zeros(MAXE)
    ev_act = np.zeros((MAXE, 4), dtype=np.int64)
    D = beta.shape[1] + 1
    P = np.zeros((D, D))
    Pn = np.zeros((D, D))
    q = np.zeros((2, 2))
    changed = np.zeros(4, dtype=np.int64)
    nrng = rng.size
    done = 0
    since_rebuild = 0
    while True:
        if done >= max_events:
            return t, pos, ST_MAX_EVENTS
        total = fw_total(tree)
        if not total > 0.0:
            return t_stop, pos, ST_DONE
        if pos + 2 > nrng:
            return t, pos, ST_RNG
        u1 = rng[pos]
        u2 = rng[pos + 1]
        pos += 2
        dt = -math.log(1.0 - u1) / total
        if t + dt >= t_stop:
            return t_stop, pos, ST_DONE
        t += dt
        o, resid = fw_find(tree, u2 * total)
        if o >= rates.size:
            o = rates.size - 1
        while rates[o] <= 0.0 and o > 0:
            o -= 1
        if resid > rates[o]:
            resid = rates[o]
        n = _enumerate(o, kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta, res_p,
                       res_joint, ev_rate, ev_act, P, Pn, q)
        if n == 0:
            # stale rate from rounding; repair and retry
            fw_add(tree, o, -rates[o])
            rates[o] = 0.0
            continue
        e = n - 1
        acc = 0.0
        for k in range(n):
            acc += ev_rate[k]
            if resid < acc:
                e = k
                break
        nc = 0
        for cp in range(2):
            src = ev_act[e, 2 * cp]
            dst = ev_act[e, 2 * cp + 1]
            if src < 0 and dst < 0:
                continue
            if src >= 0 and src < ns:
                _touch(cp, src, t, eta, occ, last_t)
                eta[cp, src] -= 1
                changed[nc] = src
                nc += 1
            if dst >= 0 and dst < ns:
                if eta[cp, dst] >= n_max:
                    return t, pos, ST_OVERFLOW
                _touch(cp, dst, t, eta, occ, last_t)
                eta[cp, dst] += 1
                changed[nc] = dst
                nc += 1
            if src >= ns and dst >= 0 and dst < ns:
                counters[C_BIRTH0 + 2 * cp] += 1
            if dst >= ns and src >= 0 and src < ns:
                counters[C_DEATH0 + 2 * cp] += 1
        if ev_act[e, 0] >= 0 and ev_act[e, 2] >= 0:
            counters[C_JOINT] += 1
        counters[C_EVENTS] += 1
        done += 1
        bad = False
        for c in range(nc):
            i = changed[c]
            if order_sign > 0 and eta[0, i] > eta[1, i]:
                bad = True
            if order_sign < 0 and eta[0, i] < eta[1, i]:
                bad = True
            for r in range(infl.shape[1]):
                ow = infl[i, r]
                if ow < 0:
                    break
                m = _enumerate(ow, kind, ns, coupled, eta, nbr, pk, B, bplus, bminus, lamid, ray, beta,
                               res_p, res_joint, ev_rate, ev_act, P, Pn, q)
                s = 0.0
                for k in range(m):
                    s += ev_rate[k]
                if s != rates[ow]:
                    fw_add(tree, ow, s - rates[ow])
                    rates[ow] = s
        if bad:
            counters[C_VIOL] += 1
            if strict:
                return t, pos, ST_ORDER
        since_rebuild += 1
        if since_rebuild >= REBUILD_EVERY:
            fw_build(tree, rates)
            since_rebuild = 0
