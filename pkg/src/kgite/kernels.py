"""Hot loops, each in two flavours.

``*_loop`` functions are written as explicit loops and compiled with numba;
``*_numpy`` functions are vectorised numpy. Both perform the same floating
point operations in the same order, so they agree bit for bit. The public
names at the bottom pick one flavour according to ``KGITE_DISABLE_NUMBA``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# --------------------------------------------------------------------------
# cohort simulation
# --------------------------------------------------------------------------


@njit
def simulate_loop(
    init_u, sev_noise, indiv, force_start, withhold,
    topo, persistence, drift, noise_std, init_low, init_high,
    parent_w, init_parent_w, effect, n_lines, diag_lab, threshold,
    lab_baseline, lab_weight, out_w, out_threshold, out_onset, margin,
    obs_mask, obs_z, lab_noise,
):
    P, T, D = sev_noise.shape
    L = lab_baseline.shape[0]
    Y = out_threshold.shape[0]
    S = effect.shape[2]
    severity = np.zeros((P, T, D))
    labs = np.zeros((P, T, L))
    observed = np.full((P, T, L), np.nan)
    dx = np.zeros((P, T, D + Y), dtype=np.int8)
    start = np.full((P, D, 3), -1, dtype=np.int64)
    for p in range(P):
        for t in range(T):
            if t == 0:
                for ii in range(D):
                    d = topo[ii]
                    v = 0.0
                    for j in range(D):
                        v += init_parent_w[d, j] * severity[p, 0, j]
                    v += init_low[d] + (init_high[d] - init_low[d]) * init_u[p, d]
                    severity[p, 0, d] = v if v > 0.0 else 0.0
            else:
                for d in range(D):
                    v = persistence[d] * severity[p, t - 1, d]
                    for j in range(D):
                        v += parent_w[d, j] * severity[p, t - 1, j]
                    v += drift[d]
                    v += noise_std[d] * sev_noise[p, t, d]
                    for k in range(n_lines[d]):
                        s0 = start[p, d, k]
                        if s0 >= 0 and s0 <= t - 1:
                            e = t - 1 - s0
                            if e < S:
                                v += effect[d, k, e] * indiv[p, d, k]
                    severity[p, t, d] = v if v > 0.0 else 0.0
            for l in range(L):
                v = lab_baseline[l]
                for d in range(D):
                    v += lab_weight[l, d] * severity[p, t, d]
                labs[p, t, l] = v
                if obs_mask[p, t, l]:
                    observed[p, t, l] = v + lab_noise[l] * obs_z[p, t, l]
            for d in range(D):
                prev = dx[p, t - 1, d] if t > 0 else 0
                # an unmeasured lab (NaN) never compares greater
                dx[p, t, d] = 1 if (prev == 1 or observed[p, t, diag_lab[d]] > threshold[d]) else 0
            for y in range(Y):
                prev = dx[p, t - 1, D + y] if t > 0 else 0
                hit = 0
                if t >= out_onset[y]:
                    v = 0.0
                    for d in range(D):
                        v += out_w[y, d] * severity[p, t, d]
                    if v > out_threshold[y]:
                        hit = 1
                dx[p, t, D + y] = 1 if (prev == 1 or hit == 1) else 0
            # prescriptions for window t
            for d in range(D):
                for k in range(n_lines[d]):
                    if force_start[p, d, k] == t and start[p, d, k] < 0:
                        start[p, d, k] = t
                if dx[p, t, d] == 1:
                    k = 0
                    while k < n_lines[d] and start[p, d, k] >= 0:
                        k += 1
                    if k < n_lines[d] and not withhold[p, d, k]:
                        if observed[p, t, diag_lab[d]] > threshold[d] * (1.0 + margin):
                            start[p, d, k] = t
    return severity, labs, observed, dx, start


def simulate_numpy(
    init_u, sev_noise, indiv, force_start, withhold,
    topo, persistence, drift, noise_std, init_low, init_high,
    parent_w, init_parent_w, effect, n_lines, diag_lab, threshold,
    lab_baseline, lab_weight, out_w, out_threshold, out_onset, margin,
    obs_mask, obs_z, lab_noise,
):
    P, T, D = sev_noise.shape
    L = lab_baseline.shape[0]
    Y = out_threshold.shape[0]
    S = effect.shape[2]
    severity = np.zeros((P, T, D))
    labs = np.zeros((P, T, L))
    observed = np.full((P, T, L), np.nan)
    dx = np.zeros((P, T, D + Y), dtype=np.int8)
    start = np.full((P, D, 3), -1, dtype=np.int64)
    rows = np.arange(P)
    for t in range(T):
        if t == 0:
            for d in topo:
                v = np.zeros(P)
                for j in range(D):
                    v += init_parent_w[d, j] * severity[:, 0, j]
                v += init_low[d] + (init_high[d] - init_low[d]) * init_u[:, d]
                severity[:, 0, d] = np.maximum(v, 0.0)
        else:
            for d in range(D):
                v = persistence[d] * severity[:, t - 1, d]
                for j in range(D):
                    v += parent_w[d, j] * severity[:, t - 1, j]
                v += drift[d]
                v += noise_std[d] * sev_noise[:, t, d]
                for k in range(n_lines[d]):
                    s0 = start[:, d, k]
                    e = t - 1 - s0
                    on = (s0 >= 0) & (e < S)
                    eff = np.where(on, effect[d, k, np.clip(e, 0, S - 1)] * indiv[:, d, k], 0.0)
                    # the loop kernel skips the add entirely when off; adding 0.0 is exact
                    v = np.where(on, v + eff, v)
                severity[:, t, d] = np.where(v > 0.0, v, 0.0)
        for l in range(L):
            v = np.full(P, lab_baseline[l])
            for d in range(D):
                v += lab_weight[l, d] * severity[:, t, d]
            labs[:, t, l] = v
            m = obs_mask[:, t, l]
            observed[m, t, l] = v[m] + lab_noise[l] * obs_z[m, t, l]
        prev = dx[:, t - 1, :] if t > 0 else np.zeros((P, D + Y), dtype=np.int8)
        with np.errstate(invalid="ignore"):
            hit = observed[:, t, diag_lab] > threshold[None, :]
        dx[:, t, :D] = (prev[:, :D] == 1) | hit
        for y in range(Y):
            h = np.zeros(P, dtype=bool)
            if t >= out_onset[y]:
                v = np.zeros(P)
                for d in range(D):
                    v += out_w[y, d] * severity[:, t, d]
                h = v > out_threshold[y]
            dx[:, t, D + y] = (prev[:, D + y] == 1) | h
        for d in range(D):
            nl = n_lines[d]
            for k in range(nl):
                f = (force_start[:, d, k] == t) & (start[:, d, k] < 0)
                start[f, d, k] = t
            unstarted = start[:, d, :nl] < 0
            # lowest unstarted line; forced starts can leave gaps below a started line
            nxt = np.where(unstarted.any(axis=1), unstarted.argmax(axis=1), nl)
            can = (dx[:, t, d] == 1) & (nxt < nl)
            k_idx = np.minimum(nxt, nl - 1)
            can &= ~withhold[rows, d, k_idx]
            with np.errstate(invalid="ignore"):
                can &= observed[:, t, diag_lab[d]] > threshold[d] * (1.0 + margin)
            start[rows[can], d, k_idx[can]] = t
    return severity, labs, observed, dx, start


# --------------------------------------------------------------------------
# last-observation-carried-forward imputation
# --------------------------------------------------------------------------


@njit
def locf_loop(values, fill):
    P, T, L = values.shape
    out = values.copy()
    for p in range(P):
        for l in range(L):
            last = np.nan
            for t in range(T):
                v = values[p, t, l]
                if v == v:
                    last = v
                elif last == last:
                    out[p, t, l] = last
                else:
                    out[p, t, l] = fill[l]
    return out


def locf_numpy(values, fill):
    P, T, L = values.shape
    observed = ~np.isnan(values)
    idx = np.where(observed, np.arange(T)[None, :, None], -1)
    np.maximum.accumulate(idx, axis=1, out=idx)
    gathered = np.take_along_axis(values, np.maximum(idx, 0), axis=1)
    return np.where(idx >= 0, gathered, np.broadcast_to(fill, values.shape))


# --------------------------------------------------------------------------
# nearest-propensity caliper matching
# --------------------------------------------------------------------------


@njit
def match_loop(p_treat, t_treat, pid_treat, q_sorted, order, t_ctrl, pid_ctrl, rank_ctrl, caliper):
    """Matches against controls pre-sorted by propensity (``order``).

    ``rank_ctrl`` is each control's position in (patient id, window) order
    and breaks the final tie. Returns the chosen control index or -1.
    """
    n = p_treat.shape[0]
    m = q_sorted.shape[0]
    best = np.full(n, -1, dtype=np.int64)
    gaps = np.full(n, np.inf)
    for i in range(n):
        p = p_treat[i]
        # first position with q >= p
        lo, hi = 0, m
        while lo < hi:
            mid = (lo + hi) // 2
            if q_sorted[mid] < p:
                lo = mid + 1
            else:
                hi = mid
        r = lo
        while r < m and pid_ctrl[order[r]] == pid_treat[i] and t_ctrl[order[r]] == t_treat[i]:
            r += 1
        l = lo - 1
        while l >= 0 and pid_ctrl[order[l]] == pid_treat[i] and t_ctrl[order[l]] == t_treat[i]:
            l -= 1
        g = np.inf
        if r < m:
            g = q_sorted[r] - p
        if l >= 0 and p - q_sorted[l] < g:
            g = p - q_sorted[l]
        if not g <= caliper:
            continue
        chosen = -1
        key_dt = 0
        key_rank = 0
        # right run, from the first admissible control at or above p
        j = r
        while j < m and q_sorted[j] - p == g:
            c = order[j]
            if not (pid_ctrl[c] == pid_treat[i] and t_ctrl[c] == t_treat[i]):
                dt = abs(t_ctrl[c] - t_treat[i])
                if chosen < 0 or dt < key_dt or (dt == key_dt and rank_ctrl[c] < key_rank):
                    chosen, key_dt, key_rank = c, dt, rank_ctrl[c]
            j += 1
        # left run
        j = l
        while j >= 0 and p - q_sorted[j] == g:
            c = order[j]
            if not (pid_ctrl[c] == pid_treat[i] and t_ctrl[c] == t_treat[i]):
                dt = abs(t_ctrl[c] - t_treat[i])
                if chosen < 0 or dt < key_dt or (dt == key_dt and rank_ctrl[c] < key_rank):
                    chosen, key_dt, key_rank = c, dt, rank_ctrl[c]
            j -= 1
        if chosen >= 0:
            best[i] = chosen
            gaps[i] = g
    return best, gaps


def match_numpy(p_treat, t_treat, pid_treat, q, t_ctrl, pid_ctrl, rank_ctrl, caliper, chunk=256):
    """Dense, chunked version of ``match_loop`` on unsorted controls.

    A same-patient same-window control can never hold the control
    combination at that window, so it is excluded by construction upstream;
    it is still masked here to mirror the loop kernel.
    """
    n = p_treat.shape[0]
    m = q.shape[0]
    best = np.full(n, -1, dtype=np.int64)
    gaps = np.full(n, np.inf)
    if m == 0:
        return best, gaps
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        gap = np.abs(p_treat[a:b, None] - q[None, :])
        same = (pid_treat[a:b, None] == pid_ctrl[None, :]) & (t_treat[a:b, None] == t_ctrl[None, :])
        gap[same] = np.inf
        g = gap.min(axis=1)
        tie = gap == g[:, None]
        dt = np.abs(t_ctrl[None, :] - t_treat[a:b, None])
        key = np.where(tie, dt * m + rank_ctrl[None, :], np.iinfo(np.int64).max)
        c = key.argmin(axis=1)
        ok = g <= caliper
        best[a:b] = np.where(ok, c, -1)
        gaps[a:b] = np.where(ok, g, np.inf)
    return best, gaps


if USE_NUMBA:
    simulate = simulate_loop
    locf = locf_loop
else:
    simulate = simulate_numpy
    locf = locf_numpy


def match(p_treat, t_treat, pid_treat, q, t_ctrl, pid_ctrl, rank_ctrl, caliper):
    """Nearest-propensity match with replacement, ties by window gap then id."""
    p_treat = np.ascontiguousarray(p_treat, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    t_treat = np.ascontiguousarray(t_treat, dtype=np.int64)
    t_ctrl = np.ascontiguousarray(t_ctrl, dtype=np.int64)
    pid_treat = np.ascontiguousarray(pid_treat, dtype=np.int64)
    pid_ctrl = np.ascontiguousarray(pid_ctrl, dtype=np.int64)
    rank_ctrl = np.ascontiguousarray(rank_ctrl, dtype=np.int64)
    if USE_NUMBA:
        order = np.argsort(q, kind="stable")
        return match_loop(p_treat, t_treat, pid_treat, q[order], order, t_ctrl, pid_ctrl, rank_ctrl, float(caliper))
    return match_numpy(p_treat, t_treat, pid_treat, q, t_ctrl, pid_ctrl, rank_ctrl, float(caliper))
