"""Compiled inner loops: metric programs, geodesic flow, reflections, quadrature.

A chart handed to these kernels is a table of stack programs, one per
(component, derivative) pair: component ``c`` enumerates the pairs i <= j of
tangential indices, derivative ``d = 0`` is the value g_ij and ``d = 1 + a``
is the partial derivative along coordinate ``a`` (``a = 0`` is the normal
direction).  Program ``c * (m + 1) + d`` occupies ``ops[offs[p]:offs[p+1]]``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK, ESCAPE, SPEED_DRIFT, STEP_UNDERFLOW, MAX_EVENTS = 0, 1, 2, 3, 4


@njit(cache=True, nogil=True)
def eval_program(ops, args, lo, hi, x, stack):
    top = 0
    for k in range(lo, hi):
        op = ops[k]
        if op == 0:
            stack[top] = args[k]
            top += 1
        elif op == 1:
            stack[top] = x[int(args[k])]
            top += 1
        elif op == 2:
            cnt = int(args[k])
            s = 0.0
            for j in range(cnt):
                s += stack[top - 1 - j]
            top -= cnt
            stack[top] = s
            top += 1
        elif op == 3:
            cnt = int(args[k])
            s = 1.0
            for j in range(cnt):
                s *= stack[top - 1 - j]
            top -= cnt
            stack[top] = s
            top += 1
        elif op == 4:
            e = stack[top - 1]
            b = stack[top - 2]
            top -= 1
            stack[top - 1] = b ** e
        elif op == 5:
            stack[top - 1] = math.sin(stack[top - 1])
        elif op == 6:
            stack[top - 1] = math.cos(stack[top - 1])
        elif op == 7:
            stack[top - 1] = math.exp(stack[top - 1])
        elif op == 8:
            stack[top - 1] = stack[top - 1] * stack[top - 1]
        else:
            stack[top - 1] = 1.0 / stack[top - 1]
    return stack[0]


@njit(cache=True, nogil=True)
def metric_jet(ops, args, offs, n, x, stack, g, dg, with_derivs):
    m = n + 1
    c = 0
    for i in range(n):
        for j in range(i, n):
            base = c * (m + 1)
            val = eval_program(ops, args, offs[base], offs[base + 1], x, stack)
            g[i, j] = val
            g[j, i] = val
            if with_derivs:
                for a in range(m):
                    p = base + 1 + a
                    d = eval_program(ops, args, offs[p], offs[p + 1], x, stack)
                    dg[a, i, j] = d
                    dg[a, j, i] = d
            c += 1


@njit(cache=True, nogil=True)
def invert(g, n, ginv):
    if n == 1:
        ginv[0, 0] = 1.0 / g[0, 0]
    elif n == 2:
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        ginv[0, 0] = g[1, 1] / det
        ginv[1, 1] = g[0, 0] / det
        ginv[0, 1] = -g[0, 1] / det
        ginv[1, 0] = -g[1, 0] / det
    else:
        ginv[:, :] = np.linalg.inv(g)


@njit(cache=True, nogil=True)
def geodesic_rhs(ops, args, offs, n, y, out, work, boundary):
    """Geodesic flow in boundary normal coordinates, state (x, v) of size 2m."""
    m = n + 1
    stack, g, dg, ginv, b, c = work
    metric_jet(ops, args, offs, n, y[:m], stack, g, dg, True)
    invert(g, n, ginv)
    v0 = y[m]
    acc0 = 0.0
    for i in range(n):
        bi = 0.0
        ci = 0.0
        for j in range(n):
            vj = y[m + 1 + j]
            acc0 += 0.5 * dg[0, i, j] * y[m + 1 + i] * vj
            bi += dg[0, i, j] * vj
            for k in range(n):
                vk = y[m + 1 + k]
                ci += (2.0 * dg[1 + k, i, j] - dg[1 + i, j, k]) * vj * vk
        b[i] = bi
        c[i] = ci
    for a in range(m):
        out[a] = y[m + a]
    if boundary:
        out[0] = 0.0
        out[m] = 0.0
    else:
        out[m] = acc0
    for i in range(n):
        s = 0.0
        for l in range(n):
            s += ginv[i, l] * (b[l] * v0 + 0.5 * c[l])
        out[m + 1 + i] = -s


@njit(cache=True, nogil=True)
def rk4_step(ops, args, offs, n, y, h, out, work, k1, k2, k3, k4, tmp, boundary):
    dim = y.shape[0]
    geodesic_rhs(ops, args, offs, n, y, k1, work, boundary)
    for q in range(dim):
        tmp[q] = y[q] + 0.5 * h * k1[q]
    geodesic_rhs(ops, args, offs, n, tmp, k2, work, boundary)
    for q in range(dim):
        tmp[q] = y[q] + 0.5 * h * k2[q]
    geodesic_rhs(ops, args, offs, n, tmp, k3, work, boundary)
    for q in range(dim):
        tmp[q] = y[q] + h * k3[q]
    geodesic_rhs(ops, args, offs, n, tmp, k4, work, boundary)
    for q in range(dim):
        out[q] = y[q] + h * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]) / 6.0


@njit(cache=True, nogil=True)
def _make_work(n, stack_size):
    stack = np.empty(stack_size)
    g = np.empty((n, n))
    dg = np.empty((n + 1, n, n))
    ginv = np.empty((n, n))
    b = np.empty(n)
    c = np.empty(n)
    return (stack, g, dg, ginv, b, c)


@njit(cache=True, nogil=True)
def _speed_and_sff(ops, args, offs, n, y, work):
    m = n + 1
    stack, g, dg, ginv, b, c = work
    metric_jet(ops, args, offs, n, y[:m], stack, g, dg, True)
    speed2 = y[m] * y[m]
    sff = 0.0
    for i in range(n):
        for j in range(n):
            speed2 += g[i, j] * y[m + 1 + i] * y[m + 1 + j]
            sff -= 0.5 * dg[0, i, j] * y[m + 1 + i] * y[m + 1 + j]
    return math.sqrt(speed2), sff


@njit(cache=True, nogil=True)
def _step_size(y, m, sff, steps_per_bounce, max_step):
    energy = 0.5 * y[m] * y[m] + y[0] * sff
    if sff > 0.0 and energy > 0.0:
        tau = 2.0 * math.sqrt(2.0 * energy) / sff
        h = tau / steps_per_bounce
        if h < max_step:
            return h
    return max_step


@njit(cache=True, nogil=True)
def _grow(buf, count):
    if count < buf.shape[0]:
        return buf
    shape = (2 * buf.shape[0],) + buf.shape[1:]
    new = np.empty(shape)
    new[: buf.shape[0]] = buf
    return new


@njit(cache=True, nogil=True)
def trace_kernel(ops, args, offs, n, stack_size, y_start, t_start, duration,
                 steps_per_bounce, max_step, min_step, escape_depth, event_tol,
                 speed_tol, max_events, capacity):
    """Integrate a broken ray; returns (times, states, event sample indices, status, step count).

    Each reflection contributes two samples at the same time: the incoming
    state followed by the reflected state (normal velocity sign flipped).
    """
    m = n + 1
    dim = 2 * m
    work = _make_work(n, stack_size)
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    y = y_start.copy()
    y1 = np.empty(dim)
    ym = np.empty(dim)

    times = np.empty(capacity)
    states = np.empty((capacity, dim))
    events = np.empty(max(16, capacity // 32), dtype=np.int64)
    count = 0
    nev = 0
    times[0] = t_start
    states[0] = y
    count = 1

    speed0, sff = _speed_and_sff(ops, args, offs, n, y, work)
    h = _step_size(y, m, sff, steps_per_bounce, max_step)
    t = t_start
    t_end = t_start + duration
    status = OK
    nsteps = 0
    while t_end - t > 1e-15 * max(1.0, abs(t_end)):
        hs = h
        if t + hs > t_end:
            hs = t_end - t
        rk4_step(ops, args, offs, n, y, hs, y1, work, k1, k2, k3, k4, tmp, False)
        nsteps += 1
        if y1[0] < 0.0:
            # Safeguarded Newton on x0(s) = 0 inside the bracket [lo, hi].
            lo = 0.0
            hi = hs
            s = hs * y[0] / (y[0] - y1[0])
            if s <= lo or s >= hi:
                s = 0.5 * (lo + hi)
            for _ in range(200):
                rk4_step(ops, args, offs, n, y, s, ym, work, k1, k2, k3, k4, tmp, False)
                f = ym[0]
                if f > 0.0:
                    lo = s
                elif f < 0.0:
                    hi = s
                else:
                    lo = s
                    hi = s
                    break
                if hi - lo <= event_tol:
                    break
                slope = ym[m]
                s_new = s - f / slope if slope != 0.0 else 0.5 * (lo + hi)
                if not (lo < s_new < hi):
                    s_new = 0.5 * (lo + hi)
                if abs(s_new - s) <= 0.5 * event_tol:
                    # Newton has converged: certify the bracket around s_new.
                    lo_t = max(lo, s_new - event_tol)
                    hi_t = min(hi, s_new + event_tol)
                    rk4_step(ops, args, offs, n, y, lo_t, ym, work, k1, k2, k3, k4, tmp, False)
                    if ym[0] >= 0.0:
                        lo = lo_t
                    rk4_step(ops, args, offs, n, y, hi_t, ym, work, k1, k2, k3, k4, tmp, False)
                    if ym[0] <= 0.0:
                        hi = hi_t
                    s = 0.5 * (lo + hi)
                    if hi - lo <= 2.0 * event_tol:
                        break
                    continue
                s = s_new
            s = 0.5 * (lo + hi)
            if s < min_step:
                status = STEP_UNDERFLOW
                break
            rk4_step(ops, args, offs, n, y, s, ym, work, k1, k2, k3, k4, tmp, False)
            ym[0] = 0.0
            t += s
            times = _grow(times, count + 2)
            states = _grow(states, count + 2)
            times[count] = t
            states[count] = ym
            count += 1
            ym[m] = -ym[m]
            times[count] = t
            states[count] = ym
            if nev >= events.shape[0]:
                new_ev = np.empty(2 * events.shape[0], dtype=np.int64)
                new_ev[:nev] = events[:nev]
                events = new_ev
            events[nev] = count - 1
            nev += 1
            count += 1
            y[:] = ym
            speed, sff = _speed_and_sff(ops, args, offs, n, y, work)
            if abs(speed - speed0) > speed_tol:
                status = SPEED_DRIFT
                break
            h = _step_size(y, m, sff, steps_per_bounce, max_step)
            if h < min_step:
                status = STEP_UNDERFLOW
                break
            if nev >= max_events:
                status = MAX_EVENTS
                break
        else:
            if hs == t_end - t:
                t = t_end
            else:
                t += hs
            y[:] = y1
            times = _grow(times, count + 1)
            states = _grow(states, count + 1)
            times[count] = t
            states[count] = y
            count += 1
            if y[0] >= escape_depth:
                status = ESCAPE
                break
            if nsteps % 64 == 0:
                speed, sff = _speed_and_sff(ops, args, offs, n, y, work)
                if abs(speed - speed0) > speed_tol:
                    status = SPEED_DRIFT
                    break
    if status == OK:
        speed, sff = _speed_and_sff(ops, args, offs, n, y, work)
        if abs(speed - speed0) > speed_tol:
            status = SPEED_DRIFT
    return times[:count].copy(), states[:count].copy(), events[:nev].copy(), status, nsteps


@njit(cache=True, nogil=True)
def boundary_geodesic_kernel(ops, args, offs, n, stack_size, xbar0, vbar0, length, step):
    """Fixed-step RK4 for the geodesic equation of the boundary metric g(0, .)."""
    m = n + 1
    dim = 2 * m
    work = _make_work(n, stack_size)
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    nsteps = int(math.ceil(length / step - 1e-9))
    h = length / nsteps
    y = np.zeros(dim)
    y[1:m] = xbar0
    y[m + 1:] = vbar0
    out = np.empty((nsteps + 1, dim))
    out[0] = y
    y1 = np.empty(dim)
    for k in range(nsteps):
        rk4_step(ops, args, offs, n, y, h, y1, work, k1, k2, k3, k4, tmp, True)
        y[:] = y1
        out[k + 1] = y
    return h, out


@njit(cache=True, nogil=True)
def segment_simpson(t, vals, starts, stops):
    """Composite Simpson over each segment [starts[s], stops[s]] (inclusive sample indices).

    Handles non-uniform spacing; an odd trailing interval uses the exact
    three-point quadratic rule.
    """
    total = 0.0
    for s in range(starts.shape[0]):
        total += _simpson_range(t, vals, starts[s], stops[s])
    return total


@njit(cache=True, nogil=True)
def _simpson_range(t, vals, a, b):
    nint = b - a
    if nint <= 0:
        return 0.0
    if nint == 1:
        return 0.5 * (t[b] - t[a]) * (vals[a] + vals[b])
    total = 0.0
    k = a
    while k + 2 <= b:
        h0 = t[k + 1] - t[k]
        h1 = t[k + 2] - t[k + 1]
        hs = h0 + h1
        if h0 <= 0.0 or h1 <= 0.0:
            total += 0.5 * h0 * (vals[k] + vals[k + 1]) + 0.5 * h1 * (vals[k + 1] + vals[k + 2])
        else:
            total += hs / 6.0 * ((2.0 - h1 / h0) * vals[k] + hs * hs / (h0 * h1) * vals[k + 1]
                                 + (2.0 - h0 / h1) * vals[k + 2])
        k += 2
    if k < b:
        # last interval [k, k+1] from the quadratic through k-1, k, k+1
        h0 = t[k] - t[k - 1]
        h1 = t[k + 1] - t[k]
        if h0 <= 0.0 or h1 <= 0.0:
            total += 0.5 * h1 * (vals[k] + vals[k + 1])
        else:
            alpha = (2.0 * h1 * h1 + 3.0 * h0 * h1) / (6.0 * (h0 + h1))
            beta = (h1 * h1 + 3.0 * h0 * h1) / (6.0 * h0)
            eta = h1 * h1 * h1 / (6.0 * h0 * (h0 + h1))
            total += alpha * vals[k + 1] + beta * vals[k] - eta * vals[k - 1]
    return total


@njit(cache=True, nogil=True)
def segment_cumulative(t, vals, starts, stops, out):
    """Running integral at every sample, continuous across segment boundaries.

    Uses the trapezoid rule with a Simpson-style correction per interval from
    the local quadratic, so it is exact for quadratics on each segment.
    """
    acc = 0.0
    for s in range(starts.shape[0]):
        a = starts[s]
        b = stops[s]
        out[a] = acc
        for k in range(a, b):
            h1 = t[k + 1] - t[k]
            inc = 0.5 * h1 * (vals[k] + vals[k + 1])
            if b - a >= 2 and h1 > 0.0:
                if k + 2 <= b:
                    h2 = t[k + 2] - t[k + 1]
                    if h2 > 0.0:
                        # quadratic through k, k+1, k+2 integrated over [k, k+1]
                        d1 = (vals[k + 1] - vals[k]) / h1
                        d2 = (vals[k + 2] - vals[k + 1]) / h2
                        curv = (d2 - d1) / (h1 + h2)
                        inc -= curv * h1 * h1 * h1 / 6.0
                else:
                    h0 = t[k] - t[k - 1]
                    if h0 > 0.0:
                        d0 = (vals[k] - vals[k - 1]) / h0
                        d1 = (vals[k + 1] - vals[k]) / h1
                        curv = (d1 - d0) / (h0 + h1)
                        inc -= curv * h1 * h1 * h1 / 6.0
            acc += inc
            out[k + 1] = acc
    return acc
