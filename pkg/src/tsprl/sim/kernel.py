"""Compiled inner loop of the simulator.

Vehicles are stored per lane in ring buffers of fixed capacity: slot
``(head[l] + j) % K`` holds the j-th vehicle of lane ``l`` counted from the
stop line. Only the car-following update and event detection live here; all
bookkeeping stays in Python.
"""

from __future__ import annotations

import math

import numba
import numpy as np

GREEN = 2

EV_ENTER_ZONE = 1
EV_CROSS = 2
EV_REMOVE = 3


@numba.njit(cache=True)
def _idm(v, v0, gap, dv, a_max, b, s0, T, delta):
    if gap < 1e-3:
        gap = 1e-3
    s_star = s0 + v * T + v * dv / (2.0 * math.sqrt(a_max * b))
    if s_star < 0.0:
        s_star = 0.0
    return a_max * (1.0 - (v / v0) ** delta - (s_star / gap) ** 2)


@numba.njit(cache=True)
def step_lanes(pos, speed, length, v0, commit_until, head, count, indications,
               t0, dt, a_max, b, s0, T, delta, zone_ft, clearance_ft,
               ev_kind, ev_lane, ev_slot, ev_time):
    """Advance every vehicle by ``dt``.

    Returns ``(n_events, overlap_lane)``; ``overlap_lane`` is -1 when the
    step is clean, otherwise the lane where a follower ran into its leader.
    """
    n_lanes, K = pos.shape
    n_ev = 0
    for ln in range(n_lanes):
        n = count[ln]
        h = head[ln]
        stop_lane = indications[ln] != GREEN
        lead_x = 0.0
        lead_v = 0.0
        lead_x_new = 0.0
        lead_len = 0.0
        for j in range(n):
            s = (h + j) % K
            x = pos[ln, s]
            v = speed[ln, s]
            vf = v0[ln, s]
            if j == 0:
                acc = a_max * (1.0 - (v / vf) ** delta)
            else:
                acc = _idm(v, vf, x - lead_x - lead_len, v - lead_v, a_max, b, s0, T, delta)
            if stop_lane and x >= 0.0 and commit_until[ln, s] <= t0:
                a_stop = _idm(v, vf, x, v, a_max, b, s0, T, delta)
                if a_stop < acc:
                    acc = a_stop
            v_new = v + acc * dt
            if v_new < 0.0:
                dist = v * v / (2.0 * max(-acc, 1e-12))
                v_new = 0.0
            else:
                dist = (v + v_new) * 0.5 * dt
            x_new = x - dist
            if j > 0 and x_new - lead_x_new - lead_len < -1e-6:
                return n_ev, ln
            if x > zone_ft and x_new <= zone_ft:
                ev_kind[n_ev] = EV_ENTER_ZONE
                ev_lane[n_ev] = ln
                ev_slot[n_ev] = s
                ev_time[n_ev] = t0 + dt * (x - zone_ft) / (x - x_new)
                n_ev += 1
            if x >= 0.0 and x_new < 0.0:
                ev_kind[n_ev] = EV_CROSS
                ev_lane[n_ev] = ln
                ev_slot[n_ev] = s
                ev_time[n_ev] = t0 + dt * x / (x - x_new)
                n_ev += 1
            if x_new < -clearance_ft:
                ev_kind[n_ev] = EV_REMOVE
                ev_lane[n_ev] = ln
                ev_slot[n_ev] = s
                ev_time[n_ev] = t0 + dt
                n_ev += 1
            lead_x = x
            lead_v = v
            lead_x_new = x_new
            lead_len = length[ln, s]
            pos[ln, s] = x_new
            speed[ln, s] = v_new
    return n_ev, -1


@numba.njit(cache=True)
def queue_lengths(pos, speed, head, count, slow_ftps):
    n_lanes, K = pos.shape
    out = np.zeros(n_lanes, dtype=np.int64)
    for ln in range(n_lanes):
        q = 0
        for j in range(count[ln]):
            s = (head[ln] + j) % K
            if pos[ln, s] < 0.0:
                continue
            if speed[ln, s] < slow_ftps:
                q += 1
            else:
                break
        out[ln] = q
    return out
