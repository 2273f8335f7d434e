# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled attention kernels; same contracts as akt.kernels.reference."""

import numpy as np

from libc.math cimport exp, fabs, INFINITY

ctypedef fused floating:
    float
    double


def context_distance(floating[:, :, :, ::1] raw,
                     const unsigned char[:, :, ::1] mask):
    cdef Py_ssize_t B = raw.shape[0], H = raw.shape[1]
    cdef Py_ssize_t Tq = raw.shape[2], Tk = raw.shape[3]
    if floating is float:
        out_np = np.zeros((B, H, Tq, Tk), dtype=np.float32)
    else:
        out_np = np.zeros((B, H, Tq, Tk), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_np
    work_np = np.empty(Tk, dtype=np.float64)
    cdef double[::1] cum = work_np
    cdef Py_ssize_t b, h, t, j
    cdef double mx, denom, running, total
    cdef bint any_live

    for b in range(B):
        for h in range(H):
            for t in range(Tq):
                mx = -INFINITY
                any_live = False
                for j in range(Tk):
                    if mask[b, t, j]:
                        any_live = True
                        if raw[b, h, t, j] > mx:
                            mx = raw[b, h, t, j]
                if not any_live:
                    continue
                denom = 0.0
                for j in range(Tk):
                    if mask[b, t, j]:
                        denom += exp(<double> raw[b, h, t, j] - mx)
                running = 0.0
                for j in range(Tk):
                    if mask[b, t, j]:
                        running += exp(<double> raw[b, h, t, j] - mx) / denom
                    cum[j] = running
                total = running
                for j in range(Tk):
                    if mask[b, t, j]:
                        out[b, h, t, j] = <floating> (fabs(<double> (t - j))
                                                      * (total - cum[j]))
    return out_np


def monotonic_weights_forward(floating[:, :, :, ::1] raw,
                              floating[:, :, :, ::1] dist,
                              floating[::1] theta,
                              const unsigned char[:, :, ::1] mask,
                              bint additive):
    cdef Py_ssize_t B = raw.shape[0], H = raw.shape[1]
    cdef Py_ssize_t Tq = raw.shape[2], Tk = raw.shape[3]
    if floating is float:
        out_np = np.zeros((B, H, Tq, Tk), dtype=np.float32)
    else:
        out_np = np.zeros((B, H, Tq, Tk), dtype=np.float64)
    cdef floating[:, :, :, ::1] alpha = out_np
    work_np = np.empty(Tk, dtype=np.float64)
    cdef double[::1] srow = work_np
    cdef Py_ssize_t b, h, t, j
    cdef double th, mx, denom, s
    cdef bint any_live

    for b in range(B):
        for h in range(H):
            th = <double> theta[h]
            for t in range(Tq):
                mx = -INFINITY
                any_live = False
                for j in range(Tk):
                    if mask[b, t, j]:
                        any_live = True
                        if additive:
                            s = <double> raw[b, h, t, j] - th * <double> dist[b, h, t, j]
                        else:
                            s = exp(-th * <double> dist[b, h, t, j]) * <double> raw[b, h, t, j]
                        srow[j] = s
                        if s > mx:
                            mx = s
                if not any_live:
                    continue
                denom = 0.0
                for j in range(Tk):
                    if mask[b, t, j]:
                        srow[j] = exp(srow[j] - mx)
                        denom += srow[j]
                for j in range(Tk):
                    if mask[b, t, j]:
                        alpha[b, h, t, j] = <floating> (srow[j] / denom)
    return out_np


def monotonic_weights_backward(floating[:, :, :, ::1] raw,
                               floating[:, :, :, ::1] dist,
                               floating[::1] theta,
                               floating[:, :, :, ::1] alpha,
                               floating[:, :, :, ::1] grad_alpha,
                               bint additive):
    cdef Py_ssize_t B = raw.shape[0], H = raw.shape[1]
    cdef Py_ssize_t Tq = raw.shape[2], Tk = raw.shape[3]
    if floating is float:
        graw_np = np.zeros((B, H, Tq, Tk), dtype=np.float32)
        gth_np = np.zeros(H, dtype=np.float32)
    else:
        graw_np = np.zeros((B, H, Tq, Tk), dtype=np.float64)
        gth_np = np.zeros(H, dtype=np.float64)
    cdef floating[:, :, :, ::1] graw = graw_np
    cdef floating[::1] gth = gth_np
    cdef Py_ssize_t b, h, t, j
    cdef double th, dot, gs, w, acc

    for b in range(B):
        for h in range(H):
            th = <double> theta[h]
            acc = 0.0
            for t in range(Tq):
                dot = 0.0
                for j in range(Tk):
                    dot += <double> grad_alpha[b, h, t, j] * <double> alpha[b, h, t, j]
                for j in range(Tk):
                    gs = <double> alpha[b, h, t, j] * (<double> grad_alpha[b, h, t, j] - dot)
                    if additive:
                        graw[b, h, t, j] = <floating> gs
                        acc -= gs * <double> dist[b, h, t, j]
                    else:
                        w = exp(-th * <double> dist[b, h, t, j])
                        graw[b, h, t, j] = <floating> (gs * w)
                        acc -= gs * w * <double> raw[b, h, t, j] * <double> dist[b, h, t, j]
            gth[h] = gth[h] + <floating> acc
    return graw_np, gth_np
