# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors ``_pykernels`` exactly; see there for semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def iterative_stratify(labels, Py_ssize_t k, tiebreak):
    cdef cnp.uint8_t[:, ::1] lab = np.ascontiguousarray(labels, dtype=np.uint8)
    cdef double[:, ::1] tb = np.ascontiguousarray(tiebreak, dtype=np.float64)
    cdef Py_ssize_t n = lab.shape[0]
    cdef Py_ssize_t n_labels = lab.shape[1]
    cdef Py_ssize_t i, j, l, target, choice, unassigned
    cdef long best

    folds_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] folds = folds_arr
    cap_arr = np.full(k, n / <double>k, dtype=np.float64)
    cdef double[::1] capacity = cap_arr
    desired_arr = np.zeros((n_labels, k), dtype=np.float64)
    cdef double[:, ::1] desired = desired_arr
    rem_arr = np.zeros(n_labels, dtype=np.int64)
    cdef cnp.int64_t[::1] remaining = rem_arr

    for l in range(n_labels):
        for i in range(n):
            remaining[l] += lab[i, l]
        for j in range(k):
            desired[l, j] = remaining[l] / <double>k

    unassigned = n
    while unassigned > 0:
        target = -1
        best = n + 1
        for l in range(n_labels):
            if 0 < remaining[l] < best:
                best = remaining[l]
                target = l
        if target < 0:
            break
        for i in range(n):
            if folds[i] >= 0 or lab[i, target] == 0:
                continue
            choice = 0
            for j in range(1, k):
                if desired[target, j] > desired[target, choice]:
                    choice = j
                elif desired[target, j] == desired[target, choice]:
                    if capacity[j] > capacity[choice]:
                        choice = j
                    elif capacity[j] == capacity[choice] and tb[i, j] > tb[i, choice]:
                        choice = j
            folds[i] = choice
            unassigned -= 1
            capacity[choice] -= 1.0
            for l in range(n_labels):
                if lab[i, l]:
                    desired[l, choice] -= 1.0
                    remaining[l] -= 1

    for i in range(n):
        if folds[i] >= 0:
            continue
        choice = 0
        for j in range(1, k):
            if capacity[j] > capacity[choice]:
                choice = j
            elif capacity[j] == capacity[choice] and tb[i, j] > tb[i, choice]:
                choice = j
        folds[i] = choice
        capacity[choice] -= 1.0
    return folds_arr


def confusion_counts(pred, gold):
    cdef cnp.uint8_t[:, ::1] p = np.ascontiguousarray(pred, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] g = np.ascontiguousarray(gold, dtype=np.uint8)
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t width = p.shape[1]
    cdef Py_ssize_t i, j
    out_arr = np.zeros((width, 4), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    for i in range(n):
        for j in range(width):
            out[j, (0 if p[i, j] else 2) + (0 if g[i, j] else 1)] += 1
    return out_arr


def hierarchy_correct(subtask_b, misogyny, double threshold, bint replace_misogynous):
    out_arr = np.array(subtask_b, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] out = out_arr
    cdef double[::1] mis = np.ascontiguousarray(misogyny, dtype=np.float64)
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t width = out.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        if mis[i] < threshold:
            for j in range(1, width):
                out[i, j] = 0.0
        if replace_misogynous:
            out[i, 0] = mis[i]
    return out_arr


def swap_refine(labels, folds, Py_ssize_t k, Py_ssize_t max_moves):
    cdef cnp.uint8_t[:, ::1] lab = np.ascontiguousarray(labels, dtype=np.uint8)
    cdef Py_ssize_t n = lab.shape[0]
    cdef Py_ssize_t n_labels = lab.shape[1]
    out = np.array(folds, dtype=np.int64, copy=True)
    cdef cnp.int64_t[::1] fl = out
    cdef Py_ssize_t i, j, l, f, a, b, p, q, it, n_pat, ba, bb, bp, bq
    cdef long d
    cdef double gain, best, x, y

    code_of = {}
    pat_idx_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] pat_idx = pat_idx_arr
    first = []
    for i in range(n):
        key = bytes(lab[i])
        if key not in code_of:
            code_of[key] = len(first)
            first.append(i)
        pat_idx[i] = code_of[key]
    n_pat = len(first)
    if n == 0:
        return out
    pats_arr = np.zeros((n_pat, n_labels), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] pats = pats_arr
    for p in range(n_pat):
        for l in range(n_labels):
            pats[p, l] = lab[first[p], l]

    cnt_arr = np.zeros((k, n_pat), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cnt = cnt_arr
    sizes_arr = np.zeros(k, dtype=np.int64)
    cdef cnp.int64_t[::1] sizes = sizes_arr
    counts_arr = np.zeros((k, n_labels), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] counts = counts_arr
    total_arr = np.zeros(n_labels, dtype=np.int64)
    cdef cnp.int64_t[::1] total = total_arr
    for i in range(n):
        f = fl[i]
        cnt[f, pat_idx[i]] += 1
        sizes[f] += 1
        for l in range(n_labels):
            counts[f, l] += lab[i, l]
            total[l] += lab[i, l]
    glob_arr = np.zeros(n_labels, dtype=np.float64)
    cdef double[::1] glob = glob_arr
    for l in range(n_labels):
        glob[l] = total[l] / <double>n
    dev_arr = np.zeros((k, n_labels), dtype=np.float64)
    cdef double[:, ::1] dev = dev_arr
    for f in range(k):
        for l in range(n_labels):
            if sizes[f]:
                dev[f, l] = counts[f, l] / <double>sizes[f] - glob[l]

    for it in range(max_moves):
        best = 1e-12
        ba = -1
        for a in range(k):
            if not sizes[a]:
                continue
            for b in range(a + 1, k):
                if not sizes[b]:
                    continue
                for p in range(n_pat):
                    if not cnt[a, p]:
                        continue
                    for q in range(n_pat):
                        if q == p or not cnt[b, q]:
                            continue
                        gain = 0.0
                        for l in range(n_labels):
                            d = pats[q, l] - pats[p, l]
                            if d:
                                x = dev[a, l] + d / <double>sizes[a]
                                y = dev[b, l] - d / <double>sizes[b]
                                gain += dev[a, l] * dev[a, l] + dev[b, l] * dev[b, l] - x * x - y * y
                        if gain > best:
                            best = gain
                            ba, bb, bp, bq = a, b, p, q
        if ba < 0:
            break
        i = n - 1
        while not (fl[i] == ba and pat_idx[i] == bp):
            i -= 1
        j = n - 1
        while not (fl[j] == bb and pat_idx[j] == bq):
            j -= 1
        fl[i] = bb
        fl[j] = ba
        cnt[ba, bp] -= 1
        cnt[bb, bp] += 1
        cnt[bb, bq] -= 1
        cnt[ba, bq] += 1
        for l in range(n_labels):
            d = pats[bq, l] - pats[bp, l]
            counts[ba, l] += d
            counts[bb, l] -= d
            dev[ba, l] = counts[ba, l] / <double>sizes[ba] - glob[l]
            dev[bb, l] = counts[bb, l] / <double>sizes[bb] - glob[l]
    return out
