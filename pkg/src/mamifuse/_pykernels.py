"""Pure-Python reference kernels.

Same signatures and bit-identical outputs as the compiled ``_kernels``
extension; used when the extension is unavailable or when
``MAMIFUSE_PURE_PYTHON=1`` is set.
"""

import numpy as np


def iterative_stratify(labels, k, tiebreak):
    """Greedy rarest-label-first fold assignment.

    labels: (N, L) uint8 matrix of {0,1}; tiebreak: (N, k) float64 matrix of
    pre-drawn uniforms used only to break exact ties. Returns int64 folds.
    """
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    tiebreak = np.ascontiguousarray(tiebreak, dtype=np.float64)
    n, n_labels = labels.shape
    rows = labels.tolist()
    tb = tiebreak.tolist()

    capacity = [n / k] * k
    desired = []
    remaining = []
    for lab in range(n_labels):
        pos = sum(rows[i][lab] for i in range(n))
        desired.append([pos / k] * k)
        remaining.append(pos)

    folds = [-1] * n
    unassigned = n
    while unassigned:
        # rarest label that still has unassigned positives
        target = -1
        best = n + 1
        for lab in range(n_labels):
            if 0 < remaining[lab] < best:
                best = remaining[lab]
                target = lab
        if target < 0:
            break
        dem = desired[target]
        for i in range(n):
            if folds[i] >= 0 or not rows[i][target]:
                continue
            choice = 0
            for j in range(1, k):
                if dem[j] > dem[choice]:
                    choice = j
                elif dem[j] == dem[choice]:
                    if capacity[j] > capacity[choice]:
                        choice = j
                    elif capacity[j] == capacity[choice] and tb[i][j] > tb[i][choice]:
                        choice = j
            folds[i] = choice
            unassigned -= 1
            capacity[choice] -= 1.0
            row = rows[i]
            for lab in range(n_labels):
                if row[lab]:
                    desired[lab][choice] -= 1.0
                    remaining[lab] -= 1

    # samples with no positive label go wherever capacity is largest
    for i in range(n):
        if folds[i] >= 0:
            continue
        choice = 0
        for j in range(1, k):
            if capacity[j] > capacity[choice]:
                choice = j
            elif capacity[j] == capacity[choice] and tb[i][j] > tb[i][choice]:
                choice = j
        folds[i] = choice
        capacity[choice] -= 1.0
    return np.asarray(folds, dtype=np.int64)


def swap_refine(labels, folds, k, max_moves):
    """Swap rows between folds while that lowers the summed squared rate deviation.

    Rows are grouped by label pattern; each move exchanges one row of pattern p
    in fold a with one row of pattern q in fold b (fold sizes never change).
    The best move is taken each round and the row with the highest index in
    its (fold, pattern) cell is the one that moves. Returns new int64 folds.
    """
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    out = np.array(folds, dtype=np.int64, copy=True)
    n, n_labels = labels.shape
    rows = labels.tolist()
    fl = out.tolist()

    code_of = {}
    pats = []
    pat_idx = [0] * n
    for i in range(n):
        key = tuple(rows[i])
        if key not in code_of:
            code_of[key] = len(pats)
            pats.append(rows[i])
        pat_idx[i] = code_of[key]
    n_pat = len(pats)

    cnt = [[0] * n_pat for _ in range(k)]
    sizes = [0] * k
    counts = [[0] * n_labels for _ in range(k)]
    total = [0] * n_labels
    for i in range(n):
        f = fl[i]
        cnt[f][pat_idx[i]] += 1
        sizes[f] += 1
        for lab in range(n_labels):
            counts[f][lab] += rows[i][lab]
            total[lab] += rows[i][lab]
    if n == 0:
        return out
    glob = [total[lab] / n for lab in range(n_labels)]
    dev = [[0.0] * n_labels for _ in range(k)]
    for f in range(k):
        for lab in range(n_labels):
            dev[f][lab] = counts[f][lab] / sizes[f] - glob[lab] if sizes[f] else 0.0

    for _ in range(max_moves):
        best = 1e-12
        move = None
        for a in range(k):
            if not sizes[a]:
                continue
            for b in range(a + 1, k):
                if not sizes[b]:
                    continue
                for p in range(n_pat):
                    if not cnt[a][p]:
                        continue
                    for q in range(n_pat):
                        if q == p or not cnt[b][q]:
                            continue
                        gain = 0.0
                        for lab in range(n_labels):
                            d = pats[q][lab] - pats[p][lab]
                            if d:
                                x = dev[a][lab] + d / sizes[a]
                                y = dev[b][lab] - d / sizes[b]
                                gain += dev[a][lab] * dev[a][lab] + dev[b][lab] * dev[b][lab] - x * x - y * y
                        if gain > best:
                            best = gain
                            move = (a, b, p, q)
        if move is None:
            break
        a, b, p, q = move
        i = n - 1
        while not (fl[i] == a and pat_idx[i] == p):
            i -= 1
        j = n - 1
        while not (fl[j] == b and pat_idx[j] == q):
            j -= 1
        fl[i] = b
        fl[j] = a
        cnt[a][p] -= 1
        cnt[b][p] += 1
        cnt[b][q] -= 1
        cnt[a][q] += 1
        for lab in range(n_labels):
            d = pats[q][lab] - pats[p][lab]
            counts[a][lab] += d
            counts[b][lab] -= d
            dev[a][lab] = counts[a][lab] / sizes[a] - glob[lab]
            dev[b][lab] = counts[b][lab] / sizes[b] - glob[lab]
    return np.asarray(fl, dtype=np.int64)


def confusion_counts(pred, gold):
    """Per-column (tp, fp, fn, tn) for (N, L) binary matrices -> (L, 4) int64."""
    pred = np.ascontiguousarray(pred, dtype=np.uint8)
    gold = np.ascontiguousarray(gold, dtype=np.uint8)
    width = pred.shape[1]
    counts = [[0, 0, 0, 0] for _ in range(width)]
    for prow, grow in zip(pred.tolist(), gold.tolist()):
        for j in range(width):
            # slot: 0 tp, 1 fp, 2 fn, 3 tn
            counts[j][(0 if prow[j] else 2) + (0 if grow[j] else 1)] += 1
    return np.asarray(counts, dtype=np.int64).reshape(width, 4)


def hierarchy_correct(subtask_b, misogyny, threshold, replace_misogynous):
    """Zero subcategory columns (1..4) of rows whose misogyny prob < threshold."""
    out = np.array(subtask_b, dtype=np.float64, copy=True)
    mis = np.asarray(misogyny, dtype=np.float64)
    low = mis < threshold
    out[low, 1:] = 0.0
    if replace_misogynous:
        out[:, 0] = mis
    return out
