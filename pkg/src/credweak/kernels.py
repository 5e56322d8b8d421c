"""Hot numeric kernels for label-model training: exhaustive state enumeration
and persistent Gibbs sweeps.

Each kernel ships in two builds: a numba ``@njit`` build and a pure-numpy
build. The default is picked once at import time from the CREDWEAK_NUMBA
environment variable:

- unset / "auto": numba when importable, numpy otherwise;
- "0" / "off" / "numpy": force the numpy build;
- "1" / "require": fail at import if numba is missing.

Both builds consume identical pre-drawn uniforms and share the same state
conventions, so they agree to floating-point noise; within one build results
are bit-stable run to run. Conventions:

- votes take values 1 (misinformation), 0 (legitimate), -1 (abstain);
- enumeration walks base-3 odometer digits ``d`` in {0,1,2}, vote = d - 1,
  with digit 0 least significant;
- Gibbs candidate votes are evaluated in the fixed order (-1, 0, 1);
- feature layout is [accuracy (n) | propensity (n) | correlation (|C|)].
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ValidationError

EXACT_MAX_N = 12  # 2 * 3^12 joint states is the largest enumerable model


# ---------------------------------------------------------------------------
# Kernel sources. Plain Python functions; the numba builds are jitted copies.
# ---------------------------------------------------------------------------

def _exact_expectations_source(n, w_acc, w_prop, corr_a, corr_b, w_corr):
    """Log-partition and feature expectations by full enumeration.

    One pass over all 3^n vote configurations x 2 labels, shifted by an upper
    bound on the score (sum of per-factor maxima) so exp never overflows.
    Streams states via an odometer; memory stays O(n) regardless of n.
    """
    npairs = corr_a.shape[0]
    num_states = 1
    for _ in range(n):
        num_states *= 3

    max_score = 0.0  # score of the all-abstain state is 0
    for j in range(n):
        best = 0.0
        if w_prop[j] > best:
            best = w_prop[j]
        if w_prop[j] + w_acc[j] > best:
            best = w_prop[j] + w_acc[j]
        max_score += best
    for p in range(npairs):
        if w_corr[p] > 0.0:
            max_score += w_corr[p]

    e_phi = np.zeros(2 * n + npairs, dtype=np.float64)
    z = 0.0
    digits = np.zeros(n, dtype=np.int8)
    for _ in range(num_states):
        base = 0.0
        a1 = 0.0
        a0 = 0.0
        for j in range(n):
            d = digits[j]
            if d != 0:
                base += w_prop[j]
                if d == 2:
                    a1 += w_acc[j]
                else:
                    a0 += w_acc[j]
        for p in range(npairs):
            if digits[corr_a[p]] == digits[corr_b[p]]:
                base += w_corr[p]
        m1 = np.exp(base + a1 - max_score)
        m0 = np.exp(base + a0 - max_score)
        both = m1 + m0
        z += both
        for j in range(n):
            d = digits[j]
            if d != 0:
                e_phi[n + j] += both
                if d == 2:
                    e_phi[j] += m1
                else:
                    e_phi[j] += m0
        for p in range(npairs):
            if digits[corr_a[p]] == digits[corr_b[p]]:
                e_phi[2 * n + p] += both
        for j in range(n):
            if digits[j] < 2:
                digits[j] += 1
                break
            digits[j] = 0

    for i in range(2 * n + npairs):
        e_phi[i] /= z
    log_z = max_score + np.log(z)
    return log_z, e_phi


def _gibbs_accumulate_source(lam, y, w_acc, w_prop, corr_a, corr_b, w_corr, uniforms):
    """Run full Gibbs sweeps over persistent chains, accumulating features.

    ``lam`` (chains, n) and ``y`` (chains,) are updated in place. One sweep
    resamples every vote variable then the label; after each sweep every
    chain state contributes one feature sample. ``uniforms`` has shape
    (sweeps, chains, n + 1) and supplies every random decision, so results
    are reproducible and independent of the kernel build.
    """
    sweeps = uniforms.shape[0]
    chains = lam.shape[0]
    n = lam.shape[1]
    npairs = corr_a.shape[0]
    phi = np.zeros(2 * n + npairs, dtype=np.float64)
    logits = np.empty(3, dtype=np.float64)  # candidate order (-1, 0, 1)
    for s in range(sweeps):
        for c in range(chains):
            for j in range(n):
                logits[0] = 0.0
                logits[1] = w_prop[j]
                logits[2] = w_prop[j]
                logits[y[c] + 1] += w_acc[j]
                for p in range(npairs):
                    if corr_a[p] == j:
                        logits[lam[c, corr_b[p]] + 1] += w_corr[p]
                    elif corr_b[p] == j:
                        logits[lam[c, corr_a[p]] + 1] += w_corr[p]
                m = logits[0]
                if logits[1] > m:
                    m = logits[1]
                if logits[2] > m:
                    m = logits[2]
                e0 = np.exp(logits[0] - m)
                e1 = np.exp(logits[1] - m)
                e2 = np.exp(logits[2] - m)
                r = uniforms[s, c, j] * (e0 + e1 + e2)
                if r < e0:
                    lam[c, j] = -1
                elif r < e0 + e1:
                    lam[c, j] = 0
                else:
                    lam[c, j] = 1
            t1 = 0.0
            t0 = 0.0
            for j in range(n):
                if lam[c, j] == 1:
                    t1 += w_acc[j]
                elif lam[c, j] == 0:
                    t0 += w_acc[j]
            p1 = 1.0 / (1.0 + np.exp(-(t1 - t0)))
            if uniforms[s, c, n] < p1:
                y[c] = 1
            else:
                y[c] = 0
            for j in range(n):
                if lam[c, j] == y[c]:
                    phi[j] += 1.0
                if lam[c, j] != -1:
                    phi[n + j] += 1.0
            for p in range(npairs):
                if lam[c, corr_a[p]] == lam[c, corr_b[p]]:
                    phi[2 * n + p] += 1.0
    return phi


# ---------------------------------------------------------------------------
# Pure-numpy builds (vectorised over states / chains).
# ---------------------------------------------------------------------------

def build_state_tables(n: int, corr_a: np.ndarray, corr_b: np.ndarray) -> dict:
    """Indicator matrices over all 3^n vote configurations for the numpy build.

    float64 throughout (~150 MB at n=12); the jit build streams states and
    never materialises these.
    """
    powers = 3 ** np.arange(n, dtype=np.int64)
    states = ((np.arange(3**n, dtype=np.int64)[:, None] // powers) % 3 - 1).astype(np.int8)
    a1 = (states == 1).astype(np.float64)
    a0 = (states == 0).astype(np.float64)
    prop = a1 + a0
    corr = (states[:, corr_a] == states[:, corr_b]).astype(np.float64)
    return {"a1": a1, "a0": a0, "prop": prop, "corr": corr}


def exact_expectations_numpy(n, w_acc, w_prop, corr_a, corr_b, w_corr, tables=None):
    if tables is None:
        tables = build_state_tables(n, corr_a, corr_b)
    a1, a0, prop, corr = tables["a1"], tables["a0"], tables["prop"], tables["corr"]
    base = prop @ w_prop
    if w_corr.shape[0]:
        base += corr @ w_corr
    s1 = a1 @ w_acc + base
    s0 = a0 @ w_acc + base
    m = max(s1.max(), s0.max())
    m1 = np.exp(s1 - m)
    m0 = np.exp(s0 - m)
    z = m1.sum() + m0.sum()
    e_acc = (a1.T @ m1 + a0.T @ m0) / z
    both = m1 + m0
    e_prop = prop.T @ both / z
    e_corr = corr.T @ both / z if w_corr.shape[0] else np.zeros(0)
    log_z = m + np.log(z)
    return log_z, np.concatenate([e_acc, e_prop, e_corr])


def gibbs_accumulate_numpy(lam, y, w_acc, w_prop, corr_a, corr_b, w_corr, uniforms):
    sweeps = uniforms.shape[0]
    chains, n = lam.shape
    npairs = corr_a.shape[0]
    phi = np.zeros(2 * n + npairs, dtype=np.float64)
    rows = np.arange(chains)
    for s in range(sweeps):
        for j in range(n):
            logits = np.zeros((chains, 3))
            logits[:, 1] = w_prop[j]
            logits[:, 2] = w_prop[j]
            logits[rows, y.astype(np.int64) + 1] += w_acc[j]
            for p in range(npairs):
                if corr_a[p] == j:
                    other = lam[:, corr_b[p]]
                elif corr_b[p] == j:
                    other = lam[:, corr_a[p]]
                else:
                    continue
                logits[rows, other.astype(np.int64) + 1] += w_corr[p]
            m = logits.max(axis=1, keepdims=True)
            probs = np.exp(logits - m)
            cum = np.cumsum(probs, axis=1)
            r = uniforms[s, :, j] * cum[:, -1]
            idx = (cum <= r[:, None]).sum(axis=1)
            np.minimum(idx, 2, out=idx)
            lam[:, j] = (idx - 1).astype(lam.dtype)
        t1 = (lam == 1).astype(np.float64) @ w_acc
        t0 = (lam == 0).astype(np.float64) @ w_acc
        p1 = 1.0 / (1.0 + np.exp(-(t1 - t0)))
        y[:] = (uniforms[s, :, n] < p1).astype(y.dtype)
        phi[:n] += (lam == y[:, None]).sum(axis=0)
        phi[n : 2 * n] += (lam != -1).sum(axis=0)
        for p in range(npairs):
            phi[2 * n + p] += np.count_nonzero(lam[:, corr_a[p]] == lam[:, corr_b[p]])
    return phi


# ---------------------------------------------------------------------------
# Build selection.
# ---------------------------------------------------------------------------

_env = os.environ.get("CREDWEAK_NUMBA", "auto").strip().lower()
if _env in ("0", "off", "false", "numpy"):
    _requested = "numpy"
elif _env in ("1", "on", "true", "require"):
    _requested = "require"
else:
    _requested = "auto"

exact_expectations_numba = None
gibbs_accumulate_numba = None
HAVE_NUMBA = False
if _requested != "numpy":
    try:
        from numba import njit

        exact_expectations_numba = njit(cache=True)(_exact_expectations_source)
        gibbs_accumulate_numba = njit(cache=True)(_gibbs_accumulate_source)
        HAVE_NUMBA = True
    except ImportError:
        if _requested == "require":
            raise

USE_NUMBA = HAVE_NUMBA and _requested != "numpy"


def active_build() -> str:
    return "numba" if USE_NUMBA else "numpy"


def _resolve(use_numba: bool | None) -> bool:
    if use_numba is None:
        return USE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise ValidationError("numba build requested but numba is unavailable")
    return use_numba


def gibbs_accumulate(lam, y, w_acc, w_prop, corr_a, corr_b, w_corr, uniforms, use_numba=None):
    """Dispatch to the active Gibbs build. See `_gibbs_accumulate_source`."""
    if _resolve(use_numba):
        return gibbs_accumulate_numba(lam, y, w_acc, w_prop, corr_a, corr_b, w_corr, uniforms)
    return gibbs_accumulate_numpy(lam, y, w_acc, w_prop, corr_a, corr_b, w_corr, uniforms)


class ExactEngine:
    """Evaluator of log Z and model feature expectations for one model shape.

    The numpy build precomputes indicator tables once per instance; the numba
    build streams states. Instances are reused across training epochs.
    """

    def __init__(self, n: int, corr_a: np.ndarray, corr_b: np.ndarray, use_numba: bool | None = None):
        if n < 1:
            raise ValidationError(f"need at least one labeling function, got n={n}")
        if n > EXACT_MAX_N:
            raise ValidationError(
                f"exact enumeration supports n <= {EXACT_MAX_N}, got n={n}; use gibbs mode"
            )
        self.n = n
        self.corr_a = np.ascontiguousarray(corr_a, dtype=np.int64)
        self.corr_b = np.ascontiguousarray(corr_b, dtype=np.int64)
        self._use_numba = _resolve(use_numba)
        self._tables = None if self._use_numba else build_state_tables(n, self.corr_a, self.corr_b)

    def expectations(self, w_acc, w_prop, w_corr) -> tuple[float, np.ndarray]:
        w_acc = np.ascontiguousarray(w_acc, dtype=np.float64)
        w_prop = np.ascontiguousarray(w_prop, dtype=np.float64)
        w_corr = np.ascontiguousarray(w_corr, dtype=np.float64)
        if self._use_numba:
            return exact_expectations_numba(
                self.n, w_acc, w_prop, self.corr_a, self.corr_b, w_corr
            )
        return exact_expectations_numpy(
            self.n, w_acc, w_prop, self.corr_a, self.corr_b, w_corr, self._tables
        )

    def log_partition(self, w_acc, w_prop, w_corr) -> float:
        return self.expectations(w_acc, w_prop, w_corr)[0]
