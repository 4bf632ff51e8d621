"""Exact solves for the absorbing count chain.

Hitting probabilities phi_u(x) = P_x[hit 0 before reaching >= u] solve the
first-step system phi(x) = p(x,0) + sum_{0<y<u} p(x,y) phi(y).  They decay
geometrically in x, so the solve is carried in signed log domain whenever a
rigorous floor on the solution cannot certify that a native-double solve is
underflow-safe.  Conditioning on that hitting event is a Doob transform of
the kernel by phi; expected absorption and occupation times under the
conditioned chain are ordinary dense solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .chain import ModelParams, transition_log_row
from .logdomain import LOG_ZERO, signed_add, signed_sum

HARMONICITY_TOL = 1e-8
ROW_SUM_TOL = 1e-9
VI_TOL = 1e-13
VI_MAX_SWEEPS = 10**6
#: native-double solves are used only when every solution entry provably
#: stays above this floor
NATIVE_FLOOR = math.log(1e-280)
UNCONDITIONAL_N_CAP = 400

METHOD_NATIVE = "dense-native"
METHOD_LOGDOMAIN = "dense-logdomain"
METHOD_VI = "value-iteration"
METHOD_CACHED = "cached"

PROFILE_FORMAT_VERSION = 1


class SolverError(RuntimeError):
    """A solve finished without meeting its residual contract."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class SolveOverflowError(SolverError):
    """A native expected-time solve overflowed; `state` names the first bad entry."""

    def __init__(self, message: str, state: int):
        super().__init__(message)
        self.state = state


class KernelConsistencyError(RuntimeError):
    """Tilted rows failed to sum to 1 within tolerance, signalling a bad profile."""


class ProfileFormatError(ValueError):
    """A profile text file could not be parsed; `path` names the file."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class HittingProfile:
    """log phi_u(x) for x = 0..u-1, plus the solve's residual and method.

    All entries are logs of strictly positive probabilities (every transient
    state reaches 0 in one step with positive mass), so a plain float vector
    of natural logs carries the sign-(+1) values losslessly.
    """

    params: ModelParams
    u: int
    log_phi: np.ndarray
    residual: float
    method: str

    def __post_init__(self):
        object.__setattr__(self, "log_phi", _frozen(self.log_phi))
        if self.u < 1 or len(self.log_phi) != self.u:
            raise ValueError(f"log_phi must hold exactly u={self.u} entries")
        if self.log_phi[0] != 0.0:
            raise ValueError("phi(0) must be 1 (log 0.0): absorption already happened")
        if not np.all(np.isfinite(self.log_phi)):
            raise ValueError("all phi entries must be strictly positive")

    def phi(self, x: int) -> float:
        """phi(x) as a native float (0.0 if the value underflows)."""
        return float(np.exp(self.log_phi[x]))


@dataclass(frozen=True)
class TiltedKernel:
    """Transition law of the chain conditioned to die before reaching u.

    rows[x-1, y] = p(x,y) * phi(y) / phi(x) for x in 1..u-1, y in 0..u-1.
    """

    u: int
    rows: np.ndarray
    source: HittingProfile = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(self.rows))
        if self.rows.shape != (self.u - 1, self.u):
            raise ValueError(f"rows must have shape ({self.u - 1}, {self.u})")

    @cached_property
    def row_cdfs(self) -> np.ndarray:
        """Per-row cumulative sums, for inverse-CDF sampling."""
        c = np.cumsum(self.rows, axis=1)
        c.flags.writeable = False
        return c


@dataclass(frozen=True)
class TimeProfile:
    """Expected step counts t[x] indexed by starting state x = 0, 1, ..."""

    values: np.ndarray
    conditional: bool

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values[0] != 0.0:
            raise ValueError("t(0) must be 0")


def _solve_m_matrix(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination without pivoting, native doubles.

    A is I minus a substochastic matrix (a nonsingular M-matrix), for which
    elimination in natural order is stable.  Row updates are elementwise
    vector operations, so results are bit-reproducible: no BLAS reductions
    with data-dependent ordering are involved.
    """
    A = A.copy()
    b = b.copy()
    m = b.size
    for k in range(m):
        akk = A[k, k]
        if not akk > 0.0:
            raise SolverError(f"nonpositive pivot at elimination step {k}")
        f = A[k + 1 :, k] / akk
        A[k + 1 :, k + 1 :] -= f[:, None] * A[k, k + 1 :][None, :]
        b[k + 1 :] -= f * b[k]
    x = np.empty(m)
    for i in range(m - 1, -1, -1):
        x[i] = (b[i] - np.sum(A[i, i + 1 :] * x[i + 1 :])) / A[i, i]
    return x


def _solve_signed_log(
    diag_log: np.ndarray, offdiag_log: np.ndarray, rhs_log: np.ndarray
) -> np.ndarray:
    """Solve (I - Q) x = c in signed log domain; returns log(x).

    diag_log[i] = log(1 - Q[i,i]); offdiag_log = log Q with the diagonal
    ignored; rhs_log = log c.  Q is substochastic and c positive, so the
    true solution is positive; a sign flip in the computed solution means
    the elimination lost the M-matrix structure and is reported as failure.
    """
    m = rhs_log.size
    S = np.full((m, m), -1, dtype=np.int8)
    L = np.array(offdiag_log, dtype=float)
    idx = np.arange(m)
    L[idx, idx] = diag_log
    S[idx, idx] = 1
    S[np.isneginf(L)] = 0
    sb = np.ones(m, dtype=np.int8)
    lb = np.array(rhs_log, dtype=float)

    for k in range(m):
        if S[k, k] != 1:
            raise SolverError(f"nonpositive pivot at elimination step {k}")
        # f = A[i,k] / A[k,k]; subtracting f * row_k == adding (-f) * row_k
        neg_fs = (-S[k + 1 :, k] * S[k, k]).astype(np.int8)
        fl = L[k + 1 :, k] - L[k, k]
        prod_s = neg_fs[:, None] * S[k, k + 1 :][None, :]
        prod_l = fl[:, None] + L[k, k + 1 :][None, :]
        S[k + 1 :, k + 1 :], L[k + 1 :, k + 1 :] = signed_add(
            S[k + 1 :, k + 1 :], L[k + 1 :, k + 1 :], prod_s, prod_l
        )
        sb[k + 1 :], lb[k + 1 :] = signed_add(
            sb[k + 1 :], lb[k + 1 :], neg_fs * sb[k], fl + lb[k]
        )

    xs = np.zeros(m, dtype=np.int8)
    xl = np.full(m, LOG_ZERO)
    for i in range(m - 1, -1, -1):
        ts = np.concatenate(([sb[i]], -S[i, i + 1 :] * xs[i + 1 :]))
        tl = np.concatenate(([lb[i]], L[i, i + 1 :] + xl[i + 1 :]))
        num = signed_sum(ts, tl)
        if num.sign != 1:
            raise SolverError(f"log-domain back substitution lost positivity at state {i + 1}")
        xs[i] = num.sign * S[i, i]
        xl[i] = num.log_magnitude - L[i, i]
    return xl


def _transient_log_rows(params: ModelParams, u: int) -> np.ndarray:
    """log p(x, y) for x = 1..u-1 (rows) and y = 0..u-1 (columns)."""
    return np.array([transition_log_row(params, x, u - 1) for x in range(1, u)])


def _harmonicity_residual(log_p: np.ndarray, log_phi: np.ndarray) -> float:
    """max_x | logsumexp_y(log p(x,y) + log phi(y)) - log phi(x) |."""
    if log_p.shape[0] == 0:
        return 0.0
    lhs = logsumexp(log_p + log_phi[None, :], axis=1)
    return float(np.max(np.abs(lhs - log_phi[1:])))


def hitting_profile(params: ModelParams, u: int, method: str | None = None) -> HittingProfile:
    """Solve for phi_u(x) = P_x[hit 0 before reaching >= u], x = 0..u-1.

    method=None picks dense-native when the one-step absorption masses
    certify that every solution entry stays above the underflow floor
    (phi(x) >= p(x,0)), and dense-logdomain otherwise.  Pass an explicit
    method to force a path; "value-iteration" is the independent
    cross-check, a monotone fixed-point iteration from phi = 0.
    """
    if not 1 <= u <= params.n:
        raise ValueError(f"threshold {u} outside [1, {params.n}]")
    if u == 1:
        return HittingProfile(params, 1, np.zeros(1), 0.0, method or METHOD_NATIVE)

    log_p = _transient_log_rows(params, u)
    if method is None:
        method = METHOD_NATIVE if log_p[:, 0].min() >= NATIVE_FLOOR else METHOD_LOGDOMAIN

    if method == METHOD_NATIVE:
        p = np.exp(log_p)
        A = np.eye(u - 1) - p[:, 1:]
        phi = _solve_m_matrix(A, p[:, 0])
        if np.any(phi <= 0.0):
            raise SolverError("native solve produced nonpositive probabilities")
        log_phi = np.concatenate(([0.0], np.log(phi)))
    elif method == METHOD_LOGDOMAIN:
        idx = np.arange(u - 1)
        diag_log = np.log1p(-np.exp(log_p[idx, idx + 1]))
        log_phi_t = _solve_signed_log(diag_log, log_p[:, 1:], log_p[:, 0])
        log_phi = np.concatenate(([0.0], log_phi_t))
    elif method == METHOD_VI:
        log_phi = _value_iteration(log_p, u)
    else:
        raise ValueError(f"unknown method {method!r}")

    residual = _harmonicity_residual(log_p, log_phi)
    if not residual <= HARMONICITY_TOL:
        raise SolverError(
            f"harmonicity residual {residual:.3e} exceeds {HARMONICITY_TOL:.0e}",
            residual=residual,
        )
    return HittingProfile(params, u, log_phi, residual, method)


def _value_iteration(log_p: np.ndarray, u: int) -> np.ndarray:
    """Monotone iteration phi_{k+1}(x) = p(x,0) + sum p(x,y) phi_k(y), in logs.

    phi_k(x) is the probability of absorption within k steps while staying
    below u, so the iterates increase to the true phi.
    """
    log_phi = np.full(u, LOG_ZERO)
    log_phi[0] = 0.0
    for _ in range(VI_MAX_SWEEPS):
        nxt = np.concatenate(([0.0], logsumexp(log_p + log_phi[None, :], axis=1)))
        change = np.max(np.abs(nxt - log_phi))
        log_phi = nxt
        if change < VI_TOL:
            return log_phi
    raise SolverError(
        f"value iteration did not converge in {VI_MAX_SWEEPS} sweeps",
        residual=float(change),
    )


def tilted_kernel(profile: HittingProfile) -> TiltedKernel:
    """Doob transform of the kernel by phi: rows over y = 0..u-1 for x = 1..u-1.

    Each raw row must already sum to 1 within 1e-9 (harmonicity of phi);
    rows are then renormalized exactly.  A larger deviation means the
    profile is inconsistent with the kernel and is reported as an error.
    """
    if not profile.residual <= HARMONICITY_TOL:
        raise ValueError(f"profile residual {profile.residual:.3e} out of contract")
    u = profile.u
    if u == 1:
        return TiltedKernel(1, np.zeros((0, 1)), profile)
    log_p = _transient_log_rows(profile.params, u)
    log_rows = log_p + profile.log_phi[None, :] - profile.log_phi[1:, None]
    rows = np.exp(log_rows)
    sums = rows.sum(axis=1)
    worst = int(np.argmax(np.abs(sums - 1.0)))
    if abs(sums[worst] - 1.0) > ROW_SUM_TOL:
        raise KernelConsistencyError(
            f"tilted row for x={worst + 1} sums to {sums[worst]:.12f}, "
            f"off by more than {ROW_SUM_TOL:.0e}"
        )
    return TiltedKernel(u, rows / sums[:, None], profile)


def conditional_expected_extinction(kernel: TiltedKernel) -> TimeProfile:
    """Expected steps to absorption under the conditioned chain, t(0) = 0."""
    m = kernel.u - 1
    if m == 0:
        return TimeProfile(np.zeros(1), conditional=True)
    A = np.eye(m) - kernel.rows[:, 1:]
    t = _solve_m_matrix(A, np.ones(m))
    return TimeProfile(np.concatenate(([0.0], t)), conditional=True)


def unconditional_expected_extinction(params: ModelParams) -> TimeProfile:
    """Expected absorption time of the raw chain from every state.

    Values grow exponentially in n, so this solve stays in native doubles
    with an explicit cap on n and overflow turned into a hard error rather
    than silent infinities.
    """
    n = params.n
    if n > UNCONDITIONAL_N_CAP:
        raise ValueError(
            f"n={n} exceeds the native-precision cap {UNCONDITIONAL_N_CAP}; "
            "expected times overflow doubles well below that scale"
        )
    rows = np.exp(np.array([transition_log_row(params, x) for x in range(1, n + 1)]))
    A = np.eye(n) - rows[:, 1:]
    t = _solve_m_matrix(A, np.ones(n))
    bad = np.flatnonzero(~np.isfinite(t))
    if bad.size:
        raise SolveOverflowError(
            f"expected time from state {bad[0] + 1} overflowed", state=int(bad[0] + 1)
        )
    return TimeProfile(np.concatenate(([0.0], t)), conditional=False)


def conditional_occupation_time(kernel: TiltedKernel, delta: float) -> TimeProfile:
    """Expected conditioned time spent with delta*n < X < u, from every start.

    Solves t(x) = 1{delta*n < x < u} + sum_{0<y<u} p_phi(x,y) t(y).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    n = kernel.source.params.n
    if delta * n >= kernel.u:
        raise ValueError(f"band floor delta*n={delta * n:.6g} must lie below u={kernel.u}")
    m = kernel.u - 1
    if m == 0:
        return TimeProfile(np.zeros(1), conditional=True)
    x = np.arange(1, kernel.u)
    in_band = (x > delta * n).astype(float)
    A = np.eye(m) - kernel.rows[:, 1:]
    t = _solve_m_matrix(A, in_band)
    return TimeProfile(np.concatenate(([0.0], t)), conditional=True)


# ---------------------------------------------------------------------------
# profile text format (version 1)
#
#   version=1
#   lambda=<17 significant digits>
#   n=<int>
#   u=<int>
#   residual=<17 significant digits>
#   <x> TAB <log_phi, 17 significant digits>      (one line per x, ascending)
# ---------------------------------------------------------------------------


def _g17(v: float) -> str:
    return format(v, ".17g")


def write_profile(profile: HittingProfile, path: str | Path) -> None:
    lines = [
        f"version={PROFILE_FORMAT_VERSION}",
        f"lambda={_g17(profile.params.lam)}",
        f"n={profile.params.n}",
        f"u={profile.u}",
        f"residual={_g17(profile.residual)}",
    ]
    lines.extend(f"{x}\t{_g17(lp)}" for x, lp in enumerate(profile.log_phi))
    Path(path).write_text("\n".join(lines) + "\n")


def read_profile(path: str | Path) -> HittingProfile:
    """Parse a version-1 profile file; malformed content raises ProfileFormatError."""
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if len(lines) < 6:
        raise ProfileFormatError("truncated profile file", str(path))
    header = {}
    for key in ("version", "lambda", "n", "u", "residual"):
        line = lines.pop(0)
        if not line.startswith(key + "="):
            raise ProfileFormatError(f"expected '{key}=' header line, got {line!r}", str(path))
        header[key] = line.split("=", 1)[1]
    try:
        version = int(header["version"])
        lam = float(header["lambda"])
        n = int(header["n"])
        u = int(header["u"])
        residual = float(header["residual"])
    except ValueError as exc:
        raise ProfileFormatError(f"bad header value: {exc}", str(path)) from None
    if version != PROFILE_FORMAT_VERSION:
        raise ProfileFormatError(f"unsupported version {version}", str(path))
    body = [line for line in lines if line]
    if len(body) != u:
        raise ProfileFormatError(f"expected {u} data lines, found {len(body)}", str(path))
    log_phi = np.empty(u)
    for i, line in enumerate(body):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ProfileFormatError(f"malformed data line {line!r}", str(path))
        try:
            x, lp = int(parts[0]), float(parts[1])
        except ValueError:
            raise ProfileFormatError(f"malformed data line {line!r}", str(path)) from None
        if x != i:
            raise ProfileFormatError(f"data line out of order: expected x={i}, got {x}", str(path))
        log_phi[i] = lp
    try:
        return HittingProfile(ModelParams(lam, n), u, log_phi, residual, METHOD_CACHED)
    except ValueError as exc:
        raise ProfileFormatError(f"inconsistent profile content: {exc}", str(path)) from None
