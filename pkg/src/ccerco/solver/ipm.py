"""Primal-dual interior-point method for linear and second-order cone programs.

The solver works on the standard form::

    minimize    c.x
    subject to  G x + s = h,   A x = b,   s in K

where ``K`` is a product of a nonnegative orthant and second-order cones. It
runs a homogeneous self-dual embedding with Nesterov-Todd scaling and
Mehrotra predictor-corrector steps, so infeasible and unbounded problems are
detected from certificates rather than by iteration limits. Linear algebra is
dense apart from the scaled constraint matrix, which is kept sparse.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .program import ConicProgram, Solution

__all__ = ["solve_convex"]

logger = logging.getLogger(__name__)

STEP = 0.99


class _Cones:
    """Layout of the cone K: ``l`` orthant rows then SOC groups of equal size."""

    def __init__(self, l: int, groups: list[tuple[int, int]]):
        self.l = l
        self.groups = []  # (start row, count, dim)
        row = l
        for count, dim in groups:
            self.groups.append((row, count, dim))
            row += count * dim
        self.m = row
        self.degree = l + sum(c for _, c, _ in self.groups)

    def blocks(self, v: np.ndarray):
        for start, count, dim in self.groups:
            yield v[start : start + count * dim].reshape(count, dim)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[: self.l] = 1.0
        for blk in self.blocks(e):
            blk[:, 0] = 1.0
        return e

    def dot(self, u, v) -> float:
        return float(u @ v)

    def jordan(self, u, v) -> np.ndarray:
        out = np.empty(self.m)
        out[: self.l] = u[: self.l] * v[: self.l]
        for (start, count, dim), bu, bv in zip(self.groups, self.blocks(u), self.blocks(v)):
            o = np.empty((count, dim))
            o[:, 0] = np.einsum("ij,ij->i", bu, bv)
            o[:, 1:] = bu[:, :1] * bv[:, 1:] + bv[:, :1] * bu[:, 1:]
            out[start : start + count * dim] = o.ravel()
        return out

    def jordan_solve(self, lam, v) -> np.ndarray:
        """u with lam o u = v."""
        out = np.empty(self.m)
        out[: self.l] = v[: self.l] / lam[: self.l]
        for (start, count, dim), bl, bv in zip(self.groups, self.blocks(lam), self.blocks(v)):
            l0 = bl[:, 0]
            l1 = bl[:, 1:]
            det = _jnorm2(bl)
            u0 = (l0 * bv[:, 0] - np.einsum("ij,ij->i", l1, bv[:, 1:])) / det
            u1 = (bv[:, 1:] - u0[:, None] * l1) / l0[:, None]
            out[start : start + count * dim] = np.column_stack([u0, u1]).ravel()
        return out

    def max_step(self, s, ds) -> float:
        """Largest t with s + t ds in K (inf when unbounded)."""
        t = np.inf
        if self.l:
            neg = ds[: self.l] < 0
            if np.any(neg):
                t = min(t, float(np.min(-s[: self.l][neg] / ds[: self.l][neg])))
        for bs, bd in zip(self.blocks(s), self.blocks(ds)):
            t = min(t, _soc_max_step(bs, bd))
        return t

    def interior_shift(self, s) -> float:
        """Smallest t such that s + t e is in the closed cone."""
        t = -np.inf
        if self.l:
            t = max(t, float(-s[: self.l].min()))
        for bs in self.blocks(s):
            t = max(t, float(np.max(np.linalg.norm(bs[:, 1:], axis=1) - bs[:, 0])))
        return t


def _jnorm2(blk: np.ndarray) -> np.ndarray:
    """x0^2 - ||x1||^2 evaluated without cancellation."""
    r = np.linalg.norm(blk[:, 1:], axis=1)
    return (blk[:, 0] - r) * (blk[:, 0] + r)


def _soc_max_step(s: np.ndarray, ds: np.ndarray) -> float:
    # (s0 + t d0)^2 - ||s1 + t d1||^2 = a t^2 + 2 b t + c, c > 0 in the interior
    a = ds[:, 0] ** 2 - np.einsum("ij,ij->i", ds[:, 1:], ds[:, 1:])
    b = s[:, 0] * ds[:, 0] - np.einsum("ij,ij->i", s[:, 1:], ds[:, 1:])
    c = np.maximum(_jnorm2(s), 0.0)
    t = np.full(s.shape[0], np.inf)
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        # a < 0: exactly one positive root
        neg = a < 0
        q = -(b + np.where(b >= 0, sq, -sq))
        r1 = np.where(q != 0, c / q, np.inf)
        r2 = np.where(a != 0, q / a, np.inf)
        roots = np.stack([r1, r2])
        roots = np.where(roots > 0, roots, np.inf)
        smallest = roots.min(axis=0)
        t = np.where(neg, smallest, t)
        # a > 0 with b < 0 and real roots: the cone is left at the smaller root
        pos = (a > 0) & (b < 0) & (disc >= 0)
        t = np.where(pos, smallest, t)
        # a == 0: linear in t
        lin = (a == 0) & (b < 0)
        t = np.where(lin, -c / (2 * b), t)
    # the t d0 + s0 >= 0 nappe condition
    d0neg = ds[:, 0] < 0
    if np.any(d0neg):
        t = np.where(d0neg, np.minimum(t, -s[:, 0] / np.where(d0neg, ds[:, 0], -1.0)), t)
    return float(t.min()) if t.size else np.inf


@dataclass
class _Scaling:
    W: sp.csr_matrix
    Winv: sp.csr_matrix
    lam: np.ndarray


def _nt_scaling(cones: _Cones, s: np.ndarray, z: np.ndarray) -> _Scaling:
    l = cones.l
    d = np.sqrt(s[:l] / z[:l])
    w_blocks, winv_blocks = [], []
    for bs, bz in zip(cones.blocks(s), cones.blocks(z)):
        ns = np.sqrt(_jnorm2(bs))
        nz = np.sqrt(_jnorm2(bz))
        sb = bs / ns[:, None]
        zb = bz / nz[:, None]
        gamma = np.sqrt((1.0 + np.einsum("ij,ij->i", sb, zb)) / 2.0)
        jz = zb.copy()
        jz[:, 1:] *= -1.0
        wb = (sb + jz) / (2.0 * gamma[:, None])
        eta = np.sqrt(ns / nz)
        dim = bs.shape[1]
        w0 = wb[:, 0]
        w1 = wb[:, 1:]
        lower = np.eye(dim - 1)[None] + np.einsum("ki,kj->kij", w1, w1) / (1.0 + w0)[:, None, None]
        Wk = np.empty((bs.shape[0], dim, dim))
        Wk[:, 0, 0] = w0
        Wk[:, 0, 1:] = w1
        Wk[:, 1:, 0] = w1
        Wk[:, 1:, 1:] = lower
        Winvk = Wk.copy()
        Winvk[:, 0, 1:] *= -1.0
        Winvk[:, 1:, 0] *= -1.0
        Wk *= eta[:, None, None]
        Winvk /= eta[:, None, None]
        w_blocks.append(Wk)
        winv_blocks.append(Winvk)
    W = _block_diag(d, w_blocks, cones)
    Winv = _block_diag(1.0 / d, winv_blocks, cones)
    lam = W @ z
    return _Scaling(W, Winv, lam)


def _block_diag(diag: np.ndarray, blocks: list[np.ndarray], cones: _Cones) -> sp.csr_matrix:
    rows = [np.arange(cones.l)]
    cols = [np.arange(cones.l)]
    vals = [diag]
    for (start, count, dim), B in zip(cones.groups, blocks):
        base = start + dim * np.arange(count)
        ii = base[:, None, None] + np.arange(dim)[None, :, None]
        jj = base[:, None, None] + np.arange(dim)[None, None, :]
        rows.append(np.broadcast_to(ii, B.shape).ravel())
        cols.append(np.broadcast_to(jj, B.shape).ravel())
        vals.append(B.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(cones.m, cones.m)
    )


class _KKT:
    """Solves [[0, A', G'], [A, 0, 0], [G, 0, -W'W]] [ux; uy; uz] = [bx; by; bz]."""

    def __init__(self, G: sp.csr_matrix, A: np.ndarray, scaling: _Scaling):
        self.G, self.A, self.sc = G, A, scaling
        self.Gh = (scaling.Winv @ G).tocsr()
        H = (self.Gh.T @ self.Gh).toarray()
        M = H + A.T @ A if A.shape[0] else H
        n = M.shape[0]
        scale = max(float(np.max(np.abs(np.diag(M)))) if n else 1.0, 1.0)
        reg = 0.0
        while True:
            try:
                self.Mc = la.cho_factor(M + reg * np.eye(n), check_finite=False)
                break
            except la.LinAlgError:
                reg = scale * 1e-13 if reg == 0.0 else reg * 100.0
                if reg > scale * 1e-3:
                    raise
        self.reg = reg
        if A.shape[0]:
            MiAt = la.cho_solve(self.Mc, A.T, check_finite=False)
            S = A @ MiAt
            sreg = 0.0
            sscale = max(float(np.max(np.abs(np.diag(S)))), 1e-300)
            while True:
                try:
                    self.Sc = la.cho_factor(S + sreg * np.eye(S.shape[0]), check_finite=False)
                    break
                except la.LinAlgError:
                    sreg = sscale * 1e-13 if sreg == 0.0 else sreg * 100.0
                    if sreg > sscale * 1e-3:
                        raise

    def _solve_once(self, bx, by, bz):
        A, sc = self.A, self.sc
        r = bx + self.Gh.T @ (sc.Winv @ bz)
        if A.shape[0]:
            r = r + A.T @ by
            Mir = la.cho_solve(self.Mc, r, check_finite=False)
            uy = la.cho_solve(self.Sc, A @ Mir - by, check_finite=False)
            ux = Mir - la.cho_solve(self.Mc, A.T @ uy, check_finite=False)
        else:
            uy = np.zeros(0)
            ux = la.cho_solve(self.Mc, r, check_finite=False)
        uz = sc.Winv @ (self.Gh @ ux - sc.Winv @ bz)
        return ux, uy, uz

    def solve(self, bx, by, bz, refine: int = 2):
        ux, uy, uz = self._solve_once(bx, by, bz)
        for _ in range(refine):
            rx = bx - (self.A.T @ uy + self.G.T @ uz)
            ry = by - self.A @ ux
            rz = bz - (self.G @ ux - self.sc.W @ (self.sc.W @ uz))
            dx, dy, dz = self._solve_once(rx, ry, rz)
            ux, uy, uz = ux + dx, uy + dy, uz + dz
        return ux, uy, uz


def _conelp(c, G, h, cones: _Cones, A, b, tol: float, max_iter: int) -> dict:
    n = c.size
    m = cones.m
    e = cones.identity()
    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b))
    resz0 = max(1.0, np.linalg.norm(h))

    # starting point from two least-squares problems with identity scaling
    ident = _Scaling(sp.identity(m, format="csr"), sp.identity(m, format="csr"), np.ones(m))
    kkt = _KKT(G, A, ident)
    x, y, st = kkt.solve(np.zeros(n), b, h)
    s = -st
    _, y2, z = kkt.solve(-c, np.zeros(A.shape[0]), np.zeros(m))
    y = y2
    for v in (s, z):
        t = cones.interior_shift(v)
        nrm = max(np.linalg.norm(v), 1.0)
        if t >= -1e-8 * nrm:
            v += (1.0 + t) * e
    tau, kappa = 1.0, 1.0

    status = "iteration_limit"
    it = 0
    pcost = dcost = np.nan
    history = []
    for it in range(max_iter + 1):
        hrx = -(A.T @ y) - G.T @ z
        hry = A @ x
        hrz = s + G @ x
        rx = hrx - c * tau
        ry = hry - b * tau
        rz = hrz - h * tau
        cx, by, hz = float(c @ x), float(b @ y), float(h @ z)
        rt = kappa + cx + by + hz
        gap = cones.dot(s, z)
        mu = (gap + tau * kappa) / (cones.degree + 1)
        pcost = cx / tau
        dcost = -(by + hz) / tau
        gap_t = gap / tau**2
        relgap = gap_t / max(1.0, min(abs(pcost), abs(dcost)))
        pres = max(np.linalg.norm(ry) / tau / resy0, np.linalg.norm(rz) / tau / resz0)
        dres = np.linalg.norm(rx) / tau / resx0
        pinf = np.linalg.norm(hrx) / resx0 / -(hz + by) if hz + by < 0 else np.inf
        dinf = (
            max(np.linalg.norm(hry) / resy0, np.linalg.norm(hrz) / resz0) / -cx if cx < 0 else np.inf
        )
        # pcost - dcost = (s.z - rx.x - ry.y - rz.z) / tau^2, so weak duality
        # holds up to this residual term on infeasible iterates
        slack = float(rx @ x + ry @ y + rz @ z) / tau**2
        history.append((pcost, dcost, gap_t, pres, dres, slack))
        logger.debug(
            "it %2d pcost %.8e dcost %.8e gap %.2e pres %.2e dres %.2e k/t %.2e",
            it, pcost, dcost, gap_t, pres, dres, kappa / tau,
        )
        if pres <= tol and dres <= tol and (gap_t <= tol or relgap <= tol):
            status = "optimal"
            break
        if pinf <= tol:
            status = "infeasible"
            break
        if dinf <= tol:
            status = "unbounded"
            break
        if it == max_iter:
            break

        try:
            sc = _nt_scaling(cones, s, z)
            kkt = _KKT(G, A, sc)
        except (la.LinAlgError, FloatingPointError, ValueError) as exc:
            logger.debug("factorization failed: %s", exc)
            status = "numerical_error"
            break
        lam = sc.lam
        x1, y1, z1 = kkt.solve(-c, b, h)
        lamsq = cones.jordan(lam, lam)

        def newton(sigma: float, ds_corr: np.ndarray | None, dk_corr: float):
            k = 1.0 - sigma
            rhs5 = -lamsq + sigma * mu * e
            if ds_corr is not None:
                rhs5 = rhs5 - ds_corr
            rhs6 = -tau * kappa + sigma * mu - dk_corr
            q = cones.jordan_solve(lam, rhs5)
            wq = sc.W @ q
            r3 = k * rz + wq
            x0, y0, z0 = kkt.solve(k * rx, -k * ry, -r3)
            num = k * rt + rhs6 / tau + c @ x0 + b @ y0 + h @ z0
            den = kappa / tau - c @ x1 - b @ y1 - h @ z1
            dtau = num / den
            dx = x0 + dtau * x1
            dy = y0 + dtau * y1
            dz = z0 + dtau * z1
            ds = wq - sc.W @ (sc.W @ dz)
            dkappa = (rhs6 - kappa * dtau) / tau
            return dx, dy, dz, dtau, ds, dkappa

        def step_length(dz, dtau, ds, dkappa):
            t = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                t = min(t, -tau / dtau)
            if dkappa < 0:
                t = min(t, -kappa / dkappa)
            return t

        with np.errstate(all="raise"):
            try:
                dxa, dya, dza, dtaua, dsa, dkappaa = newton(0.0, None, 0.0)
                alpha_a = min(1.0, step_length(dza, dtaua, dsa, dkappaa))
                sigma = (1.0 - alpha_a) ** 3
                corr = cones.jordan(sc.Winv @ dsa, sc.W @ dza)
                dx, dy, dz, dtau, ds, dkappa = newton(sigma, corr, dtaua * dkappaa)
                alpha = min(1.0, STEP * step_length(dz, dtau, ds, dkappa))
            except FloatingPointError as exc:
                logger.debug("floating point failure: %s", exc)
                status = "numerical_error"
                break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    inaccurate = False
    if status in ("numerical_error", "iteration_limit"):
        loose = 1e-6
        if pres <= loose and dres <= loose and (gap_t <= loose or relgap <= loose):
            status, inaccurate = "optimal", True
    return {
        "status": status,
        "inaccurate": inaccurate,
        "x": x / tau,
        "y": y / tau,
        "z": z / tau,
        "s": s / tau,
        "iterations": it,
        "history": history,
        "pcost": pcost,
        "dcost": dcost,
        "x_raw": x,
        "y_raw": y,
        "z_raw": z,
    }


# ---------------------------------------------------------------------------


@dataclass
class _Reduced:
    keep: np.ndarray
    x_fixed: np.ndarray
    offset: float
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    cones: _Cones
    eq_rows: np.ndarray  # original equality rows kept
    lin_rows: np.ndarray  # original G rows kept (first in the standard form)
    n_bounds: int
    status: str = "ok"
    detail: str = ""


def _presolve(prog: ConicProgram) -> _Reduced:
    n = prog.n
    lb, ub = prog.lb, prog.ub
    if np.any(lb > ub):
        j = int(np.argmax(lb > ub))
        return _infeasible(prog, f"empty bounds on {prog.name_of(j)}")
    fixed = np.isfinite(lb) & (lb == ub)
    keep = np.flatnonzero(~fixed)
    xfix = np.where(fixed, lb, 0.0)
    offset = prog.offset + float(prog.c @ xfix)

    def feas_tol(v):
        return 1e-9 * max(1.0, abs(v))

    A = prog.A_eq[:, keep]
    b = prog.b_eq - prog.A_eq @ xfix
    nz = np.any(A != 0, axis=1)
    for i in np.flatnonzero(~nz):
        if abs(b[i]) > feas_tol(b[i]):
            return _infeasible(prog, f"equality row {i} reduces to 0 = {b[i]}")
    eq_rows = np.flatnonzero(nz)
    A, b = A[nz], b[nz]

    Gl = prog.G[:, keep]
    hl = prog.h - prog.G @ xfix
    nzg = np.any(Gl != 0, axis=1)
    for i in np.flatnonzero(~nzg):
        if hl[i] < -feas_tol(hl[i]):
            return _infeasible(prog, f"inequality row {i} reduces to 0 <= {hl[i]}")
    lin_rows = np.flatnonzero(nzg)
    Gl, hl = Gl[nzg], hl[nzg]

    nk = keep.size
    lo = np.flatnonzero(np.isfinite(lb[keep]))
    hi = np.flatnonzero(np.isfinite(ub[keep]))
    rows, cols, vals = [], [], []
    for k, j in enumerate(lo):
        rows.append(k), cols.append(j), vals.append(-1.0)
    for k, j in enumerate(hi):
        rows.append(lo.size + k), cols.append(j), vals.append(1.0)
    Gb = sp.csr_matrix((vals, (rows, cols)), shape=(lo.size + hi.size, nk))
    hb = np.concatenate([-lb[keep][lo], ub[keep][hi]])

    # cones grouped by dimension
    groups: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    for cone in prog.cones:
        Ak = cone.A[:, keep]
        bk = cone.b + cone.A @ xfix
        ck = cone.c[keep]
        dk = cone.d + float(cone.c @ xfix)
        if not np.any(Ak) and not np.any(ck):
            if np.linalg.norm(bk) > dk + feas_tol(dk):
                return _infeasible(prog, f"constant cone {cone.name!r} violated")
            continue
        Gk = -np.vstack([ck[None, :], Ak])
        hk = np.concatenate([[dk], bk])
        groups.setdefault(Gk.shape[0], []).append((Gk, hk))
    gl = []
    cone_G = []
    cone_h = []
    for dim in sorted(groups):
        items = groups[dim]
        gl.append((len(items), dim))
        cone_G.extend(g for g, _ in items)
        cone_h.extend(hh for _, hh in items)
    G = sp.vstack(
        [sp.csr_matrix(Gl), Gb] + ([sp.csr_matrix(np.vstack(cone_G))] if cone_G else []), format="csr"
    )
    h = np.concatenate([hl, hb] + ([np.concatenate(cone_h)] if cone_h else []))
    cones = _Cones(Gl.shape[0] + Gb.shape[0], gl)

    c = prog.c[keep]
    red = _Reduced(keep, xfix, offset, c, A, b, G, h, cones, eq_rows, lin_rows, Gb.shape[0])
    used = np.asarray(abs(G).sum(axis=0)).ravel() + (np.abs(A).sum(axis=0) if A.shape[0] else 0.0)
    idle = np.flatnonzero(used == 0)
    if idle.size:
        if np.any(c[idle] != 0):
            red.status = "unbounded"
            red.detail = f"{prog.name_of(int(keep[idle[np.argmax(c[idle] != 0)]]))} is unconstrained"
            return red
        # unconstrained and costless: pin to zero
        red.x_fixed = red.x_fixed.copy()
        mask = np.ones(keep.size, bool)
        mask[idle] = False
        red.keep = keep[mask]
        red.c = c[mask]
        red.A = A[:, mask]
        red.G = G[:, mask]
    return red


def _infeasible(prog: ConicProgram, detail: str) -> _Reduced:
    empty = _Cones(0, [])
    return _Reduced(np.zeros(0, int), np.zeros(prog.n), 0.0, np.zeros(0), np.zeros((0, 0)), np.zeros(0),
                    sp.csr_matrix((0, 0)), np.zeros(0), empty, np.zeros(0, int), np.zeros(0, int), 0,
                    status="infeasible", detail=detail)


def solve_convex(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 100) -> Solution:
    """Solve the continuous program; binary markers, if any, are ignored."""
    t0 = time.perf_counter()
    red = _presolve(prog)
    nan = float("nan")
    if red.status != "ok":
        return Solution(red.status, None, nan, wall_time=time.perf_counter() - t0, info={"detail": red.detail})
    if red.keep.size == 0:
        x = red.x_fixed.copy()
        return Solution("optimal", x, float(prog.c @ x + prog.offset), np.zeros(prog.A_eq.shape[0]),
                        np.zeros(prog.G.shape[0]), wall_time=time.perf_counter() - t0)
    out = _conelp(red.c, red.G, red.h, red.cones, red.A, red.b, tol, max_iter)
    x = red.x_fixed.copy()
    x[red.keep] = out["x"]
    y = np.zeros(prog.A_eq.shape[0])
    y[red.eq_rows] = out["y"]
    z = np.zeros(prog.G.shape[0])
    z[red.lin_rows] = out["z"][: red.lin_rows.size]
    status = out["status"]
    objective = float(prog.c @ x + prog.offset) if status in ("optimal", "iteration_limit") else nan
    info = {"pcost": out["pcost"] + red.offset, "dcost": out["dcost"] + red.offset, "inaccurate": out["inaccurate"],
            "history": [(p + red.offset, d + red.offset, *rest) for p, d, *rest in out["history"]]}
    if status == "infeasible":
        info["certificate"] = {"y": out["y_raw"], "z": out["z_raw"]}
    elif status == "unbounded":
        info["ray"] = out["x_raw"]
    return Solution(
        status=status,
        x=x if status in ("optimal", "iteration_limit", "numerical_error") else None,
        objective=objective,
        y=y,
        z=z,
        iterations=out["iterations"],
        gap=abs(info["pcost"] - info["dcost"]),
        bound=info["dcost"],
        wall_time=time.perf_counter() - t0,
        info=info,
    )
