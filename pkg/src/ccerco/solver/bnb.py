"""Best-first branch-and-bound over binary variables of a conic program."""

from __future__ import annotations

import heapq
import logging
import time
from typing import Callable

import numpy as np

from .ipm import solve_convex
from .program import ConicProgram, Solution

__all__ = ["solve_misocp"]

logger = logging.getLogger(__name__)

Rounding = Callable[[np.ndarray, ConicProgram], np.ndarray]


def nearest_rounding(x: np.ndarray, prog: ConicProgram) -> np.ndarray:
    return np.round(x[prog.binaries])


def solve_misocp(
    prog: ConicProgram,
    tol: float = 1e-8,
    gap: float = 1e-6,
    node_limit: int = 10000,
    rounding: Rounding | None = nearest_rounding,
    int_tol: float = 1e-6,
) -> Solution:
    """Minimize over the binaries in ``prog.binaries``.

    Nodes are explored best bound first; the most fractional binary is
    branched on (lowest index on ties). ``rounding`` maps a relaxed point to a
    0/1 pattern that is tried as an incumbent by re-solving with the binaries
    fixed; pass ``None`` to disable the heuristic. The search stops when the
    relative gap ``(incumbent - bound) / max(1, |incumbent|)`` is at most
    ``gap``.
    """
    t0 = time.perf_counter()
    binaries = prog.binaries
    if binaries.size == 0:
        sol = solve_convex(prog, tol=tol)
        sol.nodes = 1
        sol.gap = 0.0 if sol.ok else sol.gap
        return sol

    relax = prog.relaxation()
    base_lb, base_ub = relax.lb, relax.ub
    stats = {"nodes": 0, "convex_solves": 0, "heuristic_hits": 0, "pruned": 0, "infeasible_nodes": 0,
             "bound_violations": 0, "max_depth": 0}
    tried: dict[tuple, Solution] = {}
    best_x: np.ndarray | None = None
    best_obj = np.inf
    best_sol: Solution | None = None

    def abs_gap(obj: float) -> float:
        return gap * max(1.0, abs(obj))

    def fixed_solve(pattern: np.ndarray) -> Solution:
        key = tuple(int(v) for v in pattern)
        if key not in tried:
            lb, ub = base_lb.copy(), base_ub.copy()
            lb[binaries] = pattern
            ub[binaries] = pattern
            if np.any(lb > ub):
                tried[key] = Solution("infeasible", None, np.inf)
            else:
                stats["convex_solves"] += 1
                tried[key] = solve_convex(relax.with_bounds(lb, ub), tol=tol)
        return tried[key]

    def offer(pattern: np.ndarray, heuristic: bool) -> None:
        nonlocal best_x, best_obj, best_sol
        sol = fixed_solve(pattern)
        if sol.ok and sol.objective < best_obj:
            best_obj = sol.objective
            best_sol = sol
            best_x = sol.x.copy()
            best_x[binaries] = pattern
            if heuristic:
                stats["heuristic_hits"] += 1
            logger.debug("new incumbent %.10g (%s)", best_obj, "heuristic" if heuristic else "integral node")

    counter = 0
    heap: list[tuple[float, int, int, np.ndarray, np.ndarray]] = []
    heapq.heappush(heap, (-np.inf, counter, 0, base_lb, base_ub))
    status = "optimal"
    root_status = None
    bound = -np.inf

    while heap:
        parent_bound, _, depth, lb, ub = heapq.heappop(heap)
        if parent_bound >= best_obj - abs_gap(best_obj):
            stats["pruned"] += 1 + len(heap)
            heap.clear()
            break
        if stats["nodes"] >= node_limit:
            counter += 1
            heapq.heappush(heap, (parent_bound, counter, depth, lb, ub))
            status = "node_limit"
            break
        stats["nodes"] += 1
        stats["max_depth"] = max(stats["max_depth"], depth)
        stats["convex_solves"] += 1
        sol = solve_convex(relax.with_bounds(lb, ub), tol=tol)
        if root_status is None:
            root_status = sol.status
            if sol.status == "unbounded":
                return Solution("unbounded", None, -np.inf, nodes=1, wall_time=time.perf_counter() - t0,
                                info=stats)
        if not sol.ok:
            stats["infeasible_nodes"] += 1
            continue
        obj = sol.objective
        if obj < parent_bound - abs_gap(parent_bound) - 1e-7:
            stats["bound_violations"] += 1
        if obj >= best_obj - abs_gap(best_obj):
            stats["pruned"] += 1
            continue
        xb = sol.x[binaries]
        frac = np.abs(xb - np.round(xb))
        if frac.max() <= int_tol:
            offer(np.round(xb), heuristic=False)
            continue
        if rounding is not None:
            offer(np.clip(np.round(rounding(sol.x, prog)), 0.0, 1.0), heuristic=True)
        # most fractional; argmax returns the lowest index on ties
        k = int(np.argmax(np.round(frac, 12)))
        j = int(binaries[k])
        for value in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = value
            counter += 1
            heapq.heappush(heap, (obj, counter, depth + 1, clb, cub))

    if heap:
        bound = min(best_obj, min(item[0] for item in heap))
    else:
        bound = best_obj
    stats["tree_open"] = len(heap)
    wall = time.perf_counter() - t0
    if best_x is None:
        st = "infeasible" if status == "optimal" else status
        return Solution(st, None, np.inf, nodes=stats["nodes"], bound=bound, wall_time=wall, info=stats)
    rel_gap = max(0.0, (best_obj - bound) / max(1.0, abs(best_obj))) if np.isfinite(bound) else np.inf
    return Solution(
        status=status,
        x=best_x,
        objective=best_obj,
        y=best_sol.y,
        z=best_sol.z,
        iterations=best_sol.iterations,
        nodes=stats["nodes"],
        gap=rel_gap,
        bound=bound,
        wall_time=wall,
        info=stats,
    )
