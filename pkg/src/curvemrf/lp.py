"""Self-contained dense linear-program solver plus the L1-fit program builder.

The solver is a classical two-phase full-tableau simplex over the standard
form ``min c.z  s.t.  A z = b, z >= 0`` obtained by shifting, negating or
splitting bounded variables and adding slack/artificial columns.  Pricing is
Dantzig's rule with a deterministic switch to Bland's rule after a run of
non-improving pivots, so every solve is reproducible bit for bit.  After the
final basis is found the basic system is re-solved from the original data to
shed accumulated tableau drift, and the result is verified against every
constraint.

Intended for the dense mid-size programs produced by pattern fitting and the
pruned local-polytope relaxation (up to a few tens of thousands of
variables); not a general sparse LP code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEASIBILITY_TOL = 1e-8
REDUCED_COST_TOL = 1e-9
PIVOT_FLOOR = 1e-10
IMPROVEMENT_TOL = 1e-12

LE, GE, EQ = "<=", ">=", "="
_RELATIONS = (LE, GE, EQ)


class LpError(Exception):
    pass


class NumericalError(LpError):
    """Simplex exceeded its iteration budget or lost feasibility."""


@dataclass
class LinearProgram:
    """``min objective . x`` subject to row constraints and variable bounds.

    Each constraint is ``(coefficients, relation, rhs)`` with relation one of
    ``"<="``, ``">="``, ``"="``.  Bounds default to ``x >= 0``; use ``-inf`` /
    ``+inf`` entries for free or one-sided variables.
    """

    objective: np.ndarray
    constraints: list
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=np.float64)
        if self.objective.ndim != 1:
            raise ValueError("objective must be a vector")
        n = self.objective.size
        norm = []
        for coeffs, rel, rhs in self.constraints:
            a = np.asarray(coeffs, dtype=np.float64)
            if a.shape != (n,):
                raise ValueError(f"constraint row has shape {a.shape}, expected ({n},)")
            if rel not in _RELATIONS:
                raise ValueError(f"unknown relation {rel!r}")
            norm.append((a, rel, float(rhs)))
        self.constraints = norm
        self.lower = (
            np.zeros(n) if self.lower is None
            else np.asarray(self.lower, dtype=np.float64)
        )
        self.upper = (
            np.full(n, np.inf) if self.upper is None
            else np.asarray(self.upper, dtype=np.float64)
        )
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        if (self.lower > self.upper).any():
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_variables(self) -> int:
        return self.objective.size


@dataclass
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    values: np.ndarray | None = None
    objective_value: float | None = None
    dual_values: np.ndarray | None = None
    iterations: int = 0


@dataclass
class _StandardForm:
    matrix: np.ndarray          # (m, n_z)
    rhs: np.ndarray             # (m,) all >= 0
    cost: np.ndarray            # (n_z,) phase-2 costs
    const: float                # objective offset from bound shifts
    var_map: list               # per original var: ("shift",col,lo)|("neg",col,up)|("split",p,n)
    row_sign: np.ndarray        # +1/-1 per row (after rhs normalization)
    n_user_rows: int            # rows corresponding to user constraints
    slack_of_row: np.ndarray    # slack column per row or -1


def _standardize(p: LinearProgram) -> _StandardForm:
    n = p.n_variables
    var_map = []
    cols = []          # per z-column: (orig var index, multiplier)
    extra_rows = []    # (coeffs over z, LE, rhs) for finite upper bounds
    const = 0.0
    for j in range(n):
        lo, up = p.lower[j], p.upper[j]
        if np.isfinite(lo):
            col = len(cols)
            cols.append((j, 1.0))
            var_map.append(("shift", col, lo))
            const += p.objective[j] * lo
            if np.isfinite(up):
                extra_rows.append((col, up - lo))
        elif np.isfinite(up):
            col = len(cols)
            cols.append((j, -1.0))
            var_map.append(("neg", col, up))
            const += p.objective[j] * up
        else:
            cp = len(cols)
            cols.append((j, 1.0))
            cn = len(cols)
            cols.append((j, -1.0))
            var_map.append(("split", cp, cn))
    n_z = len(cols)
    cost = np.zeros(n_z)
    for col, (j, mult) in enumerate(cols):
        cost[col] += p.objective[j] * mult

    rows = []
    for coeffs, rel, rhs in p.constraints:
        a = np.zeros(n_z)
        shift = 0.0
        for col, (j, mult) in enumerate(cols):
            a[col] += coeffs[j] * mult
        for j in range(n):
            kind = var_map[j]
            if kind[0] == "shift":
                shift += coeffs[j] * kind[2]
            elif kind[0] == "neg":
                shift += coeffs[j] * kind[2]
        rows.append((a, rel, rhs - shift))
    n_user = len(rows)
    for col, ub in extra_rows:
        a = np.zeros(n_z)
        a[col] = 1.0
        rows.append((a, LE, ub))

    m = len(rows)
    slack_cols = sum(1 for _, rel, _ in rows if rel in (LE, GE))
    matrix = np.zeros((m, n_z + slack_cols))
    rhs_vec = np.zeros(m)
    row_sign = np.ones(m)
    slack_of_row = np.full(m, -1, dtype=np.int64)
    s = n_z
    for i, (a, rel, rhs) in enumerate(rows):
        sign = 1.0
        if rhs < 0:
            sign = -1.0
            a = -a
            rhs = -rhs
            rel = {LE: GE, GE: LE, EQ: EQ}[rel]
        row_sign[i] = sign
        matrix[i, :n_z] = a
        rhs_vec[i] = rhs
        if rel == LE:
            matrix[i, s] = 1.0
            slack_of_row[i] = s
            s += 1
        elif rel == GE:
            matrix[i, s] = -1.0
            slack_of_row[i] = s
            s += 1
    cost_full = np.concatenate([cost, np.zeros(slack_cols)])
    return _StandardForm(
        matrix=matrix,
        rhs=rhs_vec,
        cost=cost_full,
        const=const,
        var_map=var_map,
        row_sign=row_sign,
        n_user_rows=n_user,
        slack_of_row=slack_of_row,
    )


class _Tableau:
    """Full dense tableau with maintained phase-1/phase-2 reduced-cost rows."""

    def __init__(self, sf: _StandardForm):
        m, n = sf.matrix.shape
        self.m = m
        # decide initial basis: slack column where it enters with +1 and the
        # row needs nothing else, artificial otherwise
        art_rows = []
        basis = np.full(m, -1, dtype=np.int64)
        for i in range(m):
            s = sf.slack_of_row[i]
            if s >= 0 and sf.matrix[i, s] == 1.0:
                basis[i] = s
            else:
                art_rows.append(i)
        n_art = len(art_rows)
        self.n_struct = n
        self.T = np.hstack([sf.matrix, np.zeros((m, n_art))])
        self.b = sf.rhs.copy()
        self.art_cols = set()
        for k, i in enumerate(art_rows):
            col = n + k
            self.T[i, col] = 1.0
            basis[i] = col
            self.art_cols.add(col)
        self.basis = basis
        self.c2 = np.concatenate([sf.cost, np.zeros(n_art)])
        self.r2 = self.c2.copy()
        c1 = np.zeros(n + n_art)
        for col in self.art_cols:
            c1[col] = 1.0
        self.r1 = c1.copy()
        for i in art_rows:
            self.r1 -= self.T[i]
        self.allowed = np.ones(n + n_art, dtype=bool)
        for col in self.art_cols:
            self.allowed[col] = False
        self.iterations = 0
        self.lex_cols = basis.copy()

    @classmethod
    def from_feasible_basis(cls, matrix: np.ndarray, rhs: np.ndarray,
                            cost: np.ndarray, basis: np.ndarray) -> "_Tableau":
        """Start phase 2 directly from a known feasible basis whose columns
        form the identity in ``matrix`` (rhs must already be non-negative)."""
        tab = cls.__new__(cls)
        m, n = matrix.shape
        tab.m = m
        tab.n_struct = n
        tab.T = matrix
        tab.b = rhs
        tab.art_cols = set()
        tab.basis = np.asarray(basis, dtype=np.int64).copy()
        tab.c2 = cost
        cb = cost[tab.basis]
        tab.r2 = cost - cb @ matrix if cb.any() else cost.copy()
        tab.r1 = np.zeros(n)
        tab.allowed = np.ones(n, dtype=bool)
        tab.iterations = 0
        tab.lex_cols = tab.basis.copy()
        return tab

    def objective(self, phase: int) -> float:
        c = self.c2 if phase == 2 else None
        if phase == 1:
            return float(sum(self.b[i] for i in range(self.m)
                             if self.basis[i] in self.art_cols))
        return float(sum(c[self.basis[i]] * self.b[i] for i in range(self.m)))

    def pivot(self, row: int, col: int):
        piv = self.T[row, col]
        self.T[row] /= piv
        self.b[row] /= piv
        col_vals = self.T[:, col].copy()
        col_vals[row] = 0.0
        self.T -= np.outer(col_vals, self.T[row])
        self.b -= col_vals * self.b[row]
        self.r1 = self.r1 - self.r1[col] * self.T[row]
        self.r2 = self.r2 - self.r2[col] * self.T[row]
        self.basis[row] = col
        self.iterations += 1

    def _entering(self, r: np.ndarray, bland: bool, phase: int):
        # artificial columns never (re-)enter the basis in either phase
        candidates = np.where(self.allowed & (r < -REDUCED_COST_TOL))[0]
        if candidates.size == 0:
            return None
        if bland:
            return int(candidates[0])
        vals = r[candidates]
        return int(candidates[int(np.argmin(vals))])

    def _leaving(self, col: int):
        column = self.T[:, col]
        eligible = column > PIVOT_FLOOR
        if not eligible.any():
            return None
        ratios = np.where(eligible, self.b / np.where(eligible, column, 1.0), np.inf)
        rmin = ratios.min()
        cand = np.flatnonzero(ratios <= rmin + 1e-12 * (1.0 + abs(rmin)))
        if cand.size > 1:
            # lexicographic tie-break over the initial identity columns: keeps
            # degenerate runs short and rules out cycling
            for c in self.lex_cols:
                vals = self.T[cand, c] / column[cand]
                cand = cand[vals <= vals.min() + 1e-12]
                if cand.size == 1:
                    break
        return int(cand[int(np.argmin(self.basis[cand]))])

    def run_phase(self, phase: int, max_iterations: int) -> str:
        r = self.r1 if phase == 1 else self.r2
        bland = False
        stall = 0
        stall_limit = 3 * (self.m + self.T.shape[1])
        prev = self.objective(phase)
        while True:
            if self.iterations >= max_iterations:
                raise NumericalError(
                    f"simplex exceeded {max_iterations} iterations"
                )
            col = self._entering(r, bland, phase)
            if col is None:
                return "optimal"
            row = self._leaving(col)
            if row is None:
                if phase == 1:
                    raise NumericalError("phase-1 subproblem unbounded")
                return "unbounded"
            self.pivot(row, col)
            r = self.r1 if phase == 1 else self.r2
            cur = self.objective(phase)
            if cur < prev - IMPROVEMENT_TOL * (1.0 + abs(prev)):
                stall = 0
                bland = False
            else:
                stall += 1
                if stall > stall_limit:
                    bland = True
            prev = cur


def solve(program: LinearProgram, max_iterations: int | None = None) -> LpSolution:
    """Solve to proven optimality, infeasibility or unboundedness."""
    sf = _standardize(program)
    m, n_cols = sf.matrix.shape
    if max_iterations is None:
        max_iterations = 2000 + 60 * (m + n_cols)
    tab = _Tableau(sf)

    if tab.art_cols:
        tab.run_phase(1, max_iterations)
        scale = 1.0 + float(np.abs(sf.rhs).max()) if m else 1.0
        if tab.objective(1) > FEASIBILITY_TOL * scale:
            return LpSolution(status="infeasible", iterations=tab.iterations)
        # drive artificials out of the basis where possible
        for i in range(tab.m):
            if tab.basis[i] in tab.art_cols:
                row = tab.T[i, : tab.n_struct]
                cand = np.where(np.abs(row) > PIVOT_FLOOR)[0]
                if cand.size:
                    tab.pivot(i, int(cand[0]))

    status = tab.run_phase(2, max_iterations)
    if status == "unbounded":
        return LpSolution(status="unbounded", iterations=tab.iterations)

    # re-solve the basic system from the original data for accuracy; the
    # artificial identity columns are rebuilt in case one stayed basic at zero
    basis = tab.basis.copy()
    n_art = len(tab.art_cols)
    A_full = np.hstack([sf.matrix, np.zeros((m, n_art))])
    for i in range(m):
        if basis[i] >= sf.matrix.shape[1]:  # basic artificial (redundant row)
            A_full[i, basis[i]] = 1.0

    B = A_full[:, basis] if m else np.zeros((0, 0))
    try:
        xb = np.linalg.solve(B, sf.rhs) if m else np.zeros(0)
    except np.linalg.LinAlgError:
        xb = tab.b.copy()
    z = np.zeros(A_full.shape[1])
    z[basis] = xb

    values = np.zeros(program.n_variables)
    for j, kind in enumerate(sf.var_map):
        if kind[0] == "shift":
            values[j] = z[kind[1]] + kind[2]
        elif kind[0] == "neg":
            values[j] = kind[2] - z[kind[1]]
        else:
            values[j] = z[kind[1]] - z[kind[2]]

    _verify(program, values)
    objective_value = float(program.objective @ values)

    duals = None
    if m:
        c_basis = np.concatenate([sf.cost, np.zeros(n_art)])[basis]
        try:
            y = np.linalg.solve(B.T, c_basis)
            duals_user = y[: sf.n_user_rows] * sf.row_sign[: sf.n_user_rows]
            duals = duals_user
        except np.linalg.LinAlgError:
            duals = None

    return LpSolution(
        status="optimal",
        values=values,
        objective_value=objective_value,
        dual_values=duals,
        iterations=tab.iterations,
    )


def _verify(program: LinearProgram, values: np.ndarray):
    lo_viol = program.lower - values
    up_viol = values - program.upper
    bound_scale = 1.0 + np.abs(values).max() if values.size else 1.0
    if (lo_viol > FEASIBILITY_TOL * bound_scale).any() or (
        up_viol > FEASIBILITY_TOL * bound_scale
    ).any():
        raise NumericalError("solution violates variable bounds beyond tolerance")
    for a, rel, rhs in program.constraints:
        lhs = float(a @ values)
        tol = FEASIBILITY_TOL * (1.0 + abs(rhs) + np.abs(a).max() * bound_scale)
        if rel == LE and lhs > rhs + tol:
            raise NumericalError(f"constraint violated: {lhs} <= {rhs}")
        if rel == GE and lhs < rhs - tol:
            raise NumericalError(f"constraint violated: {lhs} >= {rhs}")
        if rel == EQ and abs(lhs - rhs) > tol:
            raise NumericalError(f"constraint violated: {lhs} = {rhs}")


# --- L1 fitting program ----------------------------------------------------

@dataclass(frozen=True)
class L1FitLayout:
    """Variable layout of an L1-fit program: weights, constant, residuals and
    (optionally) the per-coordinate auxiliaries enforcing envelope
    non-negativity."""

    weights: slice
    constant: int
    residuals: slice
    envelope_aux: slice | None

    @property
    def n_variables(self) -> int:
        end = self.residuals.stop if self.envelope_aux is None else self.envelope_aux.stop
        return end


def l1_fit_layout(d: int, n: int, nonneg_envelope: bool) -> L1FitLayout:
    aux = slice(d + 1 + n, d + 1 + n + d) if nonneg_envelope else None
    return L1FitLayout(
        weights=slice(0, d),
        constant=d,
        residuals=slice(d + 1, d + 1 + n),
        envelope_aux=aux,
    )


def l1_fit_program(rows, nonneg_envelope: bool = False) -> LinearProgram:
    """Least-absolute-deviation affine fit as a linear program.

    ``rows`` is a list of ``(feature_vector, target)``.  Variables are the
    weight vector, the constant, one residual bound per row, and, when
    ``nonneg_envelope`` is set, one auxiliary per coordinate that enforces
    ``sum_v min(w_v, 0) + c >= 0`` so the fitted function is non-negative on
    every binary input.
    """
    if not rows:
        raise ValueError("cannot fit an empty set of rows")
    d = len(np.asarray(rows[0][0]).reshape(-1))
    n = len(rows)
    layout = l1_fit_layout(d, n, nonneg_envelope)
    n_vars = layout.n_variables

    objective = np.zeros(n_vars)
    objective[layout.residuals] = 1.0

    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    lower[layout.residuals] = 0.0
    if nonneg_envelope:
        upper[layout.envelope_aux] = 0.0  # aux <= 0

    constraints = []
    for i, (x, f) in enumerate(rows):
        xv = np.asarray(x, dtype=np.float64).reshape(-1)
        if xv.size != d:
            raise ValueError("inconsistent feature dimensions")
        a = np.zeros(n_vars)
        a[layout.weights] = xv
        a[layout.constant] = 1.0
        a[layout.residuals.start + i] = -1.0
        constraints.append((a, LE, float(f)))
        a2 = np.zeros(n_vars)
        a2[layout.weights] = -xv
        a2[layout.constant] = -1.0
        a2[layout.residuals.start + i] = -1.0
        constraints.append((a2, LE, -float(f)))

    if nonneg_envelope:
        for v in range(d):
            a = np.zeros(n_vars)
            a[layout.envelope_aux.start + v] = 1.0
            a[layout.weights.start + v] = -1.0
            constraints.append((a, LE, 0.0))  # aux_v <= w_v
        a = np.zeros(n_vars)
        a[layout.envelope_aux] = 1.0
        a[layout.constant] = 1.0
        constraints.append((a, GE, 0.0))  # sum(aux) + c >= 0

    return LinearProgram(objective=objective, constraints=constraints,
                         lower=lower, upper=upper)


@dataclass(frozen=True)
class L1FitResult:
    """Optimal affine fit extracted from the dedicated L1 path."""

    weights: np.ndarray
    constant: float
    objective_value: float
    iterations: int


def solve_l1_fit(patches, targets, nonneg_envelope: bool = False,
                 max_iterations: int | None = None,
                 weight_penalty: float = 0.0) -> L1FitResult:
    """Least-absolute-deviation affine fit via a dedicated simplex setup.

    Solves the same problem as ``solve(l1_fit_program(...))`` but writes the
    residuals as a positive/negative split in equality rows, which admits an
    immediately feasible starting basis: phase 1 is skipped entirely and the
    row count is halved.  Intended for the frequent refits during training.

    A positive ``weight_penalty`` adds that coefficient times the total
    weight magnitude to the objective.  The fit problem is typically
    underdetermined and its optimal face wide; the penalty selects the
    smallest-weight solution on it instead of an arbitrary extreme vertex.
    The reported objective_value remains the plain residual sum.
    """
    X = np.ascontiguousarray(patches, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    f = np.asarray(targets, dtype=np.float64).reshape(-1)
    n, d = X.shape
    if n == 0 or d == 0:
        raise ValueError("need at least one row and one feature")
    if f.size != n:
        raise ValueError("need one target per row")

    naux = d if nonneg_envelope else 0
    nslack = d + 1 if nonneg_envelope else 0
    base = 2 * d + 2
    pcol = base
    qcol = base + n
    xcol = base + 2 * n
    scol = xcol + naux
    ncols = scol + nslack
    m = n + (d + 1 if nonneg_envelope else 0)

    T = np.zeros((m, ncols))
    b = np.zeros(m)
    cost = np.zeros(ncols)
    cost[pcol:pcol + 2 * n] = 1.0
    if weight_penalty > 0.0:
        cost[:2 * d] = weight_penalty

    # residual rows: <w, x_i> + c + p_i - q_i = f_i, pre-negated where f_i < 0
    # so the basic column has coefficient +1 and the rhs is |f_i|
    sign = np.where(f >= 0.0, 1.0, -1.0)
    T[:n, :d] = sign[:, None] * X
    T[:n, d:2 * d] = -sign[:, None] * X
    T[:n, 2 * d] = sign
    T[:n, 2 * d + 1] = -sign
    rows = np.arange(n)
    T[rows, pcol + rows] = sign
    T[rows, qcol + rows] = -sign
    b[:n] = sign * f
    basis = np.where(f >= 0.0, pcol + rows, qcol + rows)

    if nonneg_envelope:
        # aux_v <= w_v with aux_v = -xi_v <= 0:  -w_v - xi_v + s_v = 0
        vrows = n + np.arange(d)
        T[vrows, np.arange(d)] = -1.0
        T[vrows, d + np.arange(d)] = 1.0
        T[vrows, xcol + np.arange(d)] = -1.0
        T[vrows, scol + np.arange(d)] = 1.0
        # sum(aux) + c >= 0:  sum(xi) - c + s = 0
        last = n + d
        T[last, xcol:xcol + d] = 1.0
        T[last, 2 * d] = -1.0
        T[last, 2 * d + 1] = 1.0
        T[last, scol + d] = 1.0
        basis = np.concatenate([basis, scol + np.arange(d + 1)])

    A0 = T.copy()
    b0 = b.copy()
    tab = _Tableau.from_feasible_basis(T, b, cost, basis)
    if max_iterations is None:
        max_iterations = 2000 + 60 * (m + ncols)
    status = tab.run_phase(2, max_iterations)
    if status != "optimal":
        raise NumericalError(f"L1 fit simplex ended with status {status!r}")

    try:
        xb = np.linalg.solve(A0[:, tab.basis], b0)
    except np.linalg.LinAlgError:
        xb = tab.b.copy()
    z = np.zeros(ncols)
    z[tab.basis] = xb
    w = z[:d] - z[d:2 * d]
    c = float(z[2 * d] - z[2 * d + 1])

    obj = float(np.abs(X @ w + c - f).sum())
    scale = 1.0 + float(np.abs(f).max())
    tab_obj = float(cost[tab.basis] @ xb)
    if weight_penalty > 0.0:
        tab_obj -= weight_penalty * float(z[:2 * d].sum())
    if abs(tab_obj - obj) > 1e-6 * scale * max(1.0, n):
        raise NumericalError("L1 fit objective failed verification")
    if nonneg_envelope:
        if float(np.minimum(w, 0.0).sum()) + c < -FEASIBILITY_TOL * scale:
            raise NumericalError("L1 fit envelope constraint violated")
    return L1FitResult(w, c, obj, tab.iterations)


def dump_lp(program: LinearProgram, names: list[str] | None = None) -> str:
    """Human-readable LP text (CPLEX-LP flavored), for debugging dumps."""
    n = program.n_variables
    if names is None:
        names = [f"x{j}" for j in range(n)]

    def term_str(coeffs):
        parts = []
        for j, v in enumerate(coeffs):
            if v == 0.0:
                continue
            sign = "+" if v >= 0 else "-"
            parts.append(f"{sign} {abs(v):.12g} {names[j]}")
        return " ".join(parts) if parts else "0"

    lines = ["Minimize", f" obj: {term_str(program.objective)}", "Subject To"]
    for i, (a, rel, rhs) in enumerate(program.constraints):
        op = {LE: "<=", GE: ">=", EQ: "="}[rel]
        lines.append(f" c{i}: {term_str(a)} {op} {rhs:.12g}")
    lines.append("Bounds")
    for j in range(n):
        lo, up = program.lower[j], program.upper[j]
        lo_s = "-inf" if not np.isfinite(lo) else f"{lo:.12g}"
        up_s = "+inf" if not np.isfinite(up) else f"{up:.12g}"
        lines.append(f" {lo_s} <= {names[j]} <= {up_s}")
    lines.append("End")
    return "\n".join(lines) + "\n"
