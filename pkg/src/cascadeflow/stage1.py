"""Per-island steady-state solve with infeasibility currents.

Each island is solved as an equality-constrained least-squares problem::

    minimise   sum_i (I_F,R[i]^2 + I_F,I[i]^2)
    subject to g(x) = 0

where ``g`` stacks rectangular KCL with an injected infeasibility current at
every bus, PV voltage magnitudes, the reference-bus voltage, the reference
generator's power balance, the droop law of every generator and the
defining equation of every free shed fraction. Newton's method is applied to
the first-order conditions ``[grad f + J^T lam; g] = 0``.

Where nothing in the island responds to frequency (a lone synchronous
condenser, or every droop and shed curve saturated) ``df`` is not determined
by the problem and its row of the Newton matrix vanishes. A small diagonal
``df_damping`` is added to the matrix, not to the residual, so the step keeps
``df`` where it is in that case and converged points satisfy the undamped
optimality conditions exactly.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .curves import ConstantCurve, build_clamp_curve, build_step_curve
from .network import Island, Network, Scheme, ShedMode

V_GUARD = 1e-12


class Status(str, Enum):
    CONVERGED = "CONVERGED"
    DIVERGED = "DIVERGED"


class Feasibility(str, Enum):
    FEASIBLE = "FEASIBLE"
    INFEASIBLE = "INFEASIBLE"


class NotSolvable(ValueError):
    """Island has no generator to act as angle reference."""


class NumericalGuardError(ArithmeticError):
    """A power-injection bus voltage collapsed to (numerically) zero."""


@dataclass(frozen=True)
class SolverOptions:
    tol_residual: float = 1e-8
    max_iter: int = 100
    v_step_cap: float = 0.1
    alpha_step_cap: float = 0.2
    df_step_cap: float = 0.5
    homotopy_steps: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)
    max_refinements: int = 20
    feas_tol: float = 1e-6
    snap_threshold: float = 0.5
    snap_band: float = 1e-3
    df_damping: float = 1e-8
    beta_override: float | None = None  # replaces beta of every DISCRETE segment

    def __post_init__(self):
        for name in ("tol_residual", "max_iter", "v_step_cap", "alpha_step_cap", "df_step_cap", "feas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.snap_threshold < 1:
            raise ValueError("snap_threshold must lie in (0, 1)")


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Index layout of one island's KKT unknowns.

    Primal order: vr, vi (per bus), q (per PV bus), dp (per generator),
    isr, isi (reference generator current), alpha (per free segment), df,
    ifr, ifi (per bus). One multiplier follows per equation, in the order
    kcl_r, kcl_i, vmag, vref_r, vref_i, pslack, droop, alpha.
    """

    buses: tuple[int, ...]
    pv_buses: tuple[int, ...]
    gens: tuple[int, ...]
    ref_gen: int
    ref_bus: int
    segments: tuple[tuple[int, int], ...]  # free (load id, segment index)
    fixed_alpha: tuple[tuple[tuple[int, int], float], ...] = ()

    @cached_property
    def primal(self) -> tuple[tuple, ...]:
        names: list[tuple] = [("vr", b) for b in self.buses]
        names += [("vi", b) for b in self.buses]
        names += [("q", b) for b in self.pv_buses]
        names += [("dp", g) for g in self.gens]
        names += [("isr", self.ref_gen), ("isi", self.ref_gen)]
        names += [("alpha", ld, k) for ld, k in self.segments]
        names += [("df",)]
        names += [("ifr", b) for b in self.buses]
        names += [("ifi", b) for b in self.buses]
        return tuple(names)

    @cached_property
    def equations(self) -> tuple[tuple, ...]:
        names: list[tuple] = [("kcl_r", b) for b in self.buses]
        names += [("kcl_i", b) for b in self.buses]
        names += [("vmag", b) for b in self.pv_buses]
        names += [("vref_r", self.ref_bus), ("vref_i", self.ref_bus), ("pslack", self.ref_gen)]
        names += [("droop", g) for g in self.gens]
        names += [("alpha", ld, k) for ld, k in self.segments]
        return tuple(names)

    @cached_property
    def index(self) -> dict[tuple, int]:
        idx = {name: i for i, name in enumerate(self.primal)}
        off = len(self.primal)
        idx.update({("lam",) + name: off + i for i, name in enumerate(self.equations)})
        return idx

    @property
    def n_primal(self) -> int:
        return len(self.primal)

    @property
    def n_eq(self) -> int:
        return len(self.equations)

    @property
    def size(self) -> int:
        return self.n_primal + self.n_eq

    @cached_property
    def names(self) -> tuple[tuple, ...]:
        return self.primal + tuple(("lam",) + e for e in self.equations)

    @property
    def nb(self) -> int:
        return len(self.buses)


def assemble_layout(island: Island, net: Network, fixed_alpha: dict | None = None) -> Layout:
    if island.reference_gen is None:
        raise NotSolvable(f"island {island.id} has no active generator")
    fixed_alpha = dict(fixed_alpha or {})
    ref = net.gen_by_id[island.reference_gen]
    gens = tuple(sorted(island.generators))
    pv = sorted({net.gen_by_id[g].bus for g in gens if g != ref.id} - {ref.bus})
    segs = []
    for lid in sorted(island.loads):
        for k, _ in enumerate(net.load_by_id[lid].segments):
            if (lid, k) not in fixed_alpha:
                segs.append((lid, k))
    return Layout(
        buses=tuple(island.buses),
        pv_buses=tuple(pv),
        gens=gens,
        ref_gen=ref.id,
        ref_bus=ref.bus,
        segments=tuple(segs),
        fixed_alpha=tuple(sorted(fixed_alpha.items())),
    )


@dataclass(frozen=True)
class StateVector:
    layout: Layout
    z: np.ndarray

    def __getitem__(self, name: tuple) -> float:
        return float(self.z[self.layout.index[name]])

    def named(self) -> dict[tuple, float]:
        return dict(zip(self.layout.names, self.z.tolist()))

    @property
    def x(self) -> np.ndarray:
        return self.z[: self.layout.n_primal]

    @property
    def lam(self) -> np.ndarray:
        return self.z[self.layout.n_primal :]

    def voltages(self) -> dict[int, complex]:
        nb = self.layout.nb
        return {b: complex(self.z[i], self.z[nb + i]) for i, b in enumerate(self.layout.buses)}

    def infeasibility(self) -> dict[int, complex]:
        off = self.layout.index[("ifr", self.layout.buses[0])]
        nb = self.layout.nb
        return {b: complex(self.z[off + i], self.z[off + nb + i]) for i, b in enumerate(self.layout.buses)}

    def alphas(self) -> dict[tuple[int, int], float]:
        """All shed fractions, free and fixed."""
        out = {seg: self[("alpha",) + seg] for seg in self.layout.segments}
        out.update(dict(self.layout.fixed_alpha))
        return dict(sorted(out.items()))


def flat_start(layout: Layout, warm: dict | None = None) -> np.ndarray:
    """Flat start (V = 1 angle 0, everything else 0), overlaid with any
    warm-start values whose names exist in ``layout``."""
    z = np.zeros(layout.size)
    z[: layout.nb] = 1.0
    if warm:
        for name, i in layout.index.items():
            if name in warm:
                z[i] = warm[name]
        if ("df",) not in warm and ("df_bus", layout.ref_bus) in warm:
            z[layout.index[("df",)]] = warm[("df_bus", layout.ref_bus)]
    return z


def _coo(blocks, shape) -> sp.csr_matrix:
    rows = np.concatenate([blk[0] for blk in blocks])
    cols = np.concatenate([blk[1] for blk in blocks])
    vals = np.concatenate([blk[2] for blk in blocks])
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


# ---------------------------------------------------------------------------
# island problem
# ---------------------------------------------------------------------------


def _segment_curve(seg, options: SolverOptions):
    beta = seg.beta
    if seg.mode is ShedMode.DISCRETE and options.beta_override is not None:
        beta = options.beta_override
    return build_step_curve(seg.threshold, beta)


@dataclass(frozen=True)
class IslandProblem:
    """Everything needed to evaluate the KKT system of one island."""

    net: Network
    island: Island
    layout: Layout
    options: SolverOptions
    eta: float = 1.0

    @classmethod
    def build(cls, net: Network, island: Island, options: SolverOptions | None = None,
              fixed_alpha: dict | None = None, eta: float = 1.0) -> "IslandProblem":
        options = options or SolverOptions()
        return cls(net, island, assemble_layout(island, net, fixed_alpha), options, eta)

    def with_eta(self, eta: float) -> "IslandProblem":
        return replace(self, eta=eta)

    def with_fixed(self, fixed_alpha: dict) -> "IslandProblem":
        merged = dict(self.layout.fixed_alpha)
        merged.update(fixed_alpha)
        return replace(self, layout=assemble_layout(self.island, self.net, merged))

    # -- static pieces -------------------------------------------------------

    @cached_property
    def clamp_curves(self) -> dict[int, object]:
        out = {}
        for gid in self.layout.gens:
            g = self.net.gen_by_id[gid]
            if g.droop_gain > 0:
                out[gid] = build_clamp_curve(g.droop_gain, g.p_min - g.p_set, g.p_max - g.p_set)
            else:
                out[gid] = ConstantCurve(0.0)
        return out

    @cached_property
    def shed_curves(self) -> dict[tuple[int, int], object]:
        return {
            (lid, k): _segment_curve(self.net.load_by_id[lid].segments[k], self.options)
            for lid, k in self.layout.segments
        }

    @cached_property
    def curves(self) -> dict:
        out = {("droop", g): c for g, c in self.clamp_curves.items()}
        out.update({("alpha",) + s: c for s, c in self.shed_curves.items()})
        return out

    @cached_property
    def ybus(self) -> sp.csr_matrix:
        """Real 2n x 2n admittance map from (vr, vi) to (ir, ii)."""
        lay, net = self.layout, self.net
        pos = {b: i for i, b in enumerate(lay.buses)}
        n = lay.nb
        rows, cols, vals = [], [], []
        for bid in self.island.branches:
            br = net.branch_by_id[bid]
            f, t = pos[br.from_bus], pos[br.to_bus]
            ys = 1.0 / complex(br.r, br.x)
            ysh = 0.5j * br.b_sh
            tap = br.tap
            for (i, j, y) in ((f, f, (ys + ysh) / tap**2), (t, t, ys + ysh), (f, t, -ys / tap), (t, f, -ys / tap)):
                rows.append(i), cols.append(j), vals.append(y)
        for i, b in enumerate(lay.buses):
            bus = net.bus_by_id[b]
            if bus.shunt_g or bus.shunt_b:
                rows.append(i), cols.append(i), vals.append(complex(bus.shunt_g, bus.shunt_b))
        y = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
        g, b = y.real, y.imag
        return sp.bmat([[g, -b], [b, g]], format="csr")

    @cached_property
    def _linear_jac(self):
        """COO triplets of the state-independent Jacobian entries."""
        lay = self.layout
        nb = lay.nb
        yb = self.ybus.tocoo()
        if_off = lay.index[("ifr", lay.buses[0])]
        rb = lay.buses.index(lay.ref_bus)
        r0 = lay.equations.index(("vref_r", lay.ref_bus))
        rows = np.concatenate([yb.row, np.arange(2 * nb), [rb, nb + rb, r0, r0 + 1]])
        cols = np.concatenate([yb.col, if_off + np.arange(2 * nb),
                               [lay.index[("isr", lay.ref_gen)], lay.index[("isi", lay.ref_gen)], rb, nb + rb]])
        vals = np.concatenate([yb.data, -np.ones(2 * nb), [-1.0, -1.0, 1.0, 1.0]])
        return rows, cols, vals

    @cached_property
    def _elements(self):
        """Constant-power injections: loads (sign +1, current drawn) and
        non-reference generators (sign -1, current injected).

        ``P`` and ``Q`` of element ``e`` are affine in the state:
        ``p0[e] + sum(coef * x[col])`` over the entries with ``p_e == e``.
        """
        lay, net, eta = self.layout, self.net, self.eta
        idx = lay.index
        pos = {b: i for i, b in enumerate(lay.buses)}
        fixed = dict(lay.fixed_alpha)
        free = set(lay.segments)
        bus, sign, p0, q0 = [], [], [], []
        pe, pcol, pval, qe, qcol, qval = [], [], [], [], [], []

        for lid in sorted(self.island.loads):
            ld = net.load_by_id[lid]
            e = len(bus)
            shed_fixed = sum(s.fraction * fixed[(lid, k)] for k, s in enumerate(ld.segments) if (lid, k) in fixed)
            bus.append(pos[ld.bus]), sign.append(1.0)
            p0.append(eta * ld.p_set * (1.0 - shed_fixed))
            q0.append(eta * ld.q_set * (1.0 - shed_fixed))
            for k, s in enumerate(ld.segments):
                if (lid, k) in free:
                    col = idx[("alpha", lid, k)]
                    pe.append(e), pcol.append(col), pval.append(-eta * ld.p_set * s.fraction)
                    qe.append(e), qcol.append(col), qval.append(-eta * ld.q_set * s.fraction)

        q_owner = {}
        for gid in lay.gens:
            g = net.gen_by_id[gid]
            if gid != lay.ref_gen and g.bus != lay.ref_bus:
                q_owner.setdefault(g.bus, gid)
        for gid in lay.gens:
            if gid == lay.ref_gen:
                continue
            g = net.gen_by_id[gid]
            e = len(bus)
            bus.append(pos[g.bus]), sign.append(-1.0)
            p0.append(eta * g.p_set), q0.append(0.0)
            pe.append(e), pcol.append(idx[("dp", gid)]), pval.append(1.0)
            if q_owner.get(g.bus) == gid:
                qe.append(e), qcol.append(idx[("q", g.bus)]), qval.append(1.0)

        as_int = lambda v: np.array(v, dtype=int)  # noqa: E731
        return dict(bus=as_int(bus), sign=np.array(sign), p0=np.array(p0), q0=np.array(q0),
                    pe=as_int(pe), pcol=as_int(pcol), pval=np.array(pval),
                    qe=as_int(qe), qcol=as_int(qcol), qval=np.array(qval))

    # -- evaluation ------------------------------------------------------------

    def constraints(self, x: np.ndarray, lam: np.ndarray | None = None):
        """Return ``(g, J)`` or, with multipliers, ``(g, J, sum lam_k hess g_k)``."""
        lay, net = self.layout, self.net
        idx = lay.index
        nb, nx, neq = lay.nb, lay.n_primal, lay.n_eq
        want_h = lam is not None

        g = np.zeros(neq)
        jr, jc, jv = [], [], []
        hr, hc, hv = [], [], []
        # blocks of numpy triplets, concatenated once at the end
        jblk: list[tuple] = [self._linear_jac]
        hblk: list[tuple] = []

        def jac(r, c, v):
            jr.append(r), jc.append(c), jv.append(v)

        def hess(r, c, v):
            hr.append(r), hc.append(c), hv.append(v)

        # network part of KCL and the infeasibility currents
        if_off = idx[("ifr", lay.buses[0])]
        g[: 2 * nb] = self.ybus @ x[: 2 * nb] - x[if_off : if_off + 2 * nb]

        # constant-power elements
        el = self._elements
        ne = len(el["bus"])
        if ne:
            eb = el["bus"]
            a, b = x[eb], x[nb + eb]
            s = a * a + b * b
            if np.any(s < V_GUARD):
                bad = [lay.buses[i] for i in eb[s < V_GUARD]]
                raise NumericalGuardError(f"voltage collapsed to zero at bus(es) {sorted(set(bad))}")
            pe, pcol, pval = el["pe"], el["pcol"], el["pval"]
            qe, qcol, qval = el["qe"], el["qcol"], el["qval"]
            p = el["p0"] + np.bincount(pe, weights=pval * x[pcol], minlength=ne)
            q = el["q0"] + np.bincount(qe, weights=qval * x[qcol], minlength=ne)
            wr, wi = a / s, b / s
            s2 = s * s
            wr_a, wr_b = (b * b - a * a) / s2, -2 * a * b / s2
            wi_a, wi_b = wr_b, -wr_a
            sg = el["sign"]
            np.add.at(g, eb, sg * (p * wr + q * wi))
            np.add.at(g, nb + eb, sg * (p * wi - q * wr))

            rr, ri = eb, nb + eb
            ca, cb = eb, nb + eb
            jblk += [
                (rr, ca, sg * (p * wr_a + q * wi_a)), (rr, cb, sg * (p * wr_b + q * wi_b)),
                (ri, ca, sg * (p * wi_a - q * wr_a)), (ri, cb, sg * (p * wi_b - q * wr_b)),
                (rr[pe], pcol, (sg * wr)[pe] * pval), (ri[pe], pcol, (sg * wi)[pe] * pval),
                (rr[qe], qcol, (sg * wi)[qe] * qval), (ri[qe], qcol, (-sg * wr)[qe] * qval),
            ]

            if want_h:
                mr = sg * lam[eb]
                mi = sg * lam[nb + eb]
                s3 = s2 * s
                wr_aa = (2 * a**3 - 6 * a * b * b) / s3
                wr_ab = (6 * a * a * b - 2 * b**3) / s3
                wr_bb = -wr_aa
                wi_aa, wi_ab, wi_bb = wr_ab, -wr_aa, -wr_ab
                h_aa = mr * (p * wr_aa + q * wi_aa) + mi * (p * wi_aa - q * wr_aa)
                h_ab = mr * (p * wr_ab + q * wi_ab) + mi * (p * wi_ab - q * wr_ab)
                h_bb = mr * (p * wr_bb + q * wi_bb) + mi * (p * wi_bb - q * wr_bb)
                h_ap = (mr * wr_a + mi * wi_a)[pe] * pval
                h_bp = (mr * wr_b + mi * wi_b)[pe] * pval
                h_aq = (mr * wi_a - mi * wr_a)[qe] * qval
                h_bq = (mr * wi_b - mi * wr_b)[qe] * qval
                hblk += [
                    (ca, ca, h_aa), (ca, cb, h_ab), (cb, ca, h_ab), (cb, cb, h_bb),
                    (ca[pe], pcol, h_ap), (pcol, ca[pe], h_ap), (cb[pe], pcol, h_bp), (pcol, cb[pe], h_bp),
                    (ca[qe], qcol, h_aq), (qcol, ca[qe], h_aq), (cb[qe], qcol, h_bq), (qcol, cb[qe], h_bq),
                ]

        pos = {bb: i for i, bb in enumerate(lay.buses)}
        eq = lay.equations
        eqi = {name: i for i, name in enumerate(eq)}

        # reference generator current enters KCL at the reference bus
        rb = pos[lay.ref_bus]
        isr, isi = idx[("isr", lay.ref_gen)], idx[("isi", lay.ref_gen)]
        g[rb] -= x[isr]
        g[nb + rb] -= x[isi]

        # PV voltage magnitude
        for bus_id in lay.pv_buses:
            r = eqi[("vmag", bus_id)]
            i = pos[bus_id]
            gens_here = [gid for gid in lay.gens if net.gen_by_id[gid].bus == bus_id]
            vset = net.gen_by_id[min(gens_here)].v_set
            av, bv = x[i], x[nb + i]
            g[r] = av * av + bv * bv - vset * vset
            jac(r, i, 2 * av), jac(r, nb + i, 2 * bv)
            if want_h:
                hess(i, i, 2 * lam[r]), hess(nb + i, nb + i, 2 * lam[r])

        # reference voltage
        ref = net.gen_by_id[lay.ref_gen]
        r0 = eqi[("vref_r", lay.ref_bus)]
        g[r0] = x[rb] - ref.v_set
        g[r0 + 1] = x[nb + rb]

        # reference generator power balance
        r = eqi[("pslack", lay.ref_gen)]
        dps = idx[("dp", lay.ref_gen)]
        av, bv = x[rb], x[nb + rb]
        g[r] = self.eta * ref.p_set + x[dps] - (av * x[isr] + bv * x[isi])
        jac(r, dps, 1.0), jac(r, rb, -x[isr]), jac(r, nb + rb, -x[isi]), jac(r, isr, -av), jac(r, isi, -bv)
        if want_h:
            for u, v in ((rb, isr), (nb + rb, isi)):
                hess(u, v, -lam[r]), hess(v, u, -lam[r])

        # droop: dp - clamp(df)
        dfi = idx[("df",)]
        df = x[dfi]
        for gid in lay.gens:
            r = eqi[("droop", gid)]
            curve = self.clamp_curves[gid]
            val, der = curve.eval(df)
            g[r] = x[idx[("dp", gid)]] - val
            jac(r, idx[("dp", gid)], 1.0), jac(r, dfi, -der)
            if want_h:
                hess(dfi, dfi, -lam[r] * curve.second_derivative(df))

        # shed fractions: alpha - curve(signal)
        for seg in lay.segments:
            r = eqi[("alpha",) + seg]
            col = idx[("alpha",) + seg]
            curve = self.shed_curves[seg]
            ld = net.load_by_id[seg[0]]
            scheme = ld.segments[seg[1]].scheme
            if scheme is Scheme.UFLS:
                val, der = curve.eval(df)
                g[r] = x[col] - val
                jac(r, col, 1.0), jac(r, dfi, -der)
                if want_h:
                    hess(dfi, dfi, -lam[r] * curve.second_derivative(df))
            else:
                i = pos[ld.bus]
                av, bv = x[i], x[nb + i]
                vm = math.hypot(av, bv)
                if vm * vm < V_GUARD:
                    raise NumericalGuardError(f"voltage collapsed to zero at bus {ld.bus}")
                val, der = curve.eval(vm)
                g[r] = x[col] - val
                jac(r, col, 1.0), jac(r, i, -der * av / vm), jac(r, nb + i, -der * bv / vm)
                if want_h:
                    c2 = curve.second_derivative(vm)
                    ua, ub = av / vm, bv / vm
                    v3 = vm**3
                    l = lam[r]
                    hess(i, i, -l * (c2 * ua * ua + der * bv * bv / v3))
                    hess(nb + i, nb + i, -l * (c2 * ub * ub + der * av * av / v3))
                    off = -l * (c2 * ua * ub - der * av * bv / v3)
                    hess(i, nb + i, off), hess(nb + i, i, off)

        jblk.append((np.array(jr, dtype=int), np.array(jc, dtype=int), np.array(jv, dtype=float)))
        jmat = _coo(jblk, (neq, nx))
        if not want_h:
            return g, jmat
        hblk.append((np.array(hr, dtype=int), np.array(hc, dtype=int), np.array(hv, dtype=float)))
        return g, jmat, _coo(hblk, (nx, nx))

    def objective_grad_hess(self, x: np.ndarray):
        lay = self.layout
        grad = np.zeros(lay.n_primal)
        diag = np.zeros(lay.n_primal)
        off = lay.index[("ifr", lay.buses[0])]
        grad[off:] = 2.0 * x[off:]
        diag[off:] = 2.0
        # proximal damping: enters the Newton matrix only, never the residual
        diag[lay.index[("df",)]] = self.options.df_damping
        return grad, diag


def residual(problem: IslandProblem, z: np.ndarray) -> np.ndarray:
    """KKT residual ``[grad f + J^T lam; g]``."""
    n = problem.layout.n_primal
    x, lam = z[:n], z[n:]
    g, jmat = problem.constraints(x)
    grad, _ = problem.objective_grad_hess(x)
    return np.concatenate([grad + jmat.T @ lam, g])


def jacobian(problem: IslandProblem, z: np.ndarray) -> sp.csc_matrix:
    """KKT matrix ``[[hess f + sum lam hess g, J^T], [J, 0]]``."""
    n = problem.layout.n_primal
    x, lam = z[:n], z[n:]
    _, jmat, hmat = problem.constraints(x, lam)
    _, diag = problem.objective_grad_hess(x)
    top = hmat + sp.diags(diag)
    return sp.bmat([[top, jmat.T], [jmat, None]], format="csc")


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveResult:
    state: StateVector
    status: Status
    feasibility: Feasibility | None
    if_mag: dict[int, float]
    iterations: int
    residual_norm: float
    delta_f: float
    message: str = ""
    eta: float = 1.0
    snapped: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def max_if(self) -> float:
        return max(self.if_mag.values()) if self.if_mag else 0.0

    @property
    def worst_if_bus(self) -> int | None:
        if not self.if_mag:
            return None
        return min(self.if_mag, key=lambda b: (-self.if_mag[b], b))


def _make_result(problem, z, status, iterations, norm, message="", eta=None, snapped=None) -> SolveResult:
    state = StateVector(problem.layout, z.copy())
    if_mag = {b: abs(c) for b, c in state.infeasibility().items()}
    res = SolveResult(
        state=state, status=status, feasibility=None, if_mag=if_mag, iterations=iterations,
        residual_norm=norm, delta_f=state[("df",)], message=message,
        eta=problem.eta if eta is None else eta, snapped=dict(snapped or {}),
    )
    if status is Status.CONVERGED:
        res = replace(res, feasibility=classify_feasibility(res, problem.options)[0])
    return res


def _ramp_limit(u_old: float, u_new: float, curve) -> float | None:
    """Target value when a step would jump clean across a curve's ramp.

    Newton sees a flat curve on either side of the ramp and would bounce
    between the two saturated regions; landing mid-ramp breaks the cycle.
    """
    bps = getattr(curve, "breakpoints", None)
    if bps is None:
        return None
    hi_edge, lo_edge = bps[0], bps[3]
    if (u_old >= hi_edge and u_new < lo_edge) or (u_old <= lo_edge and u_new > hi_edge):
        return 0.5 * (hi_edge + lo_edge)
    return None


def _step_scale(problem: IslandProblem, z: np.ndarray, dz: np.ndarray, options: SolverOptions) -> float:
    layout = problem.layout
    nb = layout.nb
    scale = 1.0
    dv = np.max(np.abs(dz[: 2 * nb]))
    if dv > options.v_step_cap:
        scale = options.v_step_cap / dv
    if layout.segments:
        a0 = layout.index[("alpha",) + layout.segments[0]]
        da = np.max(np.abs(dz[a0 : a0 + len(layout.segments)]))
        if da > options.alpha_step_cap:
            scale = min(scale, options.alpha_step_cap / da)
    dfi = layout.index[("df",)]
    ddf = abs(dz[dfi])
    if ddf > options.df_step_cap:
        scale = min(scale, options.df_step_cap / ddf)

    # curve-aware limiting on the controlling signals
    df_old, df_new = z[dfi], z[dfi] + scale * dz[dfi]
    targets = []
    for key, curve in problem.curves.items():
        if key[0] == "alpha" and problem.net.load_by_id[key[1]].segments[key[2]].scheme is Scheme.UVLS:
            i = layout.buses.index(problem.net.load_by_id[key[1]].bus)
            u_old = math.hypot(z[i], z[nb + i])
            u_new = math.hypot(z[i] + scale * dz[i], z[nb + i] + scale * dz[nb + i])
        else:
            u_old, u_new = df_old, df_new
        t = _ramp_limit(u_old, u_new, curve)
        if t is not None:
            targets.append(scale * (t - u_old) / (u_new - u_old))
    if targets:
        scale = min(targets)
    return scale


def newton_solve(problem: IslandProblem, z0: np.ndarray, options: SolverOptions | None = None) -> SolveResult:
    """Damped Newton on the KKT system with per-iteration step limiting."""
    options = options or problem.options
    z = np.array(z0, dtype=float)
    if z.shape != (problem.layout.size,):
        raise ValueError(f"state has {z.size} entries, layout needs {problem.layout.size}")
    norm = math.inf
    for it in range(options.max_iter + 1):
        try:
            f = residual(problem, z)
        except NumericalGuardError as exc:
            return _make_result(problem, z, Status.DIVERGED, it, norm, str(exc))
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        if not math.isfinite(norm):
            return _make_result(problem, z, Status.DIVERGED, it, norm, "non-finite residual")
        if norm < options.tol_residual:
            return _make_result(problem, z, Status.CONVERGED, it, norm)
        if it == options.max_iter:
            break
        try:
            dz = splu(jacobian(problem, z)).solve(-f)
        except RuntimeError as exc:
            return _make_result(problem, z, Status.DIVERGED, it, norm, f"singular KKT matrix: {exc}")
        if not np.all(np.isfinite(dz)):
            return _make_result(problem, z, Status.DIVERGED, it, norm, "non-finite Newton step")
        z = z + _step_scale(problem, z, dz, options) * dz
    return _make_result(problem, z, Status.DIVERGED, options.max_iter, norm,
                        f"no convergence in {options.max_iter} iterations")


def homotopy_solve(problem: IslandProblem, options: SolverOptions | None = None,
                   z0: np.ndarray | None = None) -> SolveResult:
    """Source stepping: scale all load and generator set-points by eta and
    march eta from 0 to 1, bisecting a failed step up to ``max_refinements``
    times."""
    options = options or problem.options
    z_good = flat_start(problem.layout) if z0 is None else np.array(z0, dtype=float)
    good_eta = None
    pending = deque(sorted(set(options.homotopy_steps) | {1.0}))
    refinements = 0
    total_iter = 0
    last = None
    while pending:
        eta = pending[0]
        res = newton_solve(problem.with_eta(eta), z_good, options)
        total_iter += res.iterations
        last = res
        if res.converged:
            z_good, good_eta = res.state.z, eta
            pending.popleft()
            continue
        if good_eta is None or refinements >= options.max_refinements:
            msg = f"homotopy failed at eta={eta:g}; last good eta={good_eta}"
            return replace(res, iterations=total_iter, message=msg, eta=good_eta if good_eta is not None else 0.0)
        refinements += 1
        pending.appendleft(0.5 * (good_eta + eta))
    return replace(last, iterations=total_iter)


def snap_discrete_alphas(problem: IslandProblem, result: SolveResult,
                         options: SolverOptions | None = None) -> tuple[IslandProblem, SolveResult]:
    """Fix DISCRETE shed fractions stuck inside (band, 1 - band) at the
    nearer bound and re-solve warm-started; repeat until nothing snaps.

    Returns the (possibly reduced) problem together with the new result.
    """
    options = options or problem.options
    if not result.converged:
        raise ValueError("snap requires a converged result")
    band = options.snap_band
    snapped = dict(result.snapped)
    for _ in range(len(problem.layout.segments) + 1):
        to_fix = {}
        for seg in problem.layout.segments:
            seg_def = problem.net.load_by_id[seg[0]].segments[seg[1]]
            if seg_def.mode is not ShedMode.DISCRETE:
                continue
            a = result.state[("alpha",) + seg]
            if band < a < 1.0 - band:
                to_fix[seg] = 1.0 if a >= options.snap_threshold else 0.0
        if not to_fix:
            return problem, replace(result, snapped=snapped)
        snapped.update(to_fix)
        problem = problem.with_fixed(to_fix)
        warm = result.state.named()
        result = newton_solve(problem, flat_start(problem.layout, warm), options)
        result = replace(result, snapped=snapped)
        if not result.converged:
            return problem, replace(result, message=f"post-snap divergence ({result.message})")
    return problem, result


def classify_feasibility(result: SolveResult, options: SolverOptions | None = None):
    """Return ``(feasibility, [(bus, |I_F|), ...] sorted descending)``."""
    options = options or SolverOptions()
    if result.status is not Status.CONVERGED:
        raise ValueError("feasibility is only defined for converged results")
    ranked = sorted(result.if_mag.items(), key=lambda kv: (-kv[1], kv[0]))
    worst = ranked[0][1] if ranked else 0.0
    feas = Feasibility.FEASIBLE if worst < options.feas_tol else Feasibility.INFEASIBLE
    return feas, ranked


# ---------------------------------------------------------------------------
# Stage I pipeline and derived quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IslandSolution:
    problem: IslandProblem
    result: SolveResult
    used_homotopy: bool = False


def solve_island(net: Network, island: Island, options: SolverOptions | None = None,
                 warm: dict | None = None, snap: bool = True) -> IslandSolution:
    """Newton (warm or flat start), homotopy fallback, then the snap loop."""
    options = options or SolverOptions()
    problem = IslandProblem.build(net, island, options)
    res = newton_solve(problem, flat_start(problem.layout, warm), options)
    used_homotopy = False
    if not res.converged and warm:
        res = newton_solve(problem, flat_start(problem.layout), options)
    if not res.converged:
        res = homotopy_solve(problem, options)
        used_homotopy = True
    if res.converged and snap:
        problem, res = snap_discrete_alphas(problem, res, options)
    return IslandSolution(problem, res, used_homotopy)


def shed_mw(problem: IslandProblem, result: SolveResult) -> float:
    net = problem.net
    total = 0.0
    for (lid, k), a in result.state.alphas().items():
        ld = net.load_by_id[lid]
        total += ld.p_set * ld.segments[k].fraction * a
    return total * net.base_mva


def branch_flows(net: Network, island: Island, state: StateVector) -> dict[int, tuple[complex, complex]]:
    """Complex power (p.u.) entering each in-island branch at its two ends."""
    v = state.voltages()
    out = {}
    for bid in island.branches:
        br = net.branch_by_id[bid]
        vf, vt = v[br.from_bus], v[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_sh
        i_f = (ys + ysh) / br.tap**2 * vf - ys / br.tap * vt
        i_t = (ys + ysh) * vt - ys / br.tap * vf
        out[bid] = (vf * i_f.conjugate(), vt * i_t.conjugate())
    return out


def island_power_balance(problem: IslandProblem, result: SolveResult) -> dict[str, float]:
    """Real-power bookkeeping (p.u.) computed from branch flows."""
    net, lay, st = problem.net, problem.layout, result.state
    v = st.voltages()
    gen = 0.0
    for gid in lay.gens:
        if gid == lay.ref_gen:
            vr = v[lay.ref_bus]
            gen += vr.real * st[("isr", gid)] + vr.imag * st[("isi", gid)]
        else:
            gen += problem.eta * net.gen_by_id[gid].p_set + st[("dp", gid)]
    alphas = st.alphas()
    load = 0.0
    for lid in problem.island.loads:
        ld = net.load_by_id[lid]
        shed = sum(s.fraction * alphas[(lid, k)] for k, s in enumerate(ld.segments))
        load += problem.eta * ld.p_set * (1.0 - shed)
    losses = sum((sf + stt).real for sf, stt in branch_flows(net, problem.island, st).values())
    losses += sum(net.bus_by_id[b].shunt_g * abs(v[b]) ** 2 for b in lay.buses)
    if_power = sum((v[b] * c.conjugate()).real for b, c in st.infeasibility().items())
    return {"generation": gen, "load": load, "losses": losses, "if_power": if_power,
            "mismatch": gen + if_power - load - losses}
