#!/usr/bin/env python3
"""Independent derivation of the two-link arm dynamics from its Lagrangian.

Builds the kinetic and potential energy of both links from the planar
geometry (theta1 measured from the upward vertical, theta2 relative to
link 1, potential zero at the height of joint 1), applies the
Euler-Lagrange equations symbolically and evaluates the resulting
inertia matrix, Christoffel Coriolis matrix, gravity vector, total
energy and state derivative on a fixed 5x5x3x3 grid of states.

Nothing here uses the closed form hard-coded in the Rust crate; the
fixture it writes is the ground truth the Rust tests compare against.

Regenerate with:
    python3 crates/core/tests/oracle/lagrangian_oracle.py \
        > crates/core/tests/fixtures/lagrangian_grid.json
"""

import json

import mpmath
import sympy as sp

mpmath.mp.dps = 40

t = sp.symbols("t")
m1, m2, l1, l2, r1, r2, I1, I2, grav = sp.symbols("m1 m2 l1 l2 r1 r2 I1 I2 grav", positive=True)
th1 = sp.Function("th1")(t)
th2 = sp.Function("th2")(t)
q = [th1, th2]
qd = [sp.diff(x, t) for x in q]
qdd = [sp.diff(x, t, 2) for x in q]

# Centres of mass; y axis points up, x axis to the right.
x1 = -r1 * sp.sin(th1)
y1 = r1 * sp.cos(th1)
x2 = -l1 * sp.sin(th1) - r2 * sp.sin(th1 + th2)
y2 = l1 * sp.cos(th1) + r2 * sp.cos(th1 + th2)

v1sq = sp.diff(x1, t) ** 2 + sp.diff(y1, t) ** 2
v2sq = sp.diff(x2, t) ** 2 + sp.diff(y2, t) ** 2
w1 = qd[0]
w2 = qd[0] + qd[1]

K = sp.Rational(1, 2) * (m1 * v1sq + I1 * w1**2 + m2 * v2sq + I2 * w2**2)
P = m1 * grav * y1 + m2 * grav * y2
L = K - P

# Euler-Lagrange: d/dt dL/dqd - dL/dq = u
eom = [sp.expand(sp.diff(sp.diff(L, qd[i]), t) - sp.diff(L, q[i])) for i in range(2)]

# Plain symbols for extraction.
a1, a2, w1s, w2s, dd1, dd2 = sp.symbols("a1 a2 w1s w2s dd1 dd2")
subs = {qdd[0]: dd1, qdd[1]: dd2, qd[0]: w1s, qd[1]: w2s}
eom_s = [sp.simplify(e.subs(subs).subs({th1: a1, th2: a2})) for e in eom]
K_s = sp.simplify(K.subs(subs).subs({th1: a1, th2: a2}))
P_s = sp.simplify(P.subs({th1: a1, th2: a2}))

M = sp.Matrix(2, 2, lambda i, j: sp.diff(eom_s[i], [dd1, dd2][j]))
grav_vec = sp.Matrix([sp.diff(P_s, a1), sp.diff(P_s, a2)])
M = sp.simplify(M)

# Christoffel symbols of the first kind give the Coriolis matrix.
qs = [a1, a2]
ws = [w1s, w2s]
Cmat = sp.zeros(2, 2)
for k in range(2):
    for j in range(2):
        acc = 0
        for i in range(2):
            c = sp.Rational(1, 2) * (
                sp.diff(M[k, j], qs[i]) + sp.diff(M[k, i], qs[j]) - sp.diff(M[i, j], qs[k])
            )
            acc += c * ws[i]
        Cmat[k, j] = sp.simplify(acc)

# Cross-check: the extracted pieces reassemble the Euler-Lagrange residual.
recon = M * sp.Matrix([dd1, dd2]) + Cmat * sp.Matrix(ws) + grav_vec
for i in range(2):
    assert sp.simplify(recon[i] - eom_s[i]) == 0

tau1, tau2 = sp.symbols("tau1 tau2")
qdd_sol = M.LUsolve(sp.Matrix([tau1, tau2]) - Cmat * sp.Matrix(ws) - grav_vec)

PARAMS = {
    m1: sp.Integer(1),
    m2: sp.Integer(1),
    l1: sp.Integer(1),
    l2: sp.Integer(1),
    r1: sp.Rational(45, 100),
    r2: sp.Rational(45, 100),
    I1: sp.Rational(84, 1000),
    I2: sp.Rational(84, 1000),
    grav: sp.Rational(981, 100),
}

syms = (a1, a2, w1s, w2s, tau1, tau2)


def lam(expr):
    return sp.lambdify(syms, expr.subs(PARAMS), modules="mpmath")


f_M = lam(M)
f_C = lam(Cmat)
f_g = lam(grav_vec)
f_E = lam(K_s + P_s)
f_qdd = lam(qdd_sol)

TORQUE = (mpmath.mpf("1.0"), mpmath.mpf("-0.5"))
ANGLES = [mpmath.mpf(v) for v in ("-3", "-1.5", "0", "1.5", "3")]
RATES = [mpmath.mpf(v) for v in ("-2", "0.5", "3")]


def num(x):
    return float(x)


def mat(m):
    return [[num(m[i, j]) for j in range(m.cols)] for i in range(m.rows)]


def vec(m):
    return [num(m[i, 0]) for i in range(m.rows)]


def sample(state):
    th1v, th2v, w1v, w2v = state
    passive = f_qdd(th1v, th2v, w1v, w2v, 0, 0)
    forced = f_qdd(th1v, th2v, w1v, w2v, TORQUE[0], TORQUE[1])
    return {
        "state": [num(v) for v in state],
        "mass": mat(f_M(*state, 0, 0)),
        "coriolis": mat(f_C(*state, 0, 0)),
        "gravity": vec(f_g(*state, 0, 0)),
        "energy": num(f_E(*state, 0, 0)),
        "xdot_passive": [num(w1v), num(w2v)] + vec(passive),
        "xdot_forced": [num(w1v), num(w2v)] + vec(forced),
    }


grid = [sample((a, b, c, d)) for a in ANGLES for b in ANGLES for c in RATES for d in RATES]
deg = mpmath.pi / 180
reference = sample((30 * deg, 45 * deg, mpmath.mpf(0), mpmath.mpf(0)))

out = {
    "params": {"m1": 1.0, "m2": 1.0, "l1": 1.0, "l2": 1.0, "r1": 0.45, "r2": 0.45,
               "I1": 0.084, "I2": 0.084, "grav": 9.81},
    "torque": [num(TORQUE[0]), num(TORQUE[1])],
    "symbolic": {
        "mass": [[str(M[i, j]) for j in range(2)] for i in range(2)],
        "coriolis": [[str(Cmat[i, j]) for j in range(2)] for i in range(2)],
        "gravity": [str(grav_vec[i]) for i in range(2)],
    },
    "reference_30_45": reference,
    "grid": grid,
}
print(json.dumps(out, indent=1))
