"""Manufactured solution for the convergence studies.

Exact fields (sigma_r = mu_r = 1):

    u = (e^t cos y, 0)     p = -x cos y
    B = (0, sin t cos x)   E = sin x

Substituting into the continuous equations gives the forcing terms below
(derived by hand; div u = 0 so the mass equation needs no source):

    momentum : f = du/dt + (u.grad)u - Re^-1 Lap u - s j x B + grad p,
               with j = sigma(E + u x B)
    magnetic : g_B = dB/dt + curl E = (0, (cos t - 1) cos x)   [div-free]
    electric : f_E = sigma(E + u x B) - Rm^-1 rot B
"""

from __future__ import annotations

import numpy as np

from .system import BlockVector, Forcing, PhysParams, Spaces


def exact_fields(t: float) -> dict:
    et, st, ct = np.exp(t), np.sin(t), np.cos(t)

    def u(x, y):
        return et * np.cos(y), np.zeros_like(x)

    def du(x, y):
        z = np.zeros_like(x)
        return np.array([[z, -et * np.sin(y)], [z, z]])

    def p(x, y):
        return -x * np.cos(y)

    def B(x, y):
        return np.zeros_like(x), st * np.cos(x)

    def E(x, y):
        return np.sin(x)

    return {"u": u, "du": du, "p": p, "B": B, "E": E}


def forcing(params: PhysParams, t: float) -> Forcing:
    et, st, ct = np.exp(t), np.sin(t), np.cos(t)
    Re, Rm, s = params.Re, params.Rm, params.s

    def f_u(x, y):
        # j = E + u x B  (sigma = 1); u x B = u1 B2
        j = np.sin(x) + et * st * np.cos(x) * np.cos(y)
        f1 = et * np.cos(y) * (1.0 + 1.0 / Re) + s * j * st * np.cos(x) - np.cos(y)
        f2 = x * np.sin(y)
        return f1, f2

    def g_B(x, y):
        return np.zeros_like(x), (ct - 1.0) * np.cos(x)

    def f_E(x, y):
        j = np.sin(x) + et * st * np.cos(x) * np.cos(y)
        # rot B = dB2/dx - dB1/dy = -sin t sin x
        return j + st * np.sin(x) / Rm

    return Forcing(f_u=f_u, g_B=g_B, f_E=f_E)


def bc_state(spaces: Spaces, t: float) -> BlockVector:
    ex = exact_fields(t)
    return spaces.interpolate_state(u=ex["u"], B=ex["B"], E=ex["E"])


def initial_state(spaces: Spaces) -> BlockVector:
    ex = exact_fields(0.0)
    return spaces.interpolate_state(u=ex["u"], p=ex["p"], B=ex["B"], E=ex["E"])
