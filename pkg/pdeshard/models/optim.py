"""
pde-shard - sub-domain parallel learning of PDE time stepping

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""

import sys
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

from pdeshard.data.fields import DTYPE
from pdeshard.exceptions import ShapeMismatchError

DEFAULT_ETA = 0.01
DEFAULT_RHO1 = 0.9
DEFAULT_RHO2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    """
    Moments and hyper-parameters of the ADAM optimiser.

    Parameters
    ----------
    m, v: list(np.ndarray)
        First and second moments, one array per parameter
    t: int
        Number of steps taken so far
    rho1, rho2: float
        Decay rates of the moments, in [0, 1)
    eta: float
        Learning rate
    eps: float
        Smoothing term, added to v_hat under the square root
    """
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0
    rho1: float = DEFAULT_RHO1
    rho2: float = DEFAULT_RHO2
    eta: float = DEFAULT_ETA
    eps: float = DEFAULT_EPS

    @classmethod
    def for_parameters(cls, params, **hyper):
        """Zero moments shaped like `params`."""
        return cls([np.zeros_like(p, dtype=DTYPE) for p in params],
                   [np.zeros_like(p, dtype=DTYPE) for p in params], 0, **hyper)


def adam_step(params, grads, state):
    """
    One ADAM update.

    m <- rho1 m + (1 - rho1) g
    v <- rho2 v + (1 - rho2) g * g
    W <- W - eta * m_hat / sqrt(v_hat + eps)

    with m_hat = m / (1 - rho1^t), v_hat = v / (1 - rho2^t) and t counted from
    1 on the first step.

    Parameters
    ----------
    params: list(np.ndarray)
        Current parameters
    grads: list(np.ndarray)
        Loss gradients, same shapes as params
    state: AdamState
        Not modified

    Returns
    -------
    params: list(np.ndarray)
        Updated parameters (new arrays)
    state: AdamState
        Updated moments and step counter
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError(
            'Got {} parameters, {} gradients and {} moments'.format(
                len(params), len(grads), len(state.m)))
    assert state.t < sys.maxsize, 'ADAM step counter overflow'
    t = state.t + 1
    correct1 = 1.0 - state.rho1 ** t
    correct2 = 1.0 - state.rho2 ** t

    new_params, new_m, new_v = [], [], []
    for w, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != w.shape:
            raise ShapeMismatchError(
                'Gradient {} does not match parameter {}'.format(
                    g.shape, w.shape))
        m = state.rho1 * m + (1.0 - state.rho1) * g
        v = state.rho2 * v + (1.0 - state.rho2) * g * g
        m_hat = m / correct1
        v_hat = v / correct2
        new_params.append(w - state.eta * m_hat / np.sqrt(v_hat + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, m=new_m, v=new_v, t=t)
