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

# Finite-volume solver for the 2-d linearised Euler equations around a
# constant background, used to produce training and validation data.
#
#   d/dt rho' + div(u_c rho' + rho_c u') = 0
#   d/dt u'   + (u_c . grad) u' + grad(p') / rho_c = 0
#   d/dt p'   + div(u_c p' + gamma p_c u') = 0
#
# First-order Rusanov (local Lax-Friedrichs) interface fluxes, forward Euler in
# time, one ghost layer: p' = 0 in the ghost cells, rho', ux', uy' copied from
# the adjacent interior cell (outflow boundary).

import logging
import math
from dataclasses import dataclass

import numpy as np

from pdeshard.config import config_from_mapping, config_to_dict
from pdeshard.data.fields import DTYPE, Dataset, Snapshot
from pdeshard.exceptions import (
    CFLViolationError, ConfigurationError, NonFiniteStateError)

# Forward Euler with the unsplit 2-d update is stable for cfl <= 1/2.
STABLE_CFL = 0.5


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters of one simulation run. Defaults reproduce the Gaussian pulse
    test case at full size; all quantities are nondimensional.

    Parameters
    ----------
    n: int, default 256
        Grid cells per direction
    extent: float, default 2.0
        Half width of the square domain [-extent, extent]^2
    gamma: float, default 1.4
        Ratio of specific heats
    rho_c, p_c: float, default 1.0
        Background density and pressure
    uc_x, uc_y: float, default 0.0
        Background velocity
    pulse_amp: float, default 0.5
        Amplitude of the Gaussian pressure pulse
    pulse_hw: float, default 0.3
        Half width at half maximum of the pulse
    pulse_cx, pulse_cy: float, default 0.0
        Pulse centre
    cfl: float, default 0.4
        dt = cfl * dx / (|u_c| + c)
    t_steps: int, default 1500
        Number of frames written, including the initial condition
    """
    n: int = 256
    extent: float = 2.0
    gamma: float = 1.4
    rho_c: float = 1.0
    p_c: float = 1.0
    uc_x: float = 0.0
    uc_y: float = 0.0
    pulse_amp: float = 0.5
    pulse_hw: float = 0.3
    pulse_cx: float = 0.0
    pulse_cy: float = 0.0
    cfl: float = 0.4
    t_steps: int = 1500

    def validate(self):
        problems = []
        if self.n < 8:
            problems.append('n must be >= 8')
        if self.extent <= 0:
            problems.append('extent must be > 0')
        if self.gamma <= 1:
            problems.append('gamma must be > 1')
        if self.rho_c <= 0 or self.p_c <= 0:
            problems.append('rho_c and p_c must be > 0')
        if not 0 < self.cfl < 1:
            problems.append('cfl must lie in (0, 1)')
        if self.pulse_hw <= 0:
            problems.append('pulse_hw must be > 0')
        if self.t_steps < 1:
            problems.append('t_steps must be >= 1')
        if problems:
            raise ConfigurationError('Invalid SolverConfig: {}'.format(
                '; '.join(problems)))
        return self

    @property
    def dx(self):
        return 2.0 * self.extent / self.n

    @property
    def sound_speed(self):
        return math.sqrt(self.gamma * self.p_c / self.rho_c)

    @property
    def dt(self):
        return self.cfl * self.dx / (
            math.hypot(self.uc_x, self.uc_y) + self.sound_speed)

    @property
    def background(self):
        return BackgroundState(self.rho_c, self.p_c, self.uc_x, self.uc_y,
                               self.gamma)

    def cell_centres(self):
        """1-d coordinates of the cell centres, shared by x and y."""
        return -self.extent + (np.arange(self.n, dtype=DTYPE) + 0.5) * self.dx

    def to_dict(self):
        return config_to_dict(self)

    @classmethod
    def from_dict(cls, mapping):
        return config_from_mapping(cls, mapping)


@dataclass(frozen=True)
class BackgroundState:
    rho_c: float
    p_c: float
    uc_x: float = 0.0
    uc_y: float = 0.0
    gamma: float = 1.4

    def __post_init__(self):
        if self.rho_c <= 0 or self.p_c <= 0:
            raise ConfigurationError(
                'Background density and pressure must be positive')

    @property
    def sound_speed(self):
        return math.sqrt(self.gamma * self.p_c / self.rho_c)

    @property
    def max_speed(self):
        return math.hypot(self.uc_x, self.uc_y) + self.sound_speed


def gaussian_pulse(x, y, cfg):
    """Pressure perturbation of the initial pulse at points (x, y)."""
    r2 = (x - cfg.pulse_cx) ** 2 + (y - cfg.pulse_cy) ** 2
    return cfg.pulse_amp * np.exp(-math.log(2.0) * r2 / cfg.pulse_hw ** 2)


def initial_condition(cfg):
    """
    Fluid at rest with a Gaussian pressure pulse, zero density perturbation.

    Rows run along y and columns along x.

    Parameters
    ----------
    cfg: SolverConfig

    Returns
    -------
    snapshot: Snapshot
    """
    cfg.validate()
    centres = cfg.cell_centres()
    y, x = np.meshgrid(centres, centres, indexing='ij')
    zeros = np.zeros_like(x)
    return Snapshot.from_channels(zeros, zeros, zeros,
                                  gaussian_pulse(x, y, cfg))


def _flux_x(q, bg):
    rho, ux, uy, p = q
    return np.stack([
        bg.uc_x * rho + bg.rho_c * ux,
        bg.uc_x * ux + p / bg.rho_c,
        bg.uc_x * uy,
        bg.uc_x * p + bg.gamma * bg.p_c * ux,
    ])


def _flux_y(q, bg):
    rho, ux, uy, p = q
    return np.stack([
        bg.uc_y * rho + bg.rho_c * uy,
        bg.uc_y * ux,
        bg.uc_y * uy + p / bg.rho_c,
        bg.uc_y * p + bg.gamma * bg.p_c * uy,
    ])


def _with_ghosts(q):
    ghosted = np.pad(q, ((0, 0), (1, 1), (1, 1)), mode='edge')
    # outflow: pressure perturbation vanishes outside the domain
    ghosted[3, 0, :] = 0.0
    ghosted[3, -1, :] = 0.0
    ghosted[3, :, 0] = 0.0
    ghosted[3, :, -1] = 0.0
    return ghosted


def advance(q, bg, dx, dt):
    """
    One explicit step on a raw 4 x h x w array; see `step`.

    Returns a new array, `q` is left untouched.
    """
    g = _with_ghosts(q)
    ax = abs(bg.uc_x) + bg.sound_speed
    ay = abs(bg.uc_y) + bg.sound_speed

    left, right = g[:, 1:-1, :-1], g[:, 1:-1, 1:]
    fx = 0.5 * (_flux_x(left, bg) + _flux_x(right, bg)) \
        - 0.5 * ax * (right - left)
    below, above = g[:, :-1, 1:-1], g[:, 1:, 1:-1]
    fy = 0.5 * (_flux_y(below, bg) + _flux_y(above, bg)) \
        - 0.5 * ay * (above - below)

    ratio = dt / dx
    return q - ratio * (fx[:, :, 1:] - fx[:, :, :-1]) \
        - ratio * (fy[:, 1:, :] - fy[:, :-1, :])


def _check_cfl(bg, dx, dt, cfl):
    limit = cfl * dx / bg.max_speed
    # allow for rounding in dt = cfl * dx / speed
    if dt > limit * (1.0 + 1e-12):
        raise CFLViolationError(
            'dt={:.6g} exceeds the CFL limit {:.6g} (cfl={}, dx={:.6g})'.format(
                dt, limit, cfl, dx))


def step(snapshot, bg, dx, dt, cfl=STABLE_CFL):
    """
    Advance a snapshot by one time step.

    Parameters
    ----------
    snapshot: Snapshot
        State at time t
    bg: BackgroundState
        Background the equations are linearised around
    dx: float
        Cell size, equal in both directions
    dt: float
        Time step, must satisfy dt <= cfl * dx / (|u_c| + c)
    cfl: float, default STABLE_CFL
        CFL number used for the check

    Returns
    -------
    snapshot: Snapshot
        State at time t + dt
    """
    _check_cfl(bg, dx, dt, cfl)
    q = advance(snapshot.data, bg, dx, dt)
    if not np.all(np.isfinite(q)):
        raise NonFiniteStateError(
            'Solver state became non-finite (max |q| before step {:.3g})'
            .format(float(np.max(np.abs(snapshot.data)))))
    return Snapshot(q)


def energy_proxy(snapshot, bg):
    """Sum of p'^2 + rho_c^2 (ux'^2 + uy'^2) over the grid."""
    rho, ux, uy, p = snapshot.data
    return float(np.sum(p ** 2 + bg.rho_c ** 2 * (ux ** 2 + uy ** 2)))


def run(cfg):
    """
    Simulate `cfg.t_steps` frames starting from the initial condition.

    Parameters
    ----------
    cfg: SolverConfig

    Returns
    -------
    dataset: Dataset
        Frames 0..t_steps-1, dt and the solver configuration in meta['solver']
    """
    cfg.validate()
    bg, dx, dt = cfg.background, cfg.dx, cfg.dt
    if cfg.cfl > STABLE_CFL:
        raise CFLViolationError(
            'cfl={} is above the stable limit {} of the scheme'.format(
                cfg.cfl, STABLE_CFL))
    _check_cfl(bg, dx, dt, cfg.cfl)

    frames = np.empty((cfg.t_steps, 4, cfg.n, cfg.n), dtype=DTYPE)
    frames[0] = initial_condition(cfg).data
    logging.info('Solving {} frames on a {}x{} grid (dx={:.4g}, dt={:.4g})'
                 .format(cfg.t_steps, cfg.n, cfg.n, dx, dt))
    for t in range(1, cfg.t_steps):
        frames[t] = advance(frames[t - 1], bg, dx, dt)
        if not np.all(np.isfinite(frames[t])):
            raise NonFiniteStateError(
                'Solver state became non-finite at frame {}'.format(t), step=t)
        if t % 250 == 0:
            logging.debug('Frame {}/{}, energy proxy {:.6g}'.format(
                t, cfg.t_steps, energy_proxy(Snapshot(frames[t]), bg)))

    return Dataset(frames, dt, {'source': 'euler_sim',
                                'solver': cfg.to_dict()})
