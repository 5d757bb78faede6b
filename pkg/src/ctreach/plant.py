"""Aircraft taxiing dynamics.

State is ``(p, theta)``: crosstrack position in metres and heading error in
radians.  The steering angle ``phi`` enters through a kinematic bicycle
model::

    dp/dt     = v * sin(theta)
    dtheta/dt = (v / L) * tan(phi)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import TAN_GUARD, Box, Interval, interval_mul, interval_sin, interval_tan

DEFAULT_SUBSTEP = 1.0 / 256.0


class PhiOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class PlantParams:
    v: float = 5.0
    L: float = 5.0
    phi_limit: float = math.radians(80.0)
    tan_guard: float = TAN_GUARD

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError(f"taxi speed must be positive, got {self.v}")
        if not self.L > 0:
            raise ValueError(f"wheelbase must be positive, got {self.L}")
        if not 0 < self.phi_limit < math.pi / 2 - self.tan_guard:
            raise ValueError(
                f"phi_limit {self.phi_limit} must lie in (0, pi/2 - guard={math.pi / 2 - self.tan_guard})"
            )


@dataclass(frozen=True)
class State:
    p: float
    theta: float

    def __iter__(self):
        yield self.p
        yield self.theta


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 2)
    phi: np.ndarray  # steering applied over each substep, rad
    step: float
    saturated: bool = False
    left_domain: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> State:
        return State(float(self.states[-1, 0]), float(self.states[-1, 1]))

    def __len__(self):
        return len(self.times)


def dynamics(s: State, phi: float, params: PlantParams) -> tuple[float, float]:
    if abs(phi) > params.phi_limit:
        raise PhiOutOfRange(f"|phi|={abs(phi):.6f} exceeds limit {params.phi_limit:.6f}")
    return params.v * math.sin(s.theta), (params.v / params.L) * math.tan(phi)


def dynamics_interval(sbox: Box, phi: Interval, params: PlantParams) -> Box:
    """Enclosure of ``dynamics`` over every state in ``sbox`` and steering in ``phi``."""
    theta = sbox[1]
    dp = interval_mul(Interval.point(params.v), interval_sin(theta))
    dth = interval_mul(Interval.point(params.v / params.L), interval_tan(phi, params.tan_guard))
    return Box((dp, dth))


def substeps_for(duration: float, substep: float) -> tuple[int, float]:
    """Number of uniform substeps covering ``duration`` no coarser than ``substep``."""
    n = max(1, int(math.ceil(duration / substep - 1e-9)))
    return n, duration / n


def simulate(s0: State, controller, duration: float, substep: float = DEFAULT_SUBSTEP,
             params: PlantParams | None = None, hold: float | None = None,
             latent=None, strict: bool = False, domain: Box | None = None) -> Trajectory:
    """Integrate the closed loop with classical RK4.

    The controller is re-evaluated at every RK4 stage, which stands in for
    continuous actuation.  With ``hold`` set, it is sampled every ``hold``
    seconds and held constant in between.  Commands beyond ``phi_limit`` are
    clamped and the trajectory flagged; with ``strict`` they raise.
    """
    from .controller import as_network, require_latent

    params = params or PlantParams()
    if substep <= 0:
        raise ValueError("substep must be positive")
    if duration < substep:
        raise ValueError("duration must be at least one substep")
    net = as_network(controller)
    if hold is not None:
        n_hold, _ = substeps_for(hold, substep)
        h = hold / n_hold
        n_steps = int(round(duration / h))
        hold_every = n_hold
    else:
        n_steps, h = substeps_for(duration, substep)
        hold_every = 0
    lat = require_latent(controller, latent)
    latents = None if lat is None else np.broadcast_to(lat, (1, n_steps, len(lat))).copy()
    from ._core import kernels

    traj, phis, sat = kernels.simulate_batch(
        np.array([[s0.p, s0.theta]]), net.weights, net.biases, net.relu, latents,
        params.v, params.L, params.phi_limit, h, n_steps, hold_every,
    )
    if strict and sat[0]:
        raise PhiOutOfRange("controller command saturated during simulation")
    states = traj[0]
    left = False
    if domain is not None:
        lo, hi = domain.lo, domain.hi
        left = bool(np.any((states < lo) | (states > hi)))
    return Trajectory(
        times=np.arange(n_steps + 1) * h,
        states=states,
        phi=phis[0],
        step=h,
        saturated=bool(sat[0]),
        left_domain=left,
    )
