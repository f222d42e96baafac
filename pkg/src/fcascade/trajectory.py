from dataclasses import dataclass, field

import numpy as np

MONITOR_COLUMNS = ("V", "W", "u_norm", "defect_norm", "x_norm", "energy_residual")


@dataclass
class Trajectory:
    """Recorded samples of a (closed- or open-loop) run.

    ``states`` has one row per sample; ``zs`` and ``us`` may be empty
    (``shape[1] == 0``) for flows of the ``x``-subsystem alone. ``monitors``
    maps names from ``MONITOR_COLUMNS`` to arrays aligned with ``times``.
    """

    times: np.ndarray
    states: np.ndarray
    zs: np.ndarray = None
    us: np.ndarray = None
    monitors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        k = self.times.size
        if self.zs is None:
            self.zs = np.zeros((k, 0))
        if self.us is None:
            self.us = np.zeros((k, 0))
        self.zs = np.asarray(self.zs, dtype=float).reshape(k, -1)
        self.us = np.asarray(self.us, dtype=float).reshape(k, -1)
        if self.states.shape[0] != k:
            raise ValueError("states and times differ in length")
        if k > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for name, arr in self.monitors.items():
            if len(arr) != k:
                raise ValueError(f"monitor {name!r} has {len(arr)} samples, expected {k}")

    def __len__(self):
        return self.times.size

    @property
    def final_state(self):
        return self.states[-1]
