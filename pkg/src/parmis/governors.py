"""Fixed reference controllers modelled on the stock Linux cpufreq governors."""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .policy import BIG_FREQS_MHZ, LITTLE_FREQS_MHZ, DrmDecision

UP_THRESHOLD = 0.8
DOWN_THRESHOLD = 0.2

# feature positions in the counter vector
LITTLE_UTIL = 6
BIG_UTIL = slice(7, 11)


class Performance:
    name = "performance"

    def reset(self) -> None:
        pass

    def decide(self, state) -> DrmDecision:
        return DrmDecision(4, 4, BIG_FREQS_MHZ[-1], LITTLE_FREQS_MHZ[-1])


class Powersave:
    """One Little core at the lowest frequency; the Big cluster is gated."""

    name = "powersave"

    def reset(self) -> None:
        pass

    def decide(self, state) -> DrmDecision:
        return DrmDecision(0, 1, BIG_FREQS_MHZ[0], LITTLE_FREQS_MHZ[0])


class _ThresholdGovernor:
    """All cores on; each cluster's frequency follows its previous-epoch utilization.

    Big utilization is the busiest Big core; Little utilization is the
    cluster average. Both clusters start at their lowest frequency.
    """

    name = ""

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.idx = [0, 0]
        self.prev_util = [0.0, 0.0]

    def _step(self, i: int, util: float, top: int) -> None:
        if util > UP_THRESHOLD:
            self.idx[i] = min(self.idx[i] + 1, top)
        elif util < DOWN_THRESHOLD:
            self.idx[i] = max(self.idx[i] - 1, 0)

    def decide(self, state) -> DrmDecision:
        s = np.asarray(state, dtype=float)
        utils = [float(np.max(s[BIG_UTIL])), float(s[LITTLE_UTIL])]
        tops = [len(BIG_FREQS_MHZ) - 1, len(LITTLE_FREQS_MHZ) - 1]
        for i in range(2):
            self._update(i, utils[i], tops[i])
            self.prev_util[i] = utils[i]
        return DrmDecision(4, 4, BIG_FREQS_MHZ[self.idx[0]], LITTLE_FREQS_MHZ[self.idx[1]])

    def _update(self, i, util, top):
        self._step(i, util, top)


class Ondemand(_ThresholdGovernor):
    name = "ondemand"


class Interactive(_ThresholdGovernor):
    """Like ondemand, but a rising edge through the upper threshold jumps to the top frequency."""

    name = "interactive"

    def _update(self, i, util, top):
        if util > UP_THRESHOLD and self.prev_util[i] <= UP_THRESHOLD:
            self.idx[i] = top
        else:
            self._step(i, util, top)


GOVERNORS = {g.name: g for g in (Ondemand, Interactive, Performance, Powersave)}


def make(name: str):
    try:
        return GOVERNORS[name]()
    except KeyError:
        raise InputError(f"unknown governor {name!r}; choose from {sorted(GOVERNORS)}") from None
