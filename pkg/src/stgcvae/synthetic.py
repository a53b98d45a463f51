"""Synthetic trajectory corpora for desk-scale training and acceptance runs.

Patterns:
    const-velocity  straight walkers
    turn            90-degree heading change at frame 10
    stop            agents halt at frame 12
All agents carry N(0, 0.02^2) positional jitter.
"""

from __future__ import annotations

import numpy as np

from .data import SEQ_LEN, SequenceWindow
from .errors import ParameterError

JITTER_STD = 0.02
PATTERNS = ("const-velocity", "turn", "stop")
TURN_FRAME = 10
STOP_FRAME = 12


def make_window(pattern: str, agents: int, rng: np.random.Generator,
                speed_range=(0.15, 0.35), scene: str | None = None,
                ) -> SequenceWindow:
    """One 20-frame window with `agents` walkers following the pattern.

    Starts, headings, speeds, and the turn direction are drawn from rng.
    """
    if pattern not in PATTERNS:
        raise ParameterError(
            f"unknown pattern {pattern!r}; choose from {PATTERNS}")
    pos = np.zeros((SEQ_LEN, agents, 2))
    for n in range(agents):
        start = rng.uniform(-4.0, 4.0, 2)
        heading = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(*speed_range)
        turn_sign = rng.choice([-1.0, 1.0])
        p = start.copy()
        h = heading
        for t in range(SEQ_LEN):
            pos[t, n] = p
            if pattern == "turn" and t == TURN_FRAME - 1:
                h += turn_sign * np.pi / 2
            step = 0.0 if (pattern == "stop" and t >= STOP_FRAME - 1) \
                else speed
            p = p + step * np.array([np.cos(h), np.sin(h)])
    pos += rng.normal(0.0, JITTER_STD, pos.shape)
    return SequenceWindow(list(range(1, agents + 1)), pos,
                          scene=scene or pattern)


def make_corpus(pattern: str, agents: int, windows: int,
                seed: int, scene: str | None = None) -> list[SequenceWindow]:
    rng = np.random.default_rng(seed)
    return [make_window(pattern, agents, rng, scene=scene)
            for _ in range(windows)]
