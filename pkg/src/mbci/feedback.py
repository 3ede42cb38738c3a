"""Score-to-scene mapping, pseudofeedback control, session schedules, and the
MISC / Likert response instruments.

Scene parameters follow the score through a linear map smoothed with an
exponential factor so the visuals never flicker; the meditation-guidance
volume is user-owned and never touched by score updates. The pseudofeedback
generator produces an EEG-independent reflected random walk for the sham
control condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ResponseValidationError

SCENE_CATALOG = ("candle", "campfire", "desert")
SMOOTHING_FACTOR = 0.3
SESSION_MINUTES = 90
MISC_INTERVAL_FEEDBACK_MIN = 10  # RMS and PMS
MISC_INTERVAL_REST_MIN = 2       # RS
SCENE_RESET_INTERVAL_MIN = 10

# Misery Scale: 0 no problems, 1 uneasiness, 2-5 symptoms without nausea,
# 6-9 nausea grades, 10 vomiting.
_SYMPTOM_STEM = ("Dizziness, warmth, headache, stomach awareness, sweating, "
                 "and other symptoms, but no nausea")
MISC_LABELS: dict[int, str] = {
    0: "No problems",
    1: "Uneasiness (no typical symptoms)",
    2: f"{_SYMPTOM_STEM}, Vague",
    3: f"{_SYMPTOM_STEM}, Slight",
    4: f"{_SYMPTOM_STEM}, Fairly",
    5: f"{_SYMPTOM_STEM}, Severe",
    6: "Nausea, Slight",
    7: "Nausea, Fairly",
    8: "Nausea, Severe",
    9: "Nausea, Retching",
    10: "Vomiting",
}

LIKERT_MIN, LIKERT_MAX = 1, 7
LIKERT_ANCHORS = {LIKERT_MIN: "strongly agree", LIKERT_MAX: "strongly disagree"}


@dataclass(frozen=True)
class SceneState:
    scene_id: str = "candle"
    element_intensity: float = 0.0
    background_brightness: float = 0.0
    background_volume: float = 0.0
    guidance_volume: float = 0.5
    timestamp: float = 0.0

    def __post_init__(self):
        for name in ("element_intensity", "background_brightness",
                     "background_volume", "guidance_volume"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.scene_id not in SCENE_CATALOG:
            raise ValueError(f"unknown scene {self.scene_id!r}")


def map_score_to_scene(score: float, current: SceneState,
                       timestamp: float | None = None) -> SceneState:
    """Drive the score-bound scene parameters toward score/100.

    Exponential smoothing (factor 0.3) avoids flicker; the update is a convex
    combination so parameters stay in [0, 1]. guidance_volume and scene_id
    are never modified here.
    """
    if not 0.0 <= score <= 100.0:
        raise ValueError(f"score must be in [0, 100], got {score}")
    target = score / 100.0

    def smooth(current_value: float) -> float:
        return current_value + SMOOTHING_FACTOR * (target - current_value)

    return replace(
        current,
        element_intensity=smooth(current.element_intensity),
        background_brightness=smooth(current.background_brightness),
        background_volume=smooth(current.background_volume),
        timestamp=current.timestamp if timestamp is None else timestamp,
    )


class PseudofeedbackGenerator:
    """Seeded reflected random walk on [0, 100], independent of any EEG.

    Drives the sham (PMS) condition through the same scene mapping as real
    scores, so the visuals change with realistic dynamics but carry no
    information about the user's state.
    """

    def __init__(self, seed: int, step_sd: float = 8.0, start: float = 50.0):
        self._rng = np.random.default_rng(seed)
        self.step_sd = step_sd
        self.value = float(start)

    def next(self) -> float:
        self.value = _reflect(self.value + self._rng.normal(0.0, self.step_sd))
        return self.value


def _reflect(x: float, lo: float = 0.0, hi: float = 100.0) -> float:
    # fold back into [lo, hi]; handles multi-bounce steps
    span = hi - lo
    x = (x - lo) % (2 * span)
    return lo + (x if x <= span else 2 * span - x)


# ---------------------------------------------------------------------------
# Session modes and schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionMode:
    mode: str  # RMS | PMS | RS
    duration_minutes: int = SESSION_MINUTES

    def __post_init__(self):
        if self.mode not in ("RMS", "PMS", "RS"):
            raise ValueError(f"unknown session mode {self.mode!r}")
        if self.duration_minutes % self.misc_interval_minutes != 0:
            raise ValueError("MISC interval must divide the session duration")

    @property
    def misc_interval_minutes(self) -> int:
        return MISC_INTERVAL_REST_MIN if self.mode == "RS" else MISC_INTERVAL_FEEDBACK_MIN

    @property
    def feedback_enabled(self) -> bool:
        return self.mode != "RS"


@dataclass(frozen=True)
class ScheduleEvent:
    kind: str       # session_start | misc_prompt | scene_reset | session_end
    minute: float
    payload: dict = field(default_factory=dict)


def build_schedule(mode: SessionMode) -> list[ScheduleEvent]:
    """Ordered event timeline for one session.

    MISC prompts run from minute 0 through the final minute inclusive (every
    2 min in RS, every 10 min otherwise). RMS/PMS get a scene-reset marker at
    the start of each 10-minute interval; RS has no scene events at all.
    """
    events = [ScheduleEvent("session_start", 0.0)]
    interval = mode.misc_interval_minutes
    for m in range(0, mode.duration_minutes + 1, interval):
        events.append(ScheduleEvent("misc_prompt", float(m), {"prompt_minute": m}))
    if mode.feedback_enabled:
        for m in range(0, mode.duration_minutes, SCENE_RESET_INTERVAL_MIN):
            events.append(ScheduleEvent("scene_reset", float(m), {"interval_start": m}))
    events.append(ScheduleEvent("session_end", float(mode.duration_minutes)))
    order = {"session_start": 0, "scene_reset": 1, "misc_prompt": 2, "session_end": 3}
    events.sort(key=lambda e: (e.minute, order[e.kind]))
    return events


# ---------------------------------------------------------------------------
# Questionnaire instruments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MiscResponse:
    prompt_time: float  # minutes from session start
    value: int
    label: str


@dataclass(frozen=True)
class LikertResponse:
    value: int


def validate_misc(value: int, label: str, prompt_time: float = 0.0) -> MiscResponse:
    """Accept only in-range values whose label matches the severity table."""
    if not isinstance(value, int) or isinstance(value, bool):
        raise ResponseValidationError(f"MISC value must be an integer, got {value!r}")
    if value not in MISC_LABELS:
        raise ResponseValidationError(f"MISC value {value} outside 0-10")
    if label != MISC_LABELS[value]:
        raise ResponseValidationError(
            f"label {label!r} does not match the table entry for {value} "
            f"({MISC_LABELS[value]!r})")
    return MiscResponse(prompt_time=prompt_time, value=value, label=label)


def validate_likert(value: int) -> LikertResponse:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ResponseValidationError(f"Likert value must be an integer, got {value!r}")
    if not LIKERT_MIN <= value <= LIKERT_MAX:
        raise ResponseValidationError(
            f"Likert value {value} outside {LIKERT_MIN}-{LIKERT_MAX}")
    return LikertResponse(value=value)
