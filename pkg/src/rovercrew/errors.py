"""Exception types shared across the simulator modules."""

from __future__ import annotations


class SimError(Exception):
    """Base class for all domain errors; the CLI maps these to exit code 1."""


# --- world ---

class UnknownAgent(SimError):
    pass


# --- perception ---

class NonMonotoneTick(SimError):
    pass


# --- navmap ---

class DimensionMismatch(SimError):
    pass


class PoseOutsideGrid(SimError):
    pass


class ResolutionMismatch(SimError):
    pass


class CorruptPayload(SimError):
    pass


# --- planner ---

class GoalBlocked(SimError):
    pass


class StartUnreachable(SimError):
    pass


class DescentStalled(SimError):
    pass


# --- tasks ---

class TagNotSeen(SimError):
    pass


class RackUnreachable(SimError):
    pass


class IllegalTransition(SimError):
    pass


class LockFailedPermanently(SimError):
    pass


class ContainerOutOfRange(SimError):
    pass


# --- executive ---

class UnknownGoalKind(SimError):
    pass


class UnplannableGoal(SimError):
    pass


# --- harness ---

class ScenarioInvalid(SimError):
    pass


class CorruptTrace(SimError):
    pass
