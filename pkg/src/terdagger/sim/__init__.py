"""Peg-in-slot insertion simulator used to exercise the correction loop."""

from .episode import ControllerConfig, EpisodeLog, Mode, Outcome, ResidualLookup, run_episode
from .policy import PolicyConfig, ScriptedBasePolicy, corrective_demo
from .scene import SceneConfig, contact_force, contact_wrench

__all__ = [
    "ControllerConfig", "EpisodeLog", "Mode", "Outcome", "ResidualLookup", "run_episode",
    "PolicyConfig", "ScriptedBasePolicy", "corrective_demo",
    "SceneConfig", "contact_force", "contact_wrench",
]
