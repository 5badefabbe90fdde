"""Grasping moving objects in dense clutter on a simulated conveyor belt."""

__version__ = "0.1.0"
