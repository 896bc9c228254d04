"""Voxel soft-robot simulation and damage-recovery evolution."""
