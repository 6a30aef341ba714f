"""Autodiff, schedules, diffusion process, training and experiment orchestration."""
