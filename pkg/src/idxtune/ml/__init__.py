"""Learned components and the shared regression learner."""
