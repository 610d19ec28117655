"""Rank-based change-point detection for the covariance of functional data."""
