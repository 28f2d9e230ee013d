"""Perturbation plans, subsequence finders and the dichotomy-destroying constructions."""
