"""Bohl Dichotomy Toolkit - Bohl exponents and dichotomies of linear difference equations."""
