"""Variance schedules and the forward noising process over residue frames."""
