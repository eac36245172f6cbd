"""Priors, MCMC kernel, IBIS with adaptive tempering, and proposal tuning."""
