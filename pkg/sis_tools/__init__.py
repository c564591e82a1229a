"""Tools for simulating the SIS model with a randomly perturbed transmission rate."""
