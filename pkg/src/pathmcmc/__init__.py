"""Function-space MCMC for diffusion paths."""
