# zicp: random-effects compound Poisson models for zero-inflated survey data
