# Simulation studies and file I/O
