#! /usr/bin/env python
"""Shared configuration constants, overwritten from the XML configuration file"""

version = ""
configFile = ""

# Damped Newton
tau = 1.0
tol = 1e-9
maxIter = 20
backend = "fft"
sampleMode = "nearest"
simplifiedLinearization = False

# Inner solvers
innerTol = 1e-4
innerMax = 1000
gmresRestart = 10

# Densities
densityFloor = 0.1

# Synthetic benchmark family
synthK = 80.0
synthGamma = 1
synthAlpha = 0.5
synthRho = 1

# Stability probe
seed = 0
probeTol = 1e-5
probeMaxIter = 50

# Runs
outDir = ""
singleThread = False
