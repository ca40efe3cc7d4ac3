# MaxSim evaluation package
