# Numerical and logging helpers shared by the apaths modules
