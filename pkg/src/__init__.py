# Lie algebroid path-space toolkit
# A-path homotopy, oracle groupoids, path-space symplectic checks and finite etale models

__version__ = '0.1.0'
