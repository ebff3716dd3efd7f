"""
Numerical modules: attitude algebra, field model, strapdown INS, filter,
simulator, dataset I/O and evaluation.
"""
