"""
Helpers shared by the numerical modules and the flows.
"""
