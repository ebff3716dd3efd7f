"""
Magnetic-field aided inertial navigation pipeline (flows, orchestration, CLI).
"""
