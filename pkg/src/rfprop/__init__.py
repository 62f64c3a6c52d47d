"""Radio propagation environment modeling and RSS prediction.

Builds sparse 3D occupancy grids from raytraced LiDAR scans, extracts
link-level propagation features (visibility, obstruction, ground
reflection, knife-edge diffraction), fits physics-based path loss
models, trains small neural predictors offline and online, and renders
signal strength maps over explored space.
"""

__version__ = "0.1.0"

SPEED_OF_LIGHT = 299792458.0
