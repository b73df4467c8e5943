"""mmWave FMCW SAR simulation and multi-object 3D reconstruction toolkit.

Synthesizes desk-scale SAR scans of multi-object scenes (with optional
UAV hover-vibration noise), turns them into depth images and point
clouds through two reconstruction pipelines, and scores results with
Chamfer / Earth Mover's distances.
"""

__version__ = "0.1.0"
