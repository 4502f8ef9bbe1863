"""Bird's-eye-view motion-grid perception on synthetic LiDAR.

Scene simulation, voxelized multi-frame input, a spatio-temporal pyramid
network with cell-classification / motion / state heads, consistency-aware
training, and the matching evaluation protocol, all on float64 numpy.
"""

__version__ = "0.1.0"
