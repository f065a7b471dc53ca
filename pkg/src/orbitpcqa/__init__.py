"""No-reference point cloud quality assessment from orbit-captured videos.

Pipeline: parse a colored point cloud, render three orbital video sequences
around its mean center, sample fixed-stride clips, regress quality scores
with a small 3D-convolutional residual network, and evaluate predictions
with rank/linear correlation criteria plus a pairwise significance test.
"""

__version__ = "0.1.0"
