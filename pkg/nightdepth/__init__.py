"""
nightdepth - joint self-supervised nighttime image enhancement and monocular depth.
"""
__version__ = "0.1.0"
