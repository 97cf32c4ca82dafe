"""Learning tactile feedback models for movement primitives.

Library layout:

- so3: unit-quaternion algebra and the SO(3)/so(3) maps
- canonical: shared second-order phase dynamics and phase kernels
- primitives: quaternion/position DMPs, fitting, unrolling, ZVC segmentation
- sensors: expected-sensor-trace models and deviation features
- feedback: coupling-target extraction and PMNN/FFNN/PCA feedback models
- training: RMSProp, NMSE, dataset splits, leave-one-demo-out protocol
- simulator: synthetic tilt-board scraping environment and closed-loop runs
- cli: the `dmpfb` pipeline commands
"""

__version__ = "0.1.0"
