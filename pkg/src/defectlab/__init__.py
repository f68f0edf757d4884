"""defectlab: a desk-scale unified industrial anomaly toolkit.

One shared model family covers three tasks on a procedurally generated
benchmark of textured surfaces: pixel-level defect segmentation, region-grounded
natural-language understanding, and mask-guided defect generation. Submodules:

- ``synthbench``   procedural benchmark generator (images, masks, answers)
- ``expert``       dense segmentation expert (patch encoder + FPN + decoder)
- ``region``       region tokens, geometry summary, task projections, evidence
- ``backbone``     small decoder-only language backbone with token injection
- ``generation``   connector + mask-conditioned diffusion inpainter
- ``training``     pretraining stages, unified joint training, EMA balancing
- ``metrics``      segmentation / text / image-fidelity metrics and reports
- ``ablation``     region-mode, conditioning, and strategy ablation harness
- ``cli``          the ``defectlab`` command-line entry point
"""

__version__ = "0.1.0"
