"""Generation branch: metaquery conditioning through a learned connector
and a small mask-conditioned diffusion inpainter.

``pipeline`` (conditioning, diffusion loss, inpainting) and ``pretrain``
(the three-stage curriculum) are imported as submodules to keep this
package importable from the model container without cycles.
"""

from .schedule import DiffusionSchedule
from .connector import Connector
from .denoiser import Denoiser

__all__ = ["DiffusionSchedule", "Connector", "Denoiser"]
