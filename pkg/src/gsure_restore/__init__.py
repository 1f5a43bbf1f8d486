"""Single-image restoration with projected-GSURE training of an untrained CNN.

Modules:

* ``image``: PNG I/O, noise, PSNR
* ``kernels`` / ``linop``: blur kernels and the FFT degradation operator
* ``autodiff`` / ``network``: numpy autodiff, the generator network, Adam
* ``losses``: LS, back-projection and projected GSURE
* ``denoisers``: identity, TV and external-command denoisers
* ``solvers``: GSURE training, DIP, plug-and-play ADMM
* ``harness`` / ``cli``: scenarios, sweeps, reports and the command line
"""

__version__ = "0.1.0"

from .image import add_gaussian_noise, load_image, psnr, save_image
from .kernels import KernelSpec, build_kernel
from .linop import SpectralOperator, ml_estimate, sufficient_statistic
from .losses import GsureProbe, bp_loss, gsure_loss, ls_loss
from .network import NetConfig, network_init
from .solvers import AdmmConfig, TrainConfig, admm_pnp, train_dip, train_gsure

__all__ = [
    "AdmmConfig",
    "GsureProbe",
    "KernelSpec",
    "NetConfig",
    "SpectralOperator",
    "TrainConfig",
    "add_gaussian_noise",
    "admm_pnp",
    "bp_loss",
    "build_kernel",
    "gsure_loss",
    "load_image",
    "ls_loss",
    "ml_estimate",
    "network_init",
    "psnr",
    "save_image",
    "sufficient_statistic",
    "train_dip",
    "train_gsure",
]
