"""Progressive growing of GANs on a small numpy autodiff core."""

__version__ = "0.1.0"
