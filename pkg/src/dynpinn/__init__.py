"""PINN solver and experiment harness for second-order-in-time PDEs."""

import torch

torch.set_default_dtype(torch.float64)

__version__ = "0.1.0"
