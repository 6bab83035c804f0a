"""Desk-scale laboratory for long-tail classification losses."""

from .loss_core import (BACKGROUND, AcslConfig, acsl_grad, acsl_loss, acsl_weights, bce_grad, bce_loss,
                        sigmoid_probs)

__version__ = "0.1.0"
