"""AMP compressed sensing with structured denoisers and their minimax MSE curves."""
__version__ = "0.1.0"
