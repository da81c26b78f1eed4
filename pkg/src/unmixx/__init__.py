"""Two-singer separation toolkit: STFT front end, band-split features, cross-source
attention, a penalised training objective with analytic gradients, musically
informed mixing and segment-aware evaluation metrics."""

__version__ = "0.1.0"
