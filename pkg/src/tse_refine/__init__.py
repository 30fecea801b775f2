"""Human-in-the-loop target speech extraction with edit-mask refinement."""

__version__ = "0.1.0"
