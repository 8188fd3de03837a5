"""Gold-standard posterior sampling and diffusion posterior sampling benchmarks for sparse Levy-process signals."""

__version__ = "0.1.0"
