"""panoanno: automatic annotation engine for 360-degree equirectangular video.

Core pieces: seam-aware run-length mask algebra (panoanno.mask), padding /
patching / seam-recentering geometry (panoanno.geometry), a line-oriented
wire protocol with deterministic mock backends (panoanno.protocol,
panoanno.backends), language-agent helpers (panoanno.agents), first-frame
dense annotation with shift-consensus refinement (panoanno.sdr), the
coverage-gated per-frame refinement pipeline (panoanno.pipeline), a durable
text annotation store (panoanno.store), region/boundary quality metrics
(panoanno.metrics), the review HTTP service (panoanno.service) and the
command line front end (panoanno.cli).
"""

__version__ = "0.1.0"
