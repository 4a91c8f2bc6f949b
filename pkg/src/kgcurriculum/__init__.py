"""Knowledge-graph grounded reasoning-task synthesis and evaluation toolkit.

Submodules: graph loading and path sampling, LLM-backed QA generation with
quality and correctness filtering, benchmark decontamination and stratified
construction, and evaluation with voting, refinement, difficulty estimation,
and hop-level trace alignment.
"""

__version__ = "0.1.0"
