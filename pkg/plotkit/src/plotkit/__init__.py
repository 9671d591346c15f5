"""plotkit: figure rendering for servingbench report JSON."""

__version__ = "0.1.0"

from .render import (MissingSectionError, SchemaError, load_report,
                     plot_density, plot_profiles, plot_resilience)

__all__ = ["MissingSectionError", "SchemaError", "load_report",
           "plot_density", "plot_profiles", "plot_resilience"]
