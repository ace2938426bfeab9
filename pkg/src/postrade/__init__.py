"""Position-aware single-asset backtesting with LLM trading agents."""

__version__ = "0.1.0"
