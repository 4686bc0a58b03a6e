"""Functionally generated portfolios with stock characteristics: market
simulation, master-equation decomposition, arbitrage bounds and backtests."""

__version__ = "0.1.0"
