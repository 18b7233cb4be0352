"""
Theory Oracles Package
Exact enumeration, Monte Carlo estimators and trust-region checks on small instances
"""

__all__ = ['scenarios', 'estimators', 'trust_region']
