"""
Collaboration Topologies Package
Sequential (Think-Solve) handoff and parallel voting credit assignment
"""

__all__ = ['sequential', 'voting']
