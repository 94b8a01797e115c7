"""
NMP 推测一致性仿真 - 核心模块
"""

__version__ = "1.0.0"
__author__ = "NMP Coherence Team"
