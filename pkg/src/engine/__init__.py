"""
仿真引擎模块
"""
