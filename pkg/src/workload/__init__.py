"""
负载与轨迹模块
"""
