"""
配置管理模块
"""