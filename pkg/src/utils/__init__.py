"""
工具模块
"""