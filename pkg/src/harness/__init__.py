"""
实验编排与报告模块
"""
