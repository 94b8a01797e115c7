"""
一致性协议模块：签名与CPU侧校验
"""
