"""
lxlab: 多语言版式文档理解（文本 + 版式 + 图像）的小规模实现
"""

__version__ = "0.1.0"
