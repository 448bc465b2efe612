"""
Core numerics: tensors, reverse-mode differentiation and the layer network
"""
