"""
Batch engine for category-first Buy It Again recommendations.
"""
