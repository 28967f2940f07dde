"""
Cross-cutting utilities: logging, error hierarchy and configuration models.
"""
