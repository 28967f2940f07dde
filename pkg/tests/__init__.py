"""
Tests for zakdd.
"""
