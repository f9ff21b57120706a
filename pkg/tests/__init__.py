"""
Test suite for the ncsolve solver toolkit
"""
