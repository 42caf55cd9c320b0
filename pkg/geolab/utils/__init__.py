"""
GeoLab - Utility Package
"""
