"""
GeoLab - Services
"""
