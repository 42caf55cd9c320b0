"""
GeoLab - Domain Models
"""
