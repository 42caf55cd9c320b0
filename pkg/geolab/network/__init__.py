"""
GeoLab - Network
Layout encoder and prediction heads
"""
