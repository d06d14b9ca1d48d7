"""
CT intensity harmonization and region-of-interest cropping
"""
