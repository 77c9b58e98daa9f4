"""
Python tests for the ecgtcn package.
"""
