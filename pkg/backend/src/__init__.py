"""
Knee osteoarthritis bioimpedance pipeline.
"""
