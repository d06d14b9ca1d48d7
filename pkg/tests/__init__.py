"""
Test suite for the NPC contouring toolkit
"""
