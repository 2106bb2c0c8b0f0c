"""
Business logic for the flow engine: one module per engine component.
"""
