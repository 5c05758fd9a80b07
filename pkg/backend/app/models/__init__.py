"""
Pydantic models for configuration, wire records and reports exchanged between services.
"""
