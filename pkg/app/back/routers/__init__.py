"""
Routers package for the CrowdAttr API endpoints.

Each router exposes one group of services through RESTful endpoints.
"""
