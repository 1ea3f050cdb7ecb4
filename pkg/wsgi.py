#!/usr/bin/env python3
"""
WSGI entry point for the report API (gunicorn wsgi:app)
"""

from app import app

if __name__ == "__main__":
    app.run()
