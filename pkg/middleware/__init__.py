"""Exception handlers registered by the FastAPI app."""
