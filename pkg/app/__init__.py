# Robust explanation supervision package
__all__ = ["cli", "config", "trainer"]
