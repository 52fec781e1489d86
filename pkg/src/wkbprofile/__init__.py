"""Leading-profile construction for multiphase boundary geometric optics."""
