"""Init file for reinit_lab package."""
