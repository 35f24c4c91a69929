"""Init file for reinit_lab unit tests."""
