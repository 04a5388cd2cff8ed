"""Allow `python -m ppelm`."""

from .cli import entrypoint

entrypoint()
