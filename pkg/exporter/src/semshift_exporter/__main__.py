from .export import entrypoint

entrypoint()
