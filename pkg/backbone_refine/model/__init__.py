"""A small trainable refiner with invariant inputs and frame-transported outputs."""
