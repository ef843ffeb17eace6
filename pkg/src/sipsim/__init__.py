"""sipsim: bit-exact functional and cycle/energy models for serial inner-product DNN tiles."""

__version__ = "0.1.0"
