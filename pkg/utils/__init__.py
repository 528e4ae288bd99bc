"""Exposure mappings under network interference: simulation, a graph convolutional
autoencoder, a double machine learning validity test and direct-effect estimation."""
