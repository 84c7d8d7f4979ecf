"""Two-dimensional simulation of an active VOC sampler that inhales and exhales."""
