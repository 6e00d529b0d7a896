"""Image codecs, dataset layout, preprocessing and the synthetic corpus."""
