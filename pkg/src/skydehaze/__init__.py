"""Single-image dehazing toolkit.

Splits a hazy photograph into sky and non-sky regions, restores the
non-sky part with an improved dark-channel-prior algorithm, restores the
sky with a small convolutional network, fuses the two results, and scores
the output with four no-reference quality indices.

Image conventions used throughout:

* color image: ``(H, W, 3)`` float64 array, samples in ``[0, 1]``, RGB
* scalar map:  ``(H, W)`` float64 array (grayscale, dark channel,
  transmission, confidence)
* binary mask: ``(H, W)`` bool array
* label map:   ``(H, W)`` int32 array, labels ``1..K`` partition the image
"""

__version__ = "0.1.0"
