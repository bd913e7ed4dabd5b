"""Tag, copy or predict: weakly-supervised key information extraction from OCR results."""
